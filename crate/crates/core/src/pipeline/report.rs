use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Configuration echo. Everything here influences output bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub input: String,
    pub format: String,
    pub images: String,
    pub mode: String,
    pub probability: f64,
    pub seed: u64,
    pub categories: Option<Vec<u32>>,
    pub include_ignore: bool,
    pub codec: String,
}

/// Per-image outcome, keyed by manifest image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: u64,
    pub source: String,
    pub output: Option<String>,
    pub grayed: Vec<usize>,
    pub gray_pixels: usize,
    /// SHA-256 of the encoded output file.
    pub sha256: Option<String>,
    pub error: Option<String>,
}

/// Details of one run that do not influence its results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub out: String,
    pub workers: usize,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub toolkit_version: String,
    pub config: ConfigEcho,
    pub images_total: usize,
    pub processed: usize,
    pub failed: usize,
    pub instances_grayed: u64,
    pub grayed_per_category: BTreeMap<u32, u64>,
    pub images: Vec<ImageEntry>,
    pub execution: Execution,
}

impl RunReport {
    /// 0 when every image was written, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.failed == 0 {
            0
        } else {
            2
        }
    }

    /// Compares everything except [`Execution`].
    pub fn same_results(&self, other: &RunReport) -> bool {
        let strip = |r: &RunReport| RunReport {
            execution: Execution {
                out: String::new(),
                workers: 0,
                wall_time_ms: 0,
            },
            ..r.clone()
        };
        strip(self) == strip(other)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
