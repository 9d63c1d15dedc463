use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{DatasetManifest, Split};

/// Histogram bucket `[lower, upper)` of region bounding-box area in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: u64,
    pub instances: u64,
    pub instances_per_category: BTreeMap<u32, u64>,
    pub images_per_split: BTreeMap<Split, u64>,
    pub instances_per_split: BTreeMap<Split, u64>,
    /// Power-of-two buckets, ascending, empty buckets omitted. Areas below 1
    /// fall in `[0, 1)`.
    pub area_histogram: Vec<AreaBucket>,
}

/// Exponent `k` with `2^k <= area < 2^(k+1)`, or `None` for `area < 1`.
fn bucket_exponent(area: f64) -> Option<i32> {
    if !(area >= 1.0) {
        return None;
    }
    let mut k = area.log2().floor() as i32;
    // log2 can land one off near exact powers of two.
    if 2f64.powi(k) > area {
        k -= 1;
    } else if 2f64.powi(k + 1) <= area {
        k += 1;
    }
    Some(k)
}

pub fn stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut per_category: BTreeMap<u32, u64> =
        manifest.categories.iter().map(|c| (c.id, 0)).collect();
    let mut images_per_split: BTreeMap<Split, u64> = Split::ALL.iter().map(|&s| (s, 0)).collect();
    let mut instances_per_split = images_per_split.clone();
    let mut buckets: BTreeMap<Option<i32>, u64> = BTreeMap::new();

    for image in &manifest.images {
        *images_per_split.entry(image.split).or_default() += 1;
        *instances_per_split.entry(image.split).or_default() += image.instances.len() as u64;
        for inst in &image.instances {
            *per_category.entry(inst.category_id).or_default() += 1;
            *buckets
                .entry(bucket_exponent(inst.region.bounds().area()))
                .or_default() += 1;
        }
    }

    let area_histogram = buckets
        .into_iter()
        .map(|(k, count)| match k {
            None => AreaBucket {
                lower: 0.0,
                upper: 1.0,
                count,
            },
            Some(k) => AreaBucket {
                lower: 2f64.powi(k),
                upper: 2f64.powi(k + 1),
                count,
            },
        })
        .collect();

    DatasetStats {
        images: manifest.images.len() as u64,
        instances: manifest.instance_count() as u64,
        instances_per_category: per_category,
        images_per_split,
        instances_per_split,
        area_histogram,
    }
}
