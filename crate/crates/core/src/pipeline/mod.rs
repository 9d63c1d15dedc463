//! Batch augmentation of a whole dataset.
//!
//! Images are processed on a fixed-size worker pool; results are reduced in
//! manifest order, so output bytes and the report do not depend on the
//! worker count. Every file is written to a temporary sibling and renamed
//! into place.

mod report;
mod stats;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::codecs::jpeg::JpegEncoder;
use image::ImageEncoder;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::annotation::{
    self, parse_coco, parse_voc_dir, parse_yolo, read_yolo_classes, AnnotationError,
    DatasetManifest, Format, ImageRecord, Serialized,
};
use crate::engine::{apply_saga, AugmentationPolicy, ImageBuffer};

pub use report::{ConfigEcho, Execution, ImageEntry, RunReport};
pub use stats::{stats, AreaBucket, DatasetStats};

/// Output manifest file name for COCO input.
pub const COCO_OUTPUT: &str = "annotations.json";
pub const REPORT_FILE: &str = "report.json";
pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";
pub const VOC_DIR: &str = "annotations";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] AnnotationError),
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Png,
    Jpeg(u8),
}

impl Codec {
    pub fn extension(&self) -> &'static str {
        match self {
            Codec::Png => "png",
            Codec::Jpeg(_) => "jpg",
        }
    }
}

impl std::fmt::Display for Codec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Codec::Png => f.write_str("png"),
            Codec::Jpeg(q) => write!(f, "jpeg:{q}"),
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;

    /// `png`, `jpeg` (quality 90) or `jpeg:<1..=100>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s.eq_ignore_ascii_case("png") => Ok(Codec::Png),
            None if s.eq_ignore_ascii_case("jpeg") || s.eq_ignore_ascii_case("jpg") => {
                Ok(Codec::Jpeg(90))
            }
            Some((kind, q)) if kind.eq_ignore_ascii_case("jpeg") || kind.eq_ignore_ascii_case("jpg") => {
                let q: u8 = q.parse().map_err(|_| format!("invalid JPEG quality '{q}'"))?;
                Ok(Codec::Jpeg(q))
            }
            _ => Err(format!("unknown codec '{s}' (expected png or jpeg[:q])")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// COCO: the JSON file. YOLO: the label directory. VOC: the XML directory.
    pub input: PathBuf,
    pub format: Format,
    /// Root that manifest file paths are relative to.
    pub images: PathBuf,
    pub out: PathBuf,
    pub policy: AugmentationPolicy,
    pub workers: usize,
    pub codec: Codec,
    pub force: bool,
    /// Class names for YOLO/VOC; read from `classes.txt` when absent.
    pub class_names: Option<Vec<String>>,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, format: Format, images: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            format,
            images: images.into(),
            out: out.into(),
            policy: AugmentationPolicy::saga(0),
            workers: 1,
            codec: Codec::Png,
            force: false,
            class_names: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::Config("worker count must be at least 1".into()));
        }
        if let Codec::Jpeg(q) = self.codec {
            if !(1..=100).contains(&q) {
                return Err(PipelineError::Config(format!(
                    "JPEG quality must be in [1, 100], got {q}"
                )));
            }
        }
        Ok(())
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            input: self.input.display().to_string(),
            format: self.format.to_string(),
            images: self.images.display().to_string(),
            mode: self.policy.mode().to_string(),
            probability: self.policy.probability(),
            seed: self.policy.seed(),
            categories: self.policy.category_filter().map(|s| s.iter().copied().collect()),
            include_ignore: self.policy.include_ignore(),
            codec: self.codec.to_string(),
        }
    }
}

/// Loads a manifest in any supported format.
pub fn load_manifest(
    format: Format,
    input: &Path,
    images: &Path,
    class_names: Option<&[String]>,
) -> Result<DatasetManifest, AnnotationError> {
    match format {
        Format::Coco => {
            let text = fs::read_to_string(input).map_err(|e| AnnotationError::Io {
                path: input.to_path_buf(),
                source: e,
            })?;
            parse_coco(&text)
        }
        Format::Yolo => {
            let names = match class_names {
                Some(n) => n.to_vec(),
                None => read_yolo_classes(input)?,
            };
            parse_yolo(input, images, &names)
        }
        Format::Voc => parse_voc_dir(input, class_names),
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .tempfile_in(dir)
        .map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn encode(image: ImageBuffer, codec: Codec) -> Result<Vec<u8>, image::ImageError> {
    let (w, h) = (image.width(), image.height());
    let raw = image.into_raw();
    let mut bytes = Vec::new();
    match codec {
        Codec::Png => image::codecs::png::PngEncoder::new(Cursor::new(&mut bytes)).write_image(
            &raw,
            w,
            h,
            image::ExtendedColorType::Rgb8,
        )?,
        Codec::Jpeg(q) => JpegEncoder::new_with_quality(Cursor::new(&mut bytes), q).write_image(
            &raw,
            w,
            h,
            image::ExtendedColorType::Rgb8,
        )?,
    }
    Ok(bytes)
}

pub fn load_image(path: &Path) -> Result<ImageBuffer, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(img.to_rgb8().into())
}

fn output_file(file: &str, codec: Codec) -> String {
    let path = Path::new(file).with_extension(codec.extension());
    path.to_string_lossy().replace('\\', "/")
}

fn dir_is_nonempty(dir: &Path) -> bool {
    fs::read_dir(dir).is_ok_and(|mut it| it.next().is_some())
}

struct Processed {
    entry: ImageEntry,
    record: Option<ImageRecord>,
}

fn process_one(record: &ImageRecord, config: &PipelineConfig, out_images: &Path) -> Processed {
    let output = output_file(&record.file, config.codec);
    let result = (|| -> Result<(Vec<u8>, crate::engine::AppliedReport), String> {
        let image = load_image(&config.images.join(&record.file))?;
        if (image.width(), image.height()) != (record.width, record.height) {
            return Err(format!(
                "decoded size {}x{} differs from manifest {}x{}",
                image.width(),
                image.height(),
                record.width,
                record.height
            ));
        }
        let (augmented, applied) = apply_saga(&image, &record.instances, &config.policy, record.id);
        let bytes = encode(augmented, config.codec).map_err(|e| e.to_string())?;
        write_atomic(&out_images.join(&output), &bytes).map_err(|e| e.to_string())?;
        Ok((bytes, applied))
    })();
    match result {
        Ok((bytes, applied)) => {
            let mut rec = record.clone();
            rec.file = output.clone();
            Processed {
                entry: ImageEntry {
                    image_id: record.id,
                    source: record.file.clone(),
                    output: Some(output),
                    grayed: applied.grayed,
                    gray_pixels: applied.gray_pixels,
                    sha256: Some(hex(&Sha256::digest(&bytes))),
                    error: None,
                },
                record: Some(rec),
            }
        }
        Err(error) => Processed {
            entry: ImageEntry {
                image_id: record.id,
                source: record.file.clone(),
                output: None,
                grayed: Vec::new(),
                gray_pixels: 0,
                sha256: None,
                error: Some(error),
            },
            record: None,
        },
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(manifest: &DatasetManifest, format: Format, out: &Path) -> Result<(), PipelineError> {
    match annotation::serialize(manifest, format)? {
        Serialized::Coco(text) => write_atomic(&out.join(COCO_OUTPUT), text.as_bytes()),
        Serialized::Yolo(tree) => {
            let dir = out.join(LABELS_DIR);
            let mut classes = tree.class_names.join("\n");
            classes.push('\n');
            write_atomic(&dir.join(annotation::CLASS_LIST_FILE), classes.as_bytes())?;
            for (stem, text) in &tree.labels {
                write_atomic(&dir.join(format!("{stem}.txt")), text.as_bytes())?;
            }
            Ok(())
        }
        Serialized::Voc(tree) => {
            let dir = out.join(VOC_DIR);
            let mut classes = tree.class_names.join("\n");
            classes.push('\n');
            write_atomic(&dir.join(annotation::CLASS_LIST_FILE), classes.as_bytes())?;
            for (name, xml) in &tree.documents {
                write_atomic(&dir.join(name), xml.as_bytes())?;
            }
            Ok(())
        }
    }
}

/// Augments every image of the input dataset and writes the augmented
/// images, the rewritten manifest and `report.json` under `config.out`.
///
/// Per-image failures are recorded and do not stop the batch. Configuration,
/// manifest and output-collision errors abort before anything is written.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    let manifest = load_manifest(
        config.format,
        &config.input,
        &config.images,
        config.class_names.as_deref(),
    )?;
    if !config.force && dir_is_nonempty(&config.out) {
        return Err(PipelineError::OutputExists(config.out.clone()));
    }
    let mut seen = HashSet::new();
    for image in &manifest.images {
        let out = output_file(&image.file, config.codec);
        if !seen.insert(out.clone()) {
            return Err(PipelineError::Config(format!(
                "two images map to the same output file '{out}'"
            )));
        }
    }
    // Fail fast on manifests the output format cannot hold.
    annotation::serialize(&manifest, config.format)?;

    let out_images = config.out.join(IMAGES_DIR);
    fs::create_dir_all(&out_images).map_err(io_err(&out_images))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut processed: Vec<Processed> = pool.install(|| {
        manifest
            .images
            .par_iter()
            .map(|record| process_one(record, config, &out_images))
            .collect()
    });
    processed.sort_by_key(|p| p.entry.image_id);

    let mut grayed_per_category: BTreeMap<u32, u64> = BTreeMap::new();
    let mut instances_grayed = 0u64;
    let mut records = Vec::new();
    let mut entries = Vec::with_capacity(processed.len());
    for p in processed {
        if let Some(rec) = &p.record {
            for &i in &p.entry.grayed {
                *grayed_per_category
                    .entry(rec.instances[i].category_id)
                    .or_default() += 1;
                instances_grayed += 1;
            }
        }
        records.extend(p.record);
        entries.push(p.entry);
    }

    let out_manifest = DatasetManifest {
        categories: manifest.categories.clone(),
        images: records,
        format: Some(config.format),
    };
    write_manifest(&out_manifest, config.format, &config.out)?;

    let processed_count = entries.iter().filter(|e| e.error.is_none()).count();
    let report = RunReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.echo(),
        images_total: manifest.images.len(),
        processed: processed_count,
        failed: entries.len() - processed_count,
        instances_grayed,
        grayed_per_category,
        images: entries,
        execution: Execution {
            out: config.out.display().to_string(),
            workers: config.workers,
            wall_time_ms: started.elapsed().as_millis() as u64,
        },
    };
    write_atomic(&config.out.join(REPORT_FILE), report.to_json().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_parsing() {
        assert_eq!("png".parse::<Codec>().unwrap(), Codec::Png);
        assert_eq!("jpeg:75".parse::<Codec>().unwrap(), Codec::Jpeg(75));
        assert_eq!("jpeg".parse::<Codec>().unwrap(), Codec::Jpeg(90));
        assert!("gif".parse::<Codec>().is_err());
        assert!("jpeg:abc".parse::<Codec>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::new("a", Format::Coco, "b", "c");
        c.validate().unwrap();
        c.workers = 0;
        assert!(c.validate().is_err());
        c.workers = 2;
        c.codec = Codec::Jpeg(0);
        assert!(c.validate().is_err());
        c.codec = Codec::Jpeg(101);
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_names() {
        assert_eq!(output_file("night/a.jpg", Codec::Png), "night/a.png");
        assert_eq!(output_file("b.png", Codec::Jpeg(80)), "b.jpg");
    }
}
