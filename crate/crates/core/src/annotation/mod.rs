//! Detection dataset model and the COCO / YOLO / VOC interchange formats.
//!
//! Coordinates are kept exactly as read: out-of-bounds boxes survive
//! ingestion and are clipped only by the rasterizer and the evaluator.

mod coco;
mod voc;
mod yolo;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use coco::{parse_coco, serialize_coco};
pub(crate) use coco::byte_offset as json_byte_offset;
pub use voc::{parse_voc, parse_voc_dir, serialize_voc, VocTree};
pub use yolo::{parse_yolo, parse_yolo_labels, read_yolo_classes, serialize_yolo, YoloTree};

/// Name of the class list file written next to YOLO labels and VOC XML.
pub const CLASS_LIST_FILE: &str = "classes.txt";

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("unsupported in {format}: {message}")]
    Unsupported { format: Format, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AnnotationError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotationError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AnnotationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Coco,
    Yolo,
    Voc,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Coco => "coco",
            Format::Yolo => "yolo",
            Format::Voc => "voc",
        })
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coco" => Ok(Format::Coco),
            "yolo" => Ok(Format::Yolo),
            "voc" => Ok(Format::Voc),
            other => Err(format!("unknown annotation format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

impl Category {
    pub fn new(id: u32, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
        }
    }
}

/// Axis-aligned box in pixels, corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    /// Component-wise equality within `tol`.
    pub fn approx_eq(&self, other: &BBox, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && (self.w - other.w).abs() <= tol
            && (self.h - other.h).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Object extent. Polygons may self-intersect; they are filled even-odd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Region {
    Box(BBox),
    Polygon { vertices: Vec<Point> },
}

impl Region {
    pub fn polygon(vertices: Vec<Point>) -> Self {
        Region::Polygon { vertices }
    }

    /// Axis-aligned bounding box of the region.
    pub fn bounds(&self) -> BBox {
        match self {
            Region::Box(b) => *b,
            Region::Polygon { vertices } => {
                let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
                let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in vertices {
                    x0 = x0.min(p.x);
                    y0 = y0.min(p.y);
                    x1 = x1.max(p.x);
                    y1 = y1.max(p.y);
                }
                BBox::new(x0, y0, x1 - x0, y1 - y0)
            }
        }
    }

    /// Enclosed area: `w*h` for boxes, shoelace magnitude for polygons.
    pub fn area(&self) -> f64 {
        match self {
            Region::Box(b) => b.area(),
            Region::Polygon { vertices } => {
                let n = vertices.len();
                let twice: f64 = (0..n)
                    .map(|i| {
                        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                        a.x * b.y - b.x * a.y
                    })
                    .sum();
                twice.abs() / 2.0
            }
        }
    }

    pub fn is_polygon(&self) -> bool {
        matches!(self, Region::Polygon { .. })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match self {
            Region::Box(b) if !b.is_valid() => Err(format!(
                "box must have finite coordinates and positive size, got {b:?}"
            )),
            Region::Polygon { vertices } if vertices.len() < 3 => Err(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )),
            Region::Polygon { vertices }
                if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) =>
            {
                Err("polygon has non-finite vertex".to_string())
            }
            _ => Ok(()),
        }
    }

    pub fn approx_eq(&self, other: &Region, tol: f64) -> bool {
        match (self, other) {
            (Region::Box(a), Region::Box(b)) => a.approx_eq(b, tol),
            (Region::Polygon { vertices: a }, Region::Polygon { vertices: b }) => {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(p, q)| (p.x - q.x).abs() <= tol && (p.y - q.y).abs() <= tol)
            }
            _ => false,
        }
    }
}

/// One annotated object. `score` is only present on predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub category_id: u32,
    pub region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Ground truth that evaluation neither rewards nor penalizes.
    #[serde(default)]
    pub ignore: bool,
}

impl Instance {
    pub fn new(category_id: u32, region: Region) -> Self {
        Self {
            category_id,
            region,
            score: None,
            ignore: false,
        }
    }

    pub fn with_box(category_id: u32, x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(category_id, Region::Box(BBox::new(x, y, w, h)))
    }

    pub fn ignored(mut self) -> Self {
        self.ignore = true;
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    /// Same category, flags and score, region coordinates within `tol`.
    pub fn approx_eq(&self, other: &Instance, tol: f64) -> bool {
        self.category_id == other.category_id
            && self.ignore == other.ignore
            && match (self.score, other.score) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() <= tol,
                _ => false,
            }
            && self.region.approx_eq(&other.region, tol)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl ImageRecord {
    pub fn new(id: u64, file: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id,
            file: file.into(),
            width,
            height,
            instances: Vec::new(),
            split: Split::Train,
            tags: BTreeSet::new(),
        }
    }

    pub fn with_instances(mut self, instances: Vec<Instance>) -> Self {
        self.instances = instances;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub categories: Vec<Category>,
    pub images: Vec<ImageRecord>,
    pub format: Option<Format>,
}

impl DatasetManifest {
    pub fn new(categories: Vec<Category>, images: Vec<ImageRecord>) -> Self {
        Self {
            categories,
            images,
            format: None,
        }
    }

    pub fn category(&self, id: u32) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn instance_count(&self) -> usize {
        self.images.iter().map(|im| im.instances.len()).sum()
    }

    /// Categories sorted by id; the YOLO/VOC class index is the position here.
    pub fn sorted_categories(&self) -> Vec<Category> {
        let mut cats = self.categories.clone();
        cats.sort_by_key(|c| c.id);
        cats
    }

    pub fn validate(&self) -> Result<()> {
        let mut cat_ids = HashSet::new();
        for cat in &self.categories {
            if cat.name.trim().is_empty() {
                return Err(AnnotationError::Validation(format!(
                    "category {} has an empty name",
                    cat.id
                )));
            }
            if !cat_ids.insert(cat.id) {
                return Err(AnnotationError::Validation(format!(
                    "duplicate category id {}",
                    cat.id
                )));
            }
        }
        let mut image_ids = HashSet::new();
        for image in &self.images {
            if !image_ids.insert(image.id) {
                return Err(AnnotationError::Validation(format!(
                    "duplicate image id {}",
                    image.id
                )));
            }
            if image.width == 0 || image.height == 0 {
                return Err(AnnotationError::Validation(format!(
                    "image {} has zero dimension {}x{}",
                    image.id, image.width, image.height
                )));
            }
            for inst in &image.instances {
                if !cat_ids.contains(&inst.category_id) {
                    return Err(AnnotationError::Validation(format!(
                        "image {} references unknown category id {}",
                        image.id, inst.category_id
                    )));
                }
                inst.region.validate().map_err(|m| {
                    AnnotationError::Validation(format!("image {}: {m}", image.id))
                })?;
                if let Some(s) = inst.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(AnnotationError::Validation(format!(
                            "image {}: score {s} outside [0, 1]",
                            image.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Equality up to coordinate tolerance, ignoring instance order and the
    /// provenance tag.
    pub fn semantic_eq(&self, other: &DatasetManifest, tol: f64) -> bool {
        if self.sorted_categories() != other.sorted_categories() {
            return false;
        }
        if self.images.len() != other.images.len() {
            return false;
        }
        let theirs: BTreeMap<u64, &ImageRecord> =
            other.images.iter().map(|im| (im.id, im)).collect();
        self.images.iter().all(|a| {
            let Some(b) = theirs.get(&a.id) else {
                return false;
            };
            a.file == b.file
                && a.width == b.width
                && a.height == b.height
                && a.split == b.split
                && a.tags == b.tags
                && instances_match(&a.instances, &b.instances, tol)
        })
    }
}

fn instances_match(a: &[Instance], b: &[Instance], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        match (0..b.len()).find(|&j| !used[j] && x.approx_eq(&b[j], tol)) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

/// Serialized form of a manifest in one of the interchange formats.
#[derive(Debug, Clone, PartialEq)]
pub enum Serialized {
    Coco(String),
    Yolo(YoloTree),
    Voc(VocTree),
}

pub fn serialize(manifest: &DatasetManifest, format: Format) -> Result<Serialized> {
    match format {
        Format::Coco => serialize_coco(manifest).map(Serialized::Coco),
        Format::Yolo => serialize_yolo(manifest).map(Serialized::Yolo),
        Format::Voc => serialize_voc(manifest).map(Serialized::Voc),
    }
}

pub(crate) fn read_class_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub(crate) fn file_stem(file: &str) -> &str {
    let name = file.rsplit(['/', '\\']).next().unwrap_or(file);
    match name.rfind('.') {
        Some(0) | None => name,
        Some(i) => &name[..i],
    }
}
