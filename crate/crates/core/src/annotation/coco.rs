use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AnnotationError, BBox, Category, DatasetManifest, Format, ImageRecord, Instance, Point,
    Region, Result, Split,
};

#[derive(Deserialize)]
struct CocoIn {
    images: Vec<CocoImageIn>,
    annotations: Vec<CocoAnnotationIn>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImageIn {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(default)]
    split: Option<String>,
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Deserialize)]
struct CocoAnnotationIn {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(default)]
    ignore: u8,
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

#[derive(Serialize)]
struct CocoOut<'a> {
    images: Vec<CocoImageOut<'a>>,
    annotations: Vec<CocoAnnotationOut>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize)]
struct CocoImageOut<'a> {
    id: u64,
    file_name: &'a str,
    width: u32,
    height: u32,
    split: &'static str,
    #[serde(skip_serializing_if = "BTreeSet::is_empty")]
    tags: &'a BTreeSet<String>,
}

#[derive(Serialize)]
struct CocoAnnotationOut {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    area: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<Vec<Vec<f64>>>,
    iscrowd: u8,
}

/// Parses the COCO subset: `images`, `annotations` (bbox plus optional
/// polygon segmentation) and `categories`.
///
/// `iscrowd` or a non-zero `ignore` marks an instance as ignored. Images may
/// carry `split` and `tags` extension fields; both are optional.
pub fn parse_coco(json_text: &str) -> Result<DatasetManifest> {
    let raw: CocoIn = serde_json::from_str(json_text).map_err(|e| AnnotationError::Json {
        offset: byte_offset(json_text, e.line(), e.column()),
        message: e.to_string(),
    })?;

    let categories: Vec<Category> = raw
        .categories
        .into_iter()
        .map(|c| Category::new(c.id, c.name))
        .collect();

    let mut images = Vec::with_capacity(raw.images.len());
    let mut index_of = HashMap::with_capacity(raw.images.len());
    for im in raw.images {
        let split = match im.split.as_deref() {
            None => Split::Train,
            Some(s) => s.parse().map_err(AnnotationError::Validation)?,
        };
        index_of.insert(im.id, images.len());
        let mut record = ImageRecord::new(im.id, im.file_name, im.width, im.height);
        record.split = split;
        record.tags = im.tags.into_iter().collect();
        images.push(record);
    }

    for ann in raw.annotations {
        let Some(&idx) = index_of.get(&ann.image_id) else {
            return Err(AnnotationError::Validation(format!(
                "annotation references unknown image id {}",
                ann.image_id
            )));
        };
        let [x, y, w, h] = ann.bbox;
        let region = ann
            .segmentation
            .as_ref()
            .and_then(single_polygon)
            .unwrap_or(Region::Box(BBox::new(x, y, w, h)));
        let mut inst = Instance::new(ann.category_id, region);
        inst.ignore = ann.iscrowd != 0 || ann.ignore != 0;
        images[idx].instances.push(inst);
    }

    let manifest = DatasetManifest {
        categories,
        images,
        format: Some(Format::Coco),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// A segmentation holding exactly one polygon ring becomes a polygon region.
/// RLE masks and multi-part polygons fall back to the bbox.
fn single_polygon(seg: &Value) -> Option<Region> {
    let rings = seg.as_array()?;
    if rings.len() != 1 {
        return None;
    }
    let coords: Vec<f64> = rings[0]
        .as_array()?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<_>>()?;
    if coords.len() < 6 || coords.len() % 2 != 0 {
        return None;
    }
    Some(Region::polygon(
        coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
    ))
}

pub fn serialize_coco(manifest: &DatasetManifest) -> Result<String> {
    manifest.validate()?;
    let mut annotations = Vec::with_capacity(manifest.instance_count());
    for image in &manifest.images {
        for inst in &image.instances {
            let b = inst.region.bounds();
            let segmentation = match &inst.region {
                Region::Box(_) => None,
                Region::Polygon { vertices } => {
                    Some(vec![vertices.iter().flat_map(|p| [p.x, p.y]).collect()])
                }
            };
            annotations.push(CocoAnnotationOut {
                id: annotations.len() as u64 + 1,
                image_id: image.id,
                category_id: inst.category_id,
                bbox: [b.x, b.y, b.w, b.h],
                area: inst.region.area(),
                segmentation,
                iscrowd: u8::from(inst.ignore),
            });
        }
    }
    let doc = CocoOut {
        images: manifest
            .images
            .iter()
            .map(|im| CocoImageOut {
                id: im.id,
                file_name: &im.file,
                width: im.width,
                height: im.height,
                split: im.split.as_str(),
                tags: &im.tags,
            })
            .collect(),
        annotations,
        categories: manifest
            .categories
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc).expect("COCO document serializes"))
}

/// serde_json reports 1-based line and column; convert to a byte offset.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
