use std::fs;
use std::path::Path;

use super::{
    file_stem, read_class_list, AnnotationError, BBox, Category, DatasetManifest, Format,
    ImageRecord, Instance, Region, Result, CLASS_LIST_FILE,
};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

/// YOLO label set: class list plus one label text per image stem.
#[derive(Debug, Clone, PartialEq)]
pub struct YoloTree {
    pub class_names: Vec<String>,
    /// `(stem, label text)` in image order.
    pub labels: Vec<(String, String)>,
}

impl YoloTree {
    /// Writes `classes.txt` and `<stem>.txt` files into `label_dir`.
    pub fn write_to(&self, label_dir: &Path) -> Result<()> {
        fs::create_dir_all(label_dir).map_err(|e| AnnotationError::io(label_dir, e))?;
        let classes = label_dir.join(CLASS_LIST_FILE);
        let mut list = self.class_names.join("\n");
        list.push('\n');
        fs::write(&classes, list).map_err(|e| AnnotationError::io(&classes, e))?;
        for (stem, text) in &self.labels {
            let path = label_dir.join(format!("{stem}.txt"));
            fs::write(&path, text).map_err(|e| AnnotationError::io(&path, e))?;
        }
        Ok(())
    }
}

/// Parses one label file's contents against an image of `width`x`height`.
///
/// Lines are `class cx cy w h` with normalized center coordinates; blank
/// lines are skipped.
pub fn parse_yolo_labels(
    text: &str,
    file: &str,
    width: u32,
    height: u32,
    num_classes: usize,
) -> Result<Vec<Instance>> {
    let (img_w, img_h) = (f64::from(width), f64::from(height));
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |message: String| AnnotationError::Parse {
            file: file.to_string(),
            line: line_no,
            message,
        };
        if fields.len() != 5 {
            return Err(parse_err(format!(
                "expected 5 fields `class cx cy w h`, found {}",
                fields.len()
            )));
        }
        let class: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("invalid class index '{}'", fields[0])))?;
        let mut nums = [0.0f64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(format!("invalid number '{field}'")))?;
        }
        if class >= num_classes {
            return Err(AnnotationError::Validation(format!(
                "{file}:{line_no}: class index {class} out of range for {num_classes} class(es)"
            )));
        }
        let [cx, cy, w, h] = nums;
        let bbox = BBox::new((cx - w / 2.0) * img_w, (cy - h / 2.0) * img_h, w * img_w, h * img_h);
        if !bbox.is_valid() {
            return Err(parse_err(format!("degenerate box {bbox:?}")));
        }
        out.push(Instance::new(class as u32, Region::Box(bbox)));
    }
    Ok(out)
}

/// Reads a YOLO dataset: every image in `image_dir` (sorted by file name,
/// ids from 1) paired with `<stem>.txt` in `label_dir`.
///
/// An image without a label file is a negative with zero instances. Image
/// sizes come from the image headers.
pub fn parse_yolo(
    label_dir: &Path,
    image_dir: &Path,
    class_names: &[String],
) -> Result<DatasetManifest> {
    let mut files: Vec<String> = fs::read_dir(image_dir)
        .map_err(|e| AnnotationError::io(image_dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| {
            Path::new(name)
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();

    let mut images = Vec::with_capacity(files.len());
    for (i, file) in files.into_iter().enumerate() {
        let image_path = image_dir.join(&file);
        let (width, height) = image::image_dimensions(&image_path).map_err(|e| {
            AnnotationError::io(&image_path, std::io::Error::other(e.to_string()))
        })?;
        let label_path = label_dir.join(format!("{}.txt", file_stem(&file)));
        let instances = match fs::read_to_string(&label_path) {
            Ok(text) => parse_yolo_labels(
                &text,
                &label_path.display().to_string(),
                width,
                height,
                class_names.len(),
            )?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(AnnotationError::io(&label_path, e)),
        };
        images.push(ImageRecord::new(i as u64 + 1, file, width, height).with_instances(instances));
    }

    let manifest = DatasetManifest {
        categories: class_names
            .iter()
            .enumerate()
            .map(|(i, n)| Category::new(i as u32, n.clone()))
            .collect(),
        images,
        format: Some(Format::Yolo),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Reads `classes.txt` from a label directory.
pub fn read_yolo_classes(label_dir: &Path) -> Result<Vec<String>> {
    let path = label_dir.join(CLASS_LIST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| AnnotationError::io(&path, e))?;
    Ok(read_class_list(&text))
}

/// Serializes boxes as normalized `class cx cy w h` lines. The class index is
/// the category's position in id order.
pub fn serialize_yolo(manifest: &DatasetManifest) -> Result<YoloTree> {
    manifest.validate()?;
    let unsupported = |message: String| AnnotationError::Unsupported {
        format: Format::Yolo,
        message,
    };
    let cats = manifest.sorted_categories();
    let mut labels = Vec::with_capacity(manifest.images.len());
    for image in &manifest.images {
        let (img_w, img_h) = (f64::from(image.width), f64::from(image.height));
        let mut text = String::new();
        for inst in &image.instances {
            let b = match &inst.region {
                Region::Box(b) => b,
                Region::Polygon { .. } => {
                    return Err(unsupported(format!(
                        "image {} has a polygon region; YOLO carries boxes only",
                        image.id
                    )))
                }
            };
            if inst.ignore {
                return Err(unsupported(format!(
                    "image {} has an ignore-flagged instance",
                    image.id
                )));
            }
            let class = cats
                .iter()
                .position(|c| c.id == inst.category_id)
                .expect("validated category");
            let cx = (b.x + b.w / 2.0) / img_w;
            let cy = (b.y + b.h / 2.0) / img_h;
            text.push_str(&format!(
                "{class} {cx} {cy} {} {}\n",
                b.w / img_w,
                b.h / img_h
            ));
        }
        labels.push((file_stem(&image.file).to_string(), text));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some((dup, _)) = labels.iter().find(|(stem, _)| !seen.insert(stem.as_str())) {
        return Err(unsupported(format!("two images share the label stem '{dup}'")));
    }
    Ok(YoloTree {
        class_names: cats.into_iter().map(|c| c.name).collect(),
        labels,
    })
}
