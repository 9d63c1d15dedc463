use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use roxmltree::{Document, Node};

use super::{
    file_stem, read_class_list, AnnotationError, BBox, Category, DatasetManifest, Format,
    ImageRecord, Instance, Region, Result, CLASS_LIST_FILE,
};

/// VOC annotation set: class list plus one XML document per image.
#[derive(Debug, Clone, PartialEq)]
pub struct VocTree {
    pub class_names: Vec<String>,
    /// `(xml file name, xml text)` in image order.
    pub documents: Vec<(String, String)>,
}

impl VocTree {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| AnnotationError::io(dir, e))?;
        let classes = dir.join(CLASS_LIST_FILE);
        let mut list = self.class_names.join("\n");
        list.push('\n');
        fs::write(&classes, list).map_err(|e| AnnotationError::io(&classes, e))?;
        for (name, xml) in &self.documents {
            let path = dir.join(name);
            fs::write(&path, xml).map_err(|e| AnnotationError::io(&path, e))?;
        }
        Ok(())
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn child_text<'a>(node: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(node, name).and_then(|n| n.text()).map(str::trim)
}

fn number<T: std::str::FromStr>(node: Node<'_, '_>, name: &str, ctx: &str) -> Result<T> {
    let text = child_text(node, name)
        .ok_or_else(|| AnnotationError::Xml(format!("missing <{name}> in <{ctx}>")))?;
    text.parse()
        .map_err(|_| AnnotationError::Xml(format!("invalid <{name}> value '{text}' in <{ctx}>")))
}

/// Parses a VOC XML annotation. Object names are resolved against
/// `categories`; the returned record has id 0 and the caller assigns one.
///
/// `bndbox` is 1-based inclusive, so `(xmin, ymin, xmax, ymax)` maps to
/// `Box { xmin-1, ymin-1, xmax-xmin+1, ymax-ymin+1 }`. `<difficult>1` sets
/// the ignore flag.
pub fn parse_voc(xml_text: &str, categories: &[Category]) -> Result<ImageRecord> {
    let doc = Document::parse(xml_text).map_err(|e| AnnotationError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(AnnotationError::Xml(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let file = child_text(root, "filename")
        .ok_or_else(|| AnnotationError::Xml("missing <filename>".into()))?
        .to_string();
    let size = child(root, "size").ok_or_else(|| AnnotationError::Xml("missing <size>".into()))?;
    let width: u32 = number(size, "width", "size")?;
    let height: u32 = number(size, "height", "size")?;

    let mut instances = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let name = child_text(obj, "name")
            .ok_or_else(|| AnnotationError::Xml("object without <name>".into()))?;
        let category = categories.iter().find(|c| c.name == name).ok_or_else(|| {
            AnnotationError::Validation(format!("{file}: unknown object class '{name}'"))
        })?;
        let bndbox = child(obj, "bndbox")
            .ok_or_else(|| AnnotationError::Xml(format!("object '{name}' without <bndbox>")))?;
        let xmin: f64 = number(bndbox, "xmin", "bndbox")?;
        let ymin: f64 = number(bndbox, "ymin", "bndbox")?;
        let xmax: f64 = number(bndbox, "xmax", "bndbox")?;
        let ymax: f64 = number(bndbox, "ymax", "bndbox")?;
        if xmax < xmin || ymax < ymin {
            return Err(AnnotationError::Validation(format!(
                "{file}: inverted bndbox ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        let difficult = child_text(obj, "difficult").is_some_and(|t| t == "1");
        let mut inst = Instance::new(
            category.id,
            Region::Box(BBox::new(
                xmin - 1.0,
                ymin - 1.0,
                xmax - xmin + 1.0,
                ymax - ymin + 1.0,
            )),
        );
        inst.ignore = difficult;
        instances.push(inst);
    }
    let mut record = ImageRecord::new(0, file, width, height);
    record.instances = instances;
    Ok(record)
}

/// Reads every `*.xml` in `dir`, sorted by name, with ids from 1.
///
/// Class ids follow `class_names` when given, else `classes.txt` in `dir`,
/// else the sorted set of object names found.
pub fn parse_voc_dir(dir: &Path, class_names: Option<&[String]>) -> Result<DatasetManifest> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| AnnotationError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
        .collect();
    files.sort();
    let texts = files
        .iter()
        .map(|p| fs::read_to_string(p).map_err(|e| AnnotationError::io(p, e)))
        .collect::<Result<Vec<_>>>()?;

    let names: Vec<String> = match class_names {
        Some(names) => names.to_vec(),
        None => {
            let list = dir.join(CLASS_LIST_FILE);
            if list.is_file() {
                let text = fs::read_to_string(&list).map_err(|e| AnnotationError::io(&list, e))?;
                read_class_list(&text)
            } else {
                let mut found = std::collections::BTreeSet::new();
                for text in &texts {
                    let doc =
                        Document::parse(text).map_err(|e| AnnotationError::Xml(e.to_string()))?;
                    for obj in doc.descendants().filter(|n| n.has_tag_name("object")) {
                        if let Some(name) = child_text(obj, "name") {
                            found.insert(name.to_string());
                        }
                    }
                }
                found.into_iter().collect()
            }
        }
    };
    let categories: Vec<Category> = names
        .iter()
        .enumerate()
        .map(|(i, n)| Category::new(i as u32, n.clone()))
        .collect();

    let mut images = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let mut record = parse_voc(text, &categories)?;
        record.id = i as u64 + 1;
        images.push(record);
    }
    let manifest = DatasetManifest {
        categories,
        images,
        format: Some(Format::Voc),
    };
    manifest.validate()?;
    Ok(manifest)
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn serialize_voc(manifest: &DatasetManifest) -> Result<VocTree> {
    manifest.validate()?;
    let cats = manifest.sorted_categories();
    let mut documents = Vec::with_capacity(manifest.images.len());
    for image in &manifest.images {
        let mut xml = String::from("<annotation>\n");
        let _ = writeln!(xml, "  <filename>{}</filename>", escape(&image.file));
        let _ = writeln!(
            xml,
            "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
            image.width, image.height
        );
        for inst in &image.instances {
            let Region::Box(b) = &inst.region else {
                return Err(AnnotationError::Unsupported {
                    format: Format::Voc,
                    message: format!("image {} has a polygon region", image.id),
                });
            };
            let name = &cats
                .iter()
                .find(|c| c.id == inst.category_id)
                .expect("validated category")
                .name;
            let _ = write!(
                xml,
                "  <object>\n    <name>{}</name>\n    <difficult>{}</difficult>\n    <bndbox>\n      \
                 <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    \
                 </bndbox>\n  </object>\n",
                escape(name),
                u8::from(inst.ignore),
                b.x + 1.0,
                b.y + 1.0,
                b.x + b.w,
                b.y + b.h,
            );
        }
        xml.push_str("</annotation>\n");
        documents.push((format!("{}.xml", file_stem(&image.file)), xml));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some((dup, _)) = documents.iter().find(|(n, _)| !seen.insert(n.as_str())) {
        return Err(AnnotationError::Unsupported {
            format: Format::Voc,
            message: format!("two images map to the annotation file '{dup}'"),
        });
    }
    Ok(VocTree {
        class_names: cats.into_iter().map(|c| c.name).collect(),
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> Vec<Category> {
        vec![Category::new(0, "car"), Category::new(1, "person")]
    }

    fn doc(objects: &str) -> String {
        format!(
            "<annotation><filename>a.jpg</filename>\
             <size><width>20</width><height>10</height><depth>3</depth></size>{objects}</annotation>"
        )
    }

    #[test]
    fn one_based_inclusive_box() {
        let xml = doc("<object><name>car</name><bndbox><xmin>1</xmin><ymin>1</ymin>\
                       <xmax>10</xmax><ymax>10</ymax></bndbox></object>");
        let rec = parse_voc(&xml, &cats()).unwrap();
        assert_eq!((rec.width, rec.height), (20, 10));
        assert_eq!(
            rec.instances[0].region,
            Region::Box(BBox::new(0.0, 0.0, 10.0, 10.0))
        );
        assert!(!rec.instances[0].ignore);
    }

    #[test]
    fn difficult_sets_ignore_flag() {
        let xml = doc("<object><name>person</name><difficult>1</difficult><bndbox><xmin>3</xmin>\
                       <ymin>3</ymin><xmax>4</xmax><ymax>5</ymax></bndbox></object>");
        let inst = &parse_voc(&xml, &cats()).unwrap().instances[0];
        assert!(inst.ignore);
        assert_eq!(inst.category_id, 1);
    }

    #[test]
    fn missing_size_is_parse_error() {
        let xml = "<annotation><filename>a.jpg</filename></annotation>";
        assert!(matches!(
            parse_voc(xml, &cats()),
            Err(AnnotationError::Xml(m)) if m.contains("size")
        ));
    }

    #[test]
    fn inverted_box_is_validation_error() {
        let xml = doc("<object><name>car</name><bndbox><xmin>9</xmin><ymin>1</ymin>\
                       <xmax>3</xmax><ymax>10</ymax></bndbox></object>");
        assert!(matches!(
            parse_voc(&xml, &cats()),
            Err(AnnotationError::Validation(_))
        ));
    }

    #[test]
    fn unknown_class_is_rejected() {
        let xml = doc("<object><name>boat</name><bndbox><xmin>1</xmin><ymin>1</ymin>\
                       <xmax>3</xmax><ymax>3</ymax></bndbox></object>");
        assert!(matches!(
            parse_voc(&xml, &cats()),
            Err(AnnotationError::Validation(_))
        ));
    }

    #[test]
    fn special_characters_survive_serialization() {
        let m = DatasetManifest::new(
            vec![Category::new(0, "R&D <car>")],
            vec![ImageRecord::new(1, "a&b.png", 8, 8)
                .with_instances(vec![Instance::with_box(0, 0.5, 1.0, 2.0, 3.0)])],
        );
        let tree = serialize_voc(&m).unwrap();
        let rec = parse_voc(&tree.documents[0].1, &m.categories).unwrap();
        assert_eq!(rec.file, "a&b.png");
        assert_eq!(rec.instances[0].region, Region::Box(BBox::new(0.5, 1.0, 2.0, 3.0)));
    }
}
