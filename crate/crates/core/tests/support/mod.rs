//! Oracles, generators and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use saga_core::annotation::{
    BBox, Category, DatasetManifest, ImageRecord, Instance, Point, Region, Split,
};
use saga_core::engine::ImageBuffer;
use saga_core::eval::DetectionSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- luminance

/// Exact rational evaluation of `0.2989 r + 0.5870 g + 0.1140 b`, rounded
/// half to even.
pub fn luminance_rational(r: u8, g: u8, b: u8) -> u8 {
    let w = |num: i64| Ratio::new(num, 10_000);
    let v = w(2989) * i64::from(r) + w(5870) * i64::from(g) + w(1140) * i64::from(b);
    let floor = v.floor();
    let frac = v - floor;
    let half = Ratio::new(1, 2);
    let k = if frac < half {
        floor
    } else if frac > half {
        floor + 1
    } else if floor.to_integer() % 2 == 0 {
        floor
    } else {
        floor + 1
    };
    u8::try_from(k.to_integer()).expect("luminance fits in a byte")
}

/// The integer `k` closest to `s / 10000`, ties to even `k`; found by
/// comparing distances of the two neighbouring candidates.
pub fn luminance_nearest(r: u8, g: u8, b: u8) -> u8 {
    let s = 2989 * i64::from(r) + 5870 * i64::from(g) + 1140 * i64::from(b);
    let lo = s.div_euclid(10_000);
    let hi = lo + 1;
    let d_lo = s - 10_000 * lo;
    let d_hi = 10_000 * hi - s;
    let k = match d_lo.cmp(&d_hi) {
        std::cmp::Ordering::Less => lo,
        std::cmp::Ordering::Greater => hi,
        std::cmp::Ordering::Equal if lo % 2 == 0 => lo,
        std::cmp::Ordering::Equal => hi,
    };
    k as u8
}

// ---------------------------------------------------------------- regions

fn coord(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    match rng.random_range(0..3) {
        0 => rng.random_range(lo as i64..=hi as i64) as f64,
        1 => rng.random_range((2.0 * lo) as i64..=(2.0 * hi) as i64) as f64 / 2.0,
        _ => rng.random_range(lo..hi),
    }
}

/// A box or polygon around a `w`x`h` canvas, often poking outside it and
/// often with vertices on pixel centers or edges.
pub fn random_region(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Region {
    let (fw, fh) = (f64::from(w), f64::from(h));
    if rng.random_bool(0.5) {
        let x = coord(rng, -0.5 * fw, fw);
        let y = coord(rng, -0.5 * fh, fh);
        let bw = coord(rng, 0.5, fw).max(0.25);
        let bh = coord(rng, 0.5, fh).max(0.25);
        Region::Box(BBox::new(x, y, bw, bh))
    } else {
        let n = rng.random_range(3..=7);
        Region::polygon(
            (0..n)
                .map(|_| Point::new(coord(rng, -0.3 * fw, 1.3 * fw), coord(rng, -0.3 * fh, 1.3 * fh)))
                .collect(),
        )
    }
}

/// Per-pixel membership: integer pixel interval for boxes, even-odd ray
/// casting at the pixel center for polygons.
pub fn brute_force_contains(region: &Region, px: u32, py: u32) -> bool {
    match region {
        Region::Box(b) => {
            let (x, y) = (f64::from(px), f64::from(py));
            b.x <= x && x < b.x + b.w && b.y <= y && y < b.y + b.h
        }
        Region::Polygon { vertices } => {
            let (xc, yc) = (f64::from(px) + 0.5, f64::from(py) + 0.5);
            let n = vertices.len();
            let mut inside = false;
            for i in 0..n {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                if (a.y > yc) != (b.y > yc) {
                    let cross = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
                    if cross <= xc {
                        inside = !inside;
                    }
                }
            }
            inside
        }
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> ImageBuffer {
    let pixels = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    ImageBuffer::from_raw(w, h, pixels).unwrap()
}

// ---------------------------------------------------------------- manifests

fn random_box_within(rng: &mut ChaCha8Rng, w: u32, h: u32) -> BBox {
    let bw = rng.random_range(1.0..f64::from(w));
    let bh = rng.random_range(1.0..f64::from(h));
    let x = rng.random_range(0.0..f64::from(w) - bw);
    let y = rng.random_range(0.0..f64::from(h) - bh);
    BBox::new(x, y, bw, bh)
}

fn category_names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let pool = ["car", "person", "bus", "truck", "bicycle", "motor", "van", "R&D <x>", "ship"];
    let mut names: Vec<String> = pool.iter().map(|s| s.to_string()).collect();
    names.shuffle(rng);
    names.truncate(n);
    names
}

/// Anything COCO can carry: sparse ids, polygons, ignore flags, splits and
/// tags, coordinates outside the image.
pub fn random_coco_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    let n_cats = rng.random_range(1..=5);
    let mut ids: Vec<u32> = (0..40).collect();
    ids.shuffle(rng);
    let categories: Vec<Category> = ids[..n_cats]
        .iter()
        .zip(category_names(rng, n_cats))
        .map(|(&id, name)| Category::new(id, name))
        .collect();
    let n_images = rng.random_range(0..=6);
    let mut image_ids: Vec<u64> = (1..1000).collect();
    image_ids.shuffle(rng);
    let tag_pool = ["day", "night", "fog"];
    let images = (0..n_images)
        .map(|i| {
            let (w, h) = (rng.random_range(8..200), rng.random_range(8..200));
            let instances = (0..rng.random_range(0..=5))
                .map(|_| {
                    let cat = categories[rng.random_range(0..n_cats)].id;
                    let region = if rng.random_bool(0.3) {
                        random_region(rng, w, h)
                    } else {
                        let b = random_box_within(rng, w, h);
                        let dx = rng.random_range(-10.0..10.0);
                        Region::Box(BBox::new(b.x + dx, b.y, b.w, b.h))
                    };
                    let inst = Instance::new(cat, region);
                    if rng.random_bool(0.2) {
                        inst.ignored()
                    } else {
                        inst
                    }
                })
                .collect();
            let mut record = ImageRecord::new(image_ids[i], format!("seq{}/frame_{i}.jpg", i % 2), w, h)
                .with_instances(instances);
            record.split = Split::ALL[rng.random_range(0..3)];
            record.tags = tag_pool
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .map(|t| t.to_string())
                .collect::<BTreeSet<_>>();
            record
        })
        .collect();
    DatasetManifest::new(categories, images)
}

fn dense_manifest(rng: &mut ChaCha8Rng, extension: &str, allow_ignore: bool) -> DatasetManifest {
    let n_cats = rng.random_range(1..=5);
    let categories: Vec<Category> = category_names(rng, n_cats)
        .into_iter()
        .enumerate()
        .map(|(i, n)| Category::new(i as u32, n))
        .collect();
    let images = (0..rng.random_range(1..=5))
        .map(|i| {
            let (w, h) = (rng.random_range(8..64), rng.random_range(8..64));
            let instances = (0..rng.random_range(0..=4))
                .map(|_| {
                    let b = random_box_within(rng, w, h);
                    let inst = Instance::new(rng.random_range(0..n_cats) as u32, Region::Box(b));
                    if allow_ignore && rng.random_bool(0.25) {
                        inst.ignored()
                    } else {
                        inst
                    }
                })
                .collect();
            ImageRecord::new(i as u64 + 1, format!("img_{i:03}.{extension}"), w, h)
                .with_instances(instances)
        })
        .collect();
    DatasetManifest::new(categories, images)
}

/// Boxes inside the image, contiguous category ids, ids following file
/// name order: what a YOLO tree can represent.
pub fn random_yolo_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    dense_manifest(rng, "png", false)
}

/// Like the YOLO generator but with `difficult` objects.
pub fn random_voc_manifest(rng: &mut ChaCha8Rng) -> DatasetManifest {
    dense_manifest(rng, "jpg", true)
}

/// Writes a black PNG of the recorded size for every image.
pub fn write_placeholder_images(manifest: &DatasetManifest, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for im in &manifest.images {
        image::RgbImage::new(im.width, im.height)
            .save(dir.join(&im.file))
            .unwrap();
    }
}

// ---------------------------------------------------------------- mAP fixtures

pub struct MapFixture {
    pub name: &'static str,
    /// `(image, class, box, ignore)`
    pub gt: &'static [(u64, u32, [f64; 4], bool)],
    /// `(image, class, box, score)`
    pub predictions: &'static [(u64, u32, [f64; 4], f64)],
    pub map: f64,
    pub per_class: &'static [(u32, Option<f64>)],
}

impl MapFixture {
    pub fn ground_truth(&self) -> DatasetManifest {
        let classes: BTreeSet<u32> = self
            .gt
            .iter()
            .map(|g| g.1)
            .chain(self.predictions.iter().map(|p| p.1))
            .collect();
        let image_ids: BTreeSet<u64> = self
            .gt
            .iter()
            .map(|g| g.0)
            .chain(self.predictions.iter().map(|p| p.0))
            .collect();
        let images = image_ids
            .into_iter()
            .map(|id| {
                let instances = self
                    .gt
                    .iter()
                    .filter(|g| g.0 == id)
                    .map(|&(_, c, [x, y, w, h], ignore)| {
                        let inst = Instance::with_box(c, x, y, w, h);
                        if ignore {
                            inst.ignored()
                        } else {
                            inst
                        }
                    })
                    .collect();
                ImageRecord::new(id, format!("{id}.png"), 64, 64).with_instances(instances)
            })
            .collect();
        DatasetManifest::new(
            classes.into_iter().map(|c| Category::new(c, format!("class{c}"))).collect(),
            images,
        )
    }

    pub fn detections(&self, gt: &DatasetManifest) -> DetectionSet {
        DetectionSet::new(
            gt,
            self.predictions
                .iter()
                .map(|&(img, c, [x, y, w, h], s)| (img, Instance::with_box(c, x, y, w, h).with_score(s))),
        )
        .unwrap()
    }
}

const fn f(
    name: &'static str,
    gt: &'static [(u64, u32, [f64; 4], bool)],
    predictions: &'static [(u64, u32, [f64; 4], f64)],
    map: f64,
    per_class: &'static [(u32, Option<f64>)],
) -> MapFixture {
    MapFixture {
        name,
        gt,
        predictions,
        map,
        per_class,
    }
}

/// Expected values come from an exact rational PR-integration oracle run
/// ahead of the implementation.
pub const MAP_FIXTURES: [MapFixture; 20] = [
    f("single_perfect", &[(1, 0, [0., 0., 10., 10.], false)], &[(1, 0, [0., 0., 10., 10.], 0.9)], 1.0, &[(0, Some(1.0))]),
    f("iou_one_seventh_is_miss", &[(1, 0, [0., 0., 2., 2.], false)], &[(1, 0, [1., 1., 2., 2.], 0.9)], 0.0, &[(0, Some(0.0))]),
    f(
        "duplicate_after_tp",
        &[(1, 0, [0., 0., 10., 10.], false)],
        &[(1, 0, [0., 0., 10., 10.], 0.9), (1, 0, [0., 0., 10., 9.], 0.8)],
        1.0,
        &[(0, Some(1.0))],
    ),
    f(
        "duplicate_before_tp",
        &[(1, 0, [0., 0., 10., 10.], false)],
        &[(1, 0, [0., 0., 10., 9.], 0.9), (1, 0, [0., 0., 10., 10.], 0.8)],
        1.0,
        &[(0, Some(1.0))],
    ),
    f(
        "half_recall",
        &[(1, 0, [0., 0., 10., 10.], false), (1, 0, [20., 20., 10., 10.], false)],
        &[(1, 0, [0., 0., 10., 10.], 0.9)],
        0.5,
        &[(0, Some(0.5))],
    ),
    f(
        "five_pred_two_class",
        &[(1, 0, [0., 0., 10., 10.], false), (2, 0, [0., 0., 10., 10.], false), (1, 1, [20., 20., 10., 10.], false)],
        &[
            (1, 0, [0., 0., 10., 10.], 0.9),
            (1, 0, [1., 1., 10., 10.], 0.8),
            (2, 0, [30., 30., 5., 5.], 0.7),
            (2, 0, [0., 0., 10., 10.], 0.6),
            (1, 1, [20., 20., 10., 10.], 0.5),
        ],
        0.875,
        &[(0, Some(0.75)), (1, Some(1.0))],
    ),
    f(
        "fp_first_then_tp",
        &[(1, 0, [0., 0., 4., 4.], false)],
        &[(1, 0, [10., 10., 4., 4.], 0.9), (1, 0, [0., 0., 4., 4.], 0.5)],
        0.5,
        &[(0, Some(0.5))],
    ),
    f(
        "two_classes_one_missed",
        &[(1, 0, [0., 0., 4., 4.], false), (1, 1, [8., 8., 4., 4.], false)],
        &[(1, 0, [0., 0., 4., 4.], 0.7), (1, 1, [0., 0., 4., 4.], 0.6)],
        0.5,
        &[(0, Some(1.0)), (1, Some(0.0))],
    ),
    f(
        "predictions_without_gt_class",
        &[(1, 0, [0., 0., 4., 4.], false)],
        &[(1, 0, [0., 0., 4., 4.], 0.7), (1, 2, [0., 0., 4., 4.], 0.6)],
        0.5,
        &[(0, Some(1.0)), (2, Some(0.0))],
    ),
    f(
        "ignored_gt_absorbs_prediction",
        &[(1, 0, [0., 0., 4., 4.], false), (1, 0, [10., 10., 4., 4.], true)],
        &[(1, 0, [10., 10., 4., 4.], 0.95), (1, 0, [0., 0., 4., 4.], 0.5)],
        1.0,
        &[(0, Some(1.0))],
    ),
    f(
        "ignored_only_class_with_prediction",
        &[(1, 0, [0., 0., 4., 4.], false), (1, 1, [10., 10., 4., 4.], true)],
        &[(1, 0, [0., 0., 4., 4.], 0.9), (1, 1, [10., 10., 4., 4.], 0.9)],
        0.5,
        &[(0, Some(1.0)), (1, Some(0.0))],
    ),
    f(
        "score_tie_input_order",
        &[(1, 0, [0., 0., 10., 10.], false)],
        &[(1, 0, [30., 30., 10., 10.], 0.5), (1, 0, [0., 0., 10., 10.], 0.5)],
        0.5,
        &[(0, Some(0.5))],
    ),
    f(
        "iou_tie_lowest_gt_index",
        &[(1, 0, [0., 0., 10., 10.], false), (1, 0, [4., 0., 10., 10.], false)],
        &[(1, 0, [2., 0., 10., 10.], 0.9), (1, 0, [4., 0., 10., 10.], 0.8)],
        1.0,
        &[(0, Some(1.0))],
    ),
    f(
        "highest_iou_wins",
        &[(1, 0, [0., 0., 10., 10.], false), (1, 0, [3., 0., 10., 10.], false)],
        &[(1, 0, [2., 0., 10., 10.], 0.9), (1, 0, [0., 0., 10., 10.], 0.8)],
        1.0,
        &[(0, Some(1.0))],
    ),
    f(
        "interleaved_three_gt",
        &[(1, 0, [0., 0., 4., 4.], false), (1, 0, [10., 0., 4., 4.], false), (2, 0, [0., 0., 4., 4.], false)],
        &[
            (1, 0, [0., 0., 4., 4.], 0.9),
            (1, 0, [20., 20., 4., 4.], 0.8),
            (1, 0, [10., 0., 4., 4.], 0.7),
            (2, 0, [5., 5., 4., 4.], 0.6),
            (2, 0, [0., 0., 4., 4.], 0.5),
            (2, 0, [0., 1., 4., 4.], 0.4),
        ],
        34.0 / 45.0,
        &[(0, Some(34.0 / 45.0))],
    ),
    f(
        "cross_image_no_match",
        &[(1, 0, [0., 0., 4., 4.], false), (2, 0, [0., 0., 4., 4.], false)],
        &[(2, 0, [0., 0., 4., 4.], 0.9), (3, 0, [0., 0., 4., 4.], 0.8)],
        0.5,
        &[(0, Some(0.5))],
    ),
    f(
        "three_classes_mixed",
        &[
            (1, 0, [0., 0., 8., 8.], false),
            (1, 1, [10., 10., 8., 8.], false),
            (1, 2, [20., 0., 8., 8.], false),
            (2, 2, [0., 0., 8., 8.], false),
        ],
        &[
            (1, 0, [0., 0., 8., 8.], 0.3),
            (1, 1, [11., 11., 8., 8.], 0.8),
            (1, 2, [20., 0., 8., 8.], 0.6),
            (2, 2, [30., 30., 8., 8.], 0.9),
            (2, 2, [0., 0., 8., 8.], 0.2),
            (1, 0, [40., 40., 2., 2.], 0.95),
        ],
        13.0 / 18.0,
        &[(0, Some(0.5)), (1, Some(1.0)), (2, Some(2.0 / 3.0))],
    ),
    f("iou_exactly_half", &[(1, 0, [0., 0., 4., 2.], false)], &[(1, 0, [0., 0., 2., 2.], 0.9)], 1.0, &[(0, Some(1.0))]),
    f("just_below_half", &[(1, 0, [0., 0., 10., 10.], false)], &[(1, 0, [0., 0., 10., 4.99], 0.9)], 0.0, &[(0, Some(0.0))]),
    f(
        "all_false_positives",
        &[(1, 0, [0., 0., 4., 4.], false), (1, 1, [10., 10., 4., 4.], false)],
        &[(1, 0, [20., 20., 4., 4.], 0.9), (1, 1, [30., 30., 4., 4.], 0.8)],
        0.0,
        &[(0, Some(0.0)), (1, Some(0.0))],
    ),
];

// ---------------------------------------------------------------- numerics

/// Teacher after `k` EMA steps against a frozen student.
pub fn ema_closed_form(teacher0: f64, student: f64, alpha: f64, k: i32) -> f64 {
    let ak = alpha.powi(k);
    ak * teacher0 + (1.0 - ak) * student
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
