//! Detection evaluation at a fixed IoU threshold: greedy score-ordered
//! matching, all-points interpolated AP, and the unweighted class mean.
//!
//! Ground truth flagged `ignore` is never counted as a positive; a prediction
//! whose only match is ignored ground truth is dropped rather than counted as
//! a false positive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, DatasetManifest, Instance, Region};

/// Label recorded in reports for the AP integration rule.
pub const INTERPOLATION: &str = "all-points";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("malformed results JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("prediction references unknown image id {0}")]
    UnknownImage(u64),
    #[error("prediction references unknown category id {0}")]
    UnknownCategory(u32),
    #[error("prediction on image {0} has no score")]
    MissingScore(u64),
    #[error("prediction on image {image_id} has score {score} outside [0, 1]")]
    ScoreOutOfRange { image_id: u64, score: f64 },
    #[error("no class has a defined AP (no ground truth and no predictions)")]
    NoDefinedClasses,
}

/// Intersection over union of two boxes; 0 when either is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Scored predictions grouped by image, checked against a ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    per_image: BTreeMap<u64, Vec<Instance>>,
}

impl DetectionSet {
    pub fn new(
        ground_truth: &DatasetManifest,
        detections: impl IntoIterator<Item = (u64, Instance)>,
    ) -> Result<Self, EvalError> {
        let mut per_image: BTreeMap<u64, Vec<Instance>> = BTreeMap::new();
        for (image_id, inst) in detections {
            if ground_truth.image(image_id).is_none() {
                return Err(EvalError::UnknownImage(image_id));
            }
            if ground_truth.category(inst.category_id).is_none() {
                return Err(EvalError::UnknownCategory(inst.category_id));
            }
            match inst.score {
                None => return Err(EvalError::MissingScore(image_id)),
                Some(score) if !(0.0..=1.0).contains(&score) => {
                    return Err(EvalError::ScoreOutOfRange { image_id, score })
                }
                Some(_) => {}
            }
            per_image.entry(image_id).or_default().push(inst);
        }
        Ok(Self { per_image })
    }

    /// Parses a COCO results array `[{image_id, category_id, bbox, score}]`.
    pub fn from_coco_results(json: &str, ground_truth: &DatasetManifest) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Row {
            image_id: u64,
            category_id: u32,
            bbox: [f64; 4],
            score: f64,
        }
        let rows: Vec<Row> = serde_json::from_str(json).map_err(|e| EvalError::Json {
            offset: crate::annotation::json_byte_offset(json, e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::new(
            ground_truth,
            rows.into_iter().map(|r| {
                let [x, y, w, h] = r.bbox;
                (
                    r.image_id,
                    Instance::with_box(r.category_id, x, y, w, h).with_score(r.score),
                )
            }),
        )
    }

    pub fn image(&self, image_id: u64) -> &[Instance] {
        self.per_image.get(&image_id).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.per_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same detections with every score multiplied by `factor`. Scores are
    /// not re-validated.
    pub fn scaled_scores(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for inst in out.per_image.values_mut().flatten() {
            inst.score = inst.score.map(|s| s * factor);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall after each ranked prediction, plus the integrated AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    TruePositive,
    FalsePositive,
    /// Matched only ignored ground truth.
    Dropped,
}

fn gt_box(region: &Region) -> BBox {
    region.bounds()
}

/// AP for one class. `None` when the class has neither positives nor
/// predictions; `Some` with AP 0 when predictions exist but no positives.
pub fn average_precision(
    predictions: &DetectionSet,
    ground_truth: &DatasetManifest,
    class_id: u32,
    iou_threshold: f64,
) -> Option<PrCurve> {
    // (score, image, prediction box) in input order, then stable sort.
    let mut ranked: Vec<(f64, u64, BBox)> = Vec::new();
    for (&image_id, dets) in &predictions.per_image {
        for d in dets.iter().filter(|d| d.category_id == class_id) {
            ranked.push((d.score.unwrap_or(0.0), image_id, d.region.bounds()));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut gts: BTreeMap<u64, Vec<(BBox, bool)>> = BTreeMap::new();
    let mut positives = 0usize;
    for image in &ground_truth.images {
        let entry: Vec<(BBox, bool)> = image
            .instances
            .iter()
            .filter(|g| g.category_id == class_id)
            .map(|g| (gt_box(&g.region), g.ignore))
            .collect();
        positives += entry.iter().filter(|(_, ignore)| !ignore).count();
        if !entry.is_empty() {
            gts.insert(image.id, entry);
        }
    }

    if positives == 0 && ranked.is_empty() {
        return None;
    }

    let mut used: BTreeMap<u64, Vec<bool>> = gts
        .iter()
        .map(|(&id, v)| (id, vec![false; v.len()]))
        .collect();
    let mut outcomes = Vec::with_capacity(ranked.len());
    for (_, image_id, pbox) in &ranked {
        let Some(candidates) = gts.get(image_id) else {
            outcomes.push(Outcome::FalsePositive);
            continue;
        };
        let taken = used.get_mut(image_id).expect("same keys as gts");
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, (g, ignore)) in candidates.iter().enumerate() {
            let overlap = iou(pbox, g);
            if overlap < iou_threshold {
                continue;
            }
            if *ignore {
                hits_ignored = true;
            } else if !taken[j] && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((j, overlap));
            }
        }
        outcomes.push(match best {
            Some((j, _)) => {
                taken[j] = true;
                Outcome::TruePositive
            }
            None if hits_ignored => Outcome::Dropped,
            None => Outcome::FalsePositive,
        });
    }

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
            Outcome::Dropped => continue,
        }
        let recall = if positives == 0 {
            0.0
        } else {
            tp as f64 / positives as f64
        };
        points.push(PrPoint {
            precision: tp as f64 / (tp + fp) as f64,
            recall,
        });
    }

    let ap = if positives == 0 {
        0.0
    } else {
        all_points_area(&points)
    };
    Some(PrCurve { points, ap })
}

/// Area under the monotone precision envelope.
fn all_points_area(points: &[PrPoint]) -> f64 {
    let mut envelope = vec![0.0; points.len()];
    let mut running = 0.0f64;
    for (i, p) in points.iter().enumerate().rev() {
        running = running.max(p.precision);
        envelope[i] = running;
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in points.iter().zip(envelope) {
        area += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    area.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub category_id: u32,
    pub name: String,
    /// `None` when the class has no ground truth and no predictions.
    pub ap: Option<f64>,
    pub positives: usize,
    pub predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub iou_threshold: f64,
    pub interpolation: String,
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

/// Unweighted mean of the defined per-class APs at `iou_threshold`.
pub fn mean_average_precision(
    predictions: &DetectionSet,
    ground_truth: &DatasetManifest,
    iou_threshold: f64,
) -> Result<MapReport, EvalError> {
    let per_class: Vec<ClassAp> = ground_truth
        .sorted_categories()
        .into_iter()
        .map(|cat| {
            let curve = average_precision(predictions, ground_truth, cat.id, iou_threshold);
            let positives = ground_truth
                .images
                .iter()
                .flat_map(|im| &im.instances)
                .filter(|g| g.category_id == cat.id && !g.ignore)
                .count();
            let count = predictions
                .per_image
                .values()
                .flatten()
                .filter(|d| d.category_id == cat.id)
                .count();
            ClassAp {
                category_id: cat.id,
                name: cat.name,
                ap: curve.map(|c| c.ap),
                positives,
                predictions: count,
            }
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.ap).collect();
    if defined.is_empty() {
        return Err(EvalError::NoDefinedClasses);
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MapReport {
        iou_threshold,
        interpolation: INTERPOLATION.to_string(),
        per_class,
        map,
    })
}

/// mAP at IoU 0.5.
pub fn map50(
    predictions: &DetectionSet,
    ground_truth: &DatasetManifest,
) -> Result<MapReport, EvalError> {
    mean_average_precision(predictions, ground_truth, 0.5)
}
