use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ema::{ema_update_in_place, AdaptationState};
use super::model::{MlpShape, ModelParams, Sample};
use super::scene::{
    cell_features, cell_labels, generate_scenes, scenes_manifest, Domain, SceneConfig,
    SyntheticScene,
};
use super::HarnessError;
use crate::annotation::{Instance, Region};
use crate::engine::{apply_full_gray, apply_saga, AugmentationPolicy};
use crate::eval::{map50, DetectionSet, INTERPOLATION};
use crate::rng::counter_u64;

/// How labeled source scenes are transformed before the student sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceAugmentation {
    Vanilla,
    FullGray,
    Saga,
}

impl SourceAugmentation {
    pub const ALL: [SourceAugmentation; 3] = [
        SourceAugmentation::Vanilla,
        SourceAugmentation::FullGray,
        SourceAugmentation::Saga,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SourceAugmentation::Vanilla => "vanilla",
            SourceAugmentation::FullGray => "fullgray",
            SourceAugmentation::Saga => "saga",
        }
    }
}

/// Losses of one iteration. `total` is always `l_src + l_tgt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_src: f64,
    pub l_tgt: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_src: f64, l_tgt: f64) -> Self {
        Self {
            l_src,
            l_tgt,
            total: l_src + l_tgt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    Adaptation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub phase: Phase,
    pub losses: LossBreakdown,
    pub pseudo_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub augmentation: SourceAugmentation,
    /// EMA coefficient of the teacher update.
    pub alpha: f64,
    pub burn_in_iters: u64,
    pub total_iters: u64,
    /// Teacher probability a cell must exceed to become a pseudo-label.
    pub threshold: f64,
    pub seed: u64,
    pub bias_strength: f64,
    /// Multiplier on the target loss; 1 gives the plain sum.
    pub target_weight: f64,
    pub batch_scenes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
    /// Std of the additive feature noise on student inputs.
    pub student_noise: f64,
    pub source_scenes: usize,
    pub target_scenes: usize,
    pub test_scenes: usize,
    /// Abort when a loss exceeds this multiple of the burn-in mean (of the
    /// first loss while still in burn-in).
    pub divergence_factor: f64,
    pub scene: SceneConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            augmentation: SourceAugmentation::Saga,
            alpha: 0.95,
            burn_in_iters: 300,
            total_iters: 600,
            threshold: 0.8,
            seed: 0,
            bias_strength: 0.9,
            target_weight: 1.0,
            batch_scenes: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden: 32,
            student_noise: 0.04,
            source_scenes: 256,
            target_scenes: 256,
            test_scenes: 128,
            divergence_factor: 1e3,
            scene: SceneConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.total_iters <= self.burn_in_iters {
            return bad(format!(
                "total_iters ({}) must exceed burn_in_iters ({})",
                self.total_iters, self.burn_in_iters
            ));
        }
        if self.burn_in_iters == 0 {
            return bad("burn_in_iters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return bad(format!("bias must lie in [0, 1], got {}", self.bias_strength));
        }
        if self.batch_scenes == 0 || self.source_scenes == 0 || self.target_scenes == 0 || self.test_scenes == 0 {
            return bad("batch and pool sizes must be positive".into());
        }
        self.scene.validate().map_err(HarnessError::Config)
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            inputs: self.scene.feature_len(),
            hidden: self.hidden,
            classes: self.scene.classes as usize + 1,
        }
    }
}

/// Cells whose teacher probability for some class exceeds `threshold`,
/// paired with that class (background included).
pub fn pseudo_labels(
    shape: &MlpShape,
    teacher: &ModelParams,
    features: &[Vec<f64>],
    threshold: f64,
) -> Vec<(usize, usize)> {
    features
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let p = shape.predict(teacher, x);
            let (k, &best) = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("at least one class");
            (best > threshold).then_some((i, k))
        })
        .collect()
}

/// Source plus weighted target loss at `params`.
pub fn harness_loss(
    shape: &MlpShape,
    params: &ModelParams,
    source: &[Sample<'_>],
    target: &[Sample<'_>],
    target_weight: f64,
) -> LossBreakdown {
    LossBreakdown::new(
        shape.loss(params, source),
        target_weight * shape.loss(params, target),
    )
}

/// [`harness_loss`] and its gradient with respect to `params`.
pub fn harness_gradient(
    shape: &MlpShape,
    params: &ModelParams,
    source: &[Sample<'_>],
    target: &[Sample<'_>],
    target_weight: f64,
) -> (LossBreakdown, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let l_src = shape.loss_and_grad(params, source, 1.0, &mut grad);
    let l_tgt = shape.loss_and_grad(params, target, target_weight, &mut grad);
    (LossBreakdown::new(l_src, target_weight * l_tgt), grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRun {
    pub config: HarnessConfig,
    pub teacher_target_map50: f64,
    pub student_target_map50: f64,
    pub curve: Vec<IterationLog>,
    pub final_state: AdaptationState,
}

impl HarnessRun {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration,phase,l_src,l_tgt,total,pseudo_labels\n");
        for log in &self.curve {
            let phase = match log.phase {
                Phase::BurnIn => "burn_in",
                Phase::Adaptation => "adaptation",
            };
            let _ = writeln!(
                out,
                "{},{phase},{},{},{},{}",
                log.iteration, log.losses.l_src, log.losses.l_tgt, log.losses.total, log.pseudo_labels
            );
        }
        out
    }
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00;
const INIT_STREAM: u64 = 0x696e_6974_0000;

struct Pools {
    source: Vec<SyntheticScene>,
    source_labels: Vec<Vec<usize>>,
    target_features: Vec<Vec<Vec<f64>>>,
    test: Vec<SyntheticScene>,
}

fn build_pools(config: &HarnessConfig) -> Pools {
    let scene = &config.scene;
    let source = generate_scenes(config.seed, config.source_scenes, Domain::SourceRgb, config.bias_strength, scene);
    let source_labels = source.iter().map(|s| cell_labels(&s.instances, scene)).collect();
    // Unlabeled target pool and held-out target split use disjoint indices.
    let target: Vec<SyntheticScene> = generate_scenes(
        config.seed,
        config.target_scenes + config.test_scenes,
        Domain::TargetGray,
        config.bias_strength,
        scene,
    );
    let (train, test) = target.split_at(config.target_scenes);
    Pools {
        source,
        source_labels,
        target_features: train.iter().map(|s| cell_features(&s.image, scene)).collect(),
        test: test.to_vec(),
    }
}

fn augment_source(
    scene: &SyntheticScene,
    augmentation: SourceAugmentation,
    policy: &AugmentationPolicy,
    image_id: u64,
) -> crate::engine::ImageBuffer {
    match augmentation {
        SourceAugmentation::Vanilla => scene.image.clone(),
        SourceAugmentation::FullGray => apply_full_gray(&scene.image),
        SourceAugmentation::Saga => apply_saga(&scene.image, &scene.instances, policy, image_id).0,
    }
}

fn add_noise(rows: &mut [Vec<f64>], noise: &Normal<f64>, rng: &mut ChaCha8Rng) {
    for v in rows.iter_mut().flatten() {
        *v += noise.sample(rng);
    }
}

/// Teacher mAP50 on held-out target scenes, one fixed box per cell.
pub fn evaluate(
    shape: &MlpShape,
    params: &ModelParams,
    scenes: &[SyntheticScene],
    scene_config: &SceneConfig,
) -> Result<f64, HarnessError> {
    let gt = scenes_manifest(scenes, scene_config);
    let mut detections = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        for (cell, x) in cell_features(&scene.image, scene_config).iter().enumerate() {
            let p = shape.predict(params, x);
            for (k, &score) in p.iter().enumerate().skip(1) {
                if score >= 1e-3 {
                    detections.push((
                        i as u64 + 1,
                        Instance::new(k as u32 - 1, Region::Box(scene_config.cell_box(cell)))
                            .with_score(score),
                    ));
                }
            }
        }
    }
    let set = DetectionSet::new(&gt, detections)?;
    Ok(map50(&set, &gt)?.map)
}

/// Burn-in on labeled source scenes, then mean-teacher adaptation on the
/// unlabeled target pool. Deterministic for a given config.
pub fn train_adaptation(config: &HarnessConfig) -> Result<HarnessRun, HarnessError> {
    config.validate()?;
    let shape = config.shape();
    let pools = build_pools(config);
    let policy = AugmentationPolicy::saga(config.seed);
    let noise = Normal::new(0.0, config.student_noise.max(0.0)).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(counter_u64(config.seed, TRAIN_STREAM, 0));
    let mut init_rng = ChaCha8Rng::seed_from_u64(counter_u64(config.seed, INIT_STREAM, 0));

    let mut student = shape.init(&mut init_rng);
    let mut velocity = vec![0.0; student.len()];
    let mut state: Option<AdaptationState> = None;
    let mut curve = Vec::with_capacity(config.total_iters as usize);
    let mut burn_in_sum = 0.0;
    let mut initial_loss: Option<f64> = None;

    for iteration in 0..config.total_iters {
        let mut src_x = Vec::new();
        let mut src_y = Vec::new();
        for _ in 0..config.batch_scenes {
            let idx = rng.random_range(0..pools.source.len());
            let image = augment_source(&pools.source[idx], config.augmentation, &policy, idx as u64 + 1);
            src_x.extend(cell_features(&image, &config.scene));
            src_y.extend_from_slice(&pools.source_labels[idx]);
        }
        add_noise(&mut src_x, &noise, &mut rng);

        let mut tgt_x = Vec::new();
        let mut tgt_y = Vec::new();
        if let Some(st) = &mut state {
            for _ in 0..config.batch_scenes {
                let idx = rng.random_range(0..pools.target_features.len());
                let clean = &pools.target_features[idx];
                let labels = pseudo_labels(&shape, &st.teacher, clean, config.threshold);
                for (cell, class) in labels {
                    tgt_x.push(clean[cell].clone());
                    tgt_y.push(class);
                }
            }
            add_noise(&mut tgt_x, &noise, &mut rng);
            st.student = student.clone();
        }

        let source: Vec<Sample<'_>> = src_x.iter().map(Vec::as_slice).zip(src_y.iter().copied()).collect();
        let target: Vec<Sample<'_>> = tgt_x.iter().map(Vec::as_slice).zip(tgt_y.iter().copied()).collect();
        let (losses, grad) = harness_gradient(&shape, &student, &source, &target, config.target_weight);

        let phase = if state.is_some() { Phase::Adaptation } else { Phase::BurnIn };
        if !losses.total.is_finite() {
            return Err(diverged(iteration, losses.total, burn_in_sum, config, &student));
        }
        let reference = match phase {
            Phase::Adaptation => burn_in_sum / config.burn_in_iters as f64,
            Phase::BurnIn => *initial_loss.get_or_insert(losses.total),
        };
        if losses.total > config.divergence_factor * reference {
            return Err(diverged(iteration, losses.total, burn_in_sum, config, &student));
        }
        if phase == Phase::BurnIn {
            burn_in_sum += losses.total;
        }

        for ((p, v), g) in student.0.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = config.momentum * *v - config.learning_rate * g;
            *p += *v;
        }
        if !student.is_finite() {
            return Err(diverged(iteration, f64::NAN, burn_in_sum, config, &student));
        }

        curve.push(IterationLog {
            iteration,
            phase,
            losses,
            pseudo_labels: target.len(),
        });

        match &mut state {
            Some(st) => {
                st.student = student.clone();
                ema_update_in_place(st)?;
            }
            None if iteration + 1 == config.burn_in_iters => {
                let mut st = AdaptationState::from_student(
                    student.clone(),
                    config.alpha,
                    config.burn_in_iters,
                    config.threshold,
                )?;
                st.iteration = iteration + 1;
                state = Some(st);
            }
            None => {}
        }
    }

    let final_state = state.expect("total_iters > burn_in_iters");
    Ok(HarnessRun {
        teacher_target_map50: evaluate(&shape, &final_state.teacher, &pools.test, &config.scene)?,
        student_target_map50: evaluate(&shape, &final_state.student, &pools.test, &config.scene)?,
        config: config.clone(),
        curve,
        final_state,
    })
}

fn diverged(
    iteration: u64,
    loss: f64,
    burn_in_sum: f64,
    config: &HarnessConfig,
    student: &ModelParams,
) -> HarnessError {
    let finite = student.0.iter().filter(|v| v.is_finite()).count();
    let max_abs = student.0.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
    HarnessError::Diverged {
        iteration,
        loss,
        burn_in_mean: burn_in_sum / config.burn_in_iters.min(iteration.max(1)) as f64,
        dump: format!(
            "augmentation={} seed={} lr={} params: {finite}/{} finite, max |w| = {max_abs:.3e}",
            config.augmentation.name(),
            config.seed,
            config.learning_rate,
            student.len()
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub teacher_target_map50: f64,
    pub student_target_map50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub augmentation: SourceAugmentation,
    pub per_seed: Vec<SeedResult>,
    pub median_map50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Median SAGA minus median vanilla, when both arms ran.
    pub saga_minus_vanilla: Option<f64>,
    pub saga_minus_fullgray: Option<f64>,
    /// Every available margin is strictly positive.
    pub saga_wins: bool,
}

/// Settings the run depends on that are choices rather than measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEcho {
    pub alpha: f64,
    pub pseudo_label_threshold: f64,
    pub teacher_init: String,
    pub target_weight: f64,
    pub ap_interpolation: String,
    pub iou_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub toolkit_version: String,
    pub base_config: HarnessConfig,
    pub decisions: DecisionEcho,
    pub arms: Vec<ArmSummary>,
    pub verdict: Verdict,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Runs each augmentation arm over every seed (in parallel) and compares
/// median teacher mAP50.
pub fn run_comparison(
    base: &HarnessConfig,
    arms: &[SourceAugmentation],
    seeds: &[u64],
) -> Result<(ComparisonReport, Vec<HarnessRun>), HarnessError> {
    base.validate()?;
    let jobs: Vec<(SourceAugmentation, u64)> = arms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let runs: Vec<HarnessRun> = jobs
        .par_iter()
        .map(|&(augmentation, seed)| {
            train_adaptation(&HarnessConfig {
                augmentation,
                seed,
                ..base.clone()
            })
        })
        .collect::<Result<_, _>>()?;

    let summaries: Vec<ArmSummary> = arms
        .iter()
        .map(|&arm| {
            let per_seed: Vec<SeedResult> = runs
                .iter()
                .filter(|r| r.config.augmentation == arm)
                .map(|r| SeedResult {
                    seed: r.config.seed,
                    teacher_target_map50: r.teacher_target_map50,
                    student_target_map50: r.student_target_map50,
                })
                .collect();
            let maps: Vec<f64> = per_seed.iter().map(|s| s.teacher_target_map50).collect();
            ArmSummary {
                augmentation: arm,
                median_map50: median(&maps),
                per_seed,
            }
        })
        .collect();

    let med = |a: SourceAugmentation| summaries.iter().find(|s| s.augmentation == a).map(|s| s.median_map50);
    let saga = med(SourceAugmentation::Saga);
    let vs_vanilla = saga.zip(med(SourceAugmentation::Vanilla)).map(|(s, v)| s - v);
    let vs_full = saga.zip(med(SourceAugmentation::FullGray)).map(|(s, f)| s - f);
    let margins: Vec<f64> = vs_vanilla.into_iter().chain(vs_full).collect();
    let verdict = Verdict {
        saga_minus_vanilla: vs_vanilla,
        saga_minus_fullgray: vs_full,
        saga_wins: !margins.is_empty() && margins.iter().all(|&m| m > 0.0),
    };

    let report = ComparisonReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        base_config: base.clone(),
        decisions: DecisionEcho {
            alpha: base.alpha,
            pseudo_label_threshold: base.threshold,
            teacher_init: "copy of student at end of burn-in".into(),
            target_weight: base.target_weight,
            ap_interpolation: INTERPOLATION.into(),
            iou_threshold: 0.5,
        },
        arms: summaries,
        verdict,
    };
    Ok((report, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HarnessConfig {
        HarnessConfig {
            burn_in_iters: 20,
            total_iters: 40,
            source_scenes: 32,
            target_scenes: 32,
            test_scenes: 16,
            batch_scenes: 4,
            ..HarnessConfig::default()
        }
    }

    #[test]
    fn loss_breakdown_sums() {
        let l = LossBreakdown::new(0.25, 0.5);
        assert_eq!(l.total, 0.75);
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.total_iters = c.burn_in_iters;
        assert!(c.validate().is_err());
        let mut c = small();
        c.alpha = 1.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn zero_alpha_and_unreachable_threshold() {
        let run = train_adaptation(&HarnessConfig {
            alpha: 0.0,
            threshold: 1.0,
            ..small()
        })
        .unwrap();
        assert_eq!(run.final_state.teacher, run.final_state.student);
        for log in run.curve.iter().filter(|l| l.phase == Phase::Adaptation) {
            assert_eq!(log.losses.l_tgt, 0.0);
            assert_eq!(log.pseudo_labels, 0);
        }
    }

    #[test]
    fn deterministic() {
        let a = train_adaptation(&small()).unwrap();
        let b = train_adaptation(&small()).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.teacher_target_map50, b.teacher_target_map50);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn divergence_is_detected() {
        let err = train_adaptation(&HarnessConfig {
            learning_rate: 1e6,
            ..small()
        })
        .unwrap_err();
        assert!(matches!(err, HarnessError::Diverged { .. }), "{err}");
    }

    #[test]
    fn csv_has_one_row_per_iteration() {
        let run = train_adaptation(&small()).unwrap();
        let csv = run.curve_csv();
        assert_eq!(csv.lines().count(), 1 + 40);
        assert!(csv.lines().nth(21).unwrap().contains("adaptation"));
    }
}
