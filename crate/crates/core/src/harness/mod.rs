//! Desk-scale mean-teacher adaptation.
//!
//! A tiny per-cell MLP detector is trained on labeled color scenes (burn-in),
//! then adapted to unlabeled gray scenes with teacher pseudo-labels and an
//! EMA teacher. Source scenes optionally pass through the augmentation
//! engine first, which is how the SAGA / full-gray / vanilla arms differ.

mod ema;
mod model;
mod scene;
mod train;

use crate::eval::EvalError;

pub use ema::{ema_update, ema_update_in_place, AdaptationState};
pub use model::{MlpShape, ModelParams, Sample};
pub use scene::{
    cell_features, cell_labels, generate_scenes, scenes_manifest, Domain, SceneConfig,
    SyntheticScene,
};
pub use train::{
    evaluate, harness_gradient, harness_loss, median, pseudo_labels, run_comparison,
    train_adaptation, ArmSummary, ComparisonReport, DecisionEcho, HarnessConfig, HarnessRun,
    IterationLog, LossBreakdown, Phase, SeedResult, SourceAugmentation, Verdict,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid harness configuration: {0}")]
    Config(String),
    #[error("teacher has {teacher} parameters but student has {student}")]
    DimensionMismatch { teacher: usize, student: usize },
    #[error("training diverged at iteration {iteration}: loss {loss} (burn-in mean {burn_in_mean}); {dump}")]
    Diverged {
        iteration: u64,
        loss: f64,
        burn_in_mean: f64,
        dump: String,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}
