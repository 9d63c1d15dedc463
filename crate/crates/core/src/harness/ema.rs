use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use super::HarnessError;

/// Student and teacher weights of a mean-teacher run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    /// EMA coefficient: the weight kept on the old teacher.
    pub alpha: f64,
    pub iteration: u64,
    pub burn_in_iters: u64,
    pub pseudo_label_threshold: f64,
}

impl AdaptationState {
    /// Teacher starts as a copy of the student.
    pub fn from_student(
        student: ModelParams,
        alpha: f64,
        burn_in_iters: u64,
        pseudo_label_threshold: f64,
    ) -> Result<Self, HarnessError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(HarnessError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self {
            teacher: student.clone(),
            student,
            alpha,
            iteration: 0,
            burn_in_iters,
            pseudo_label_threshold,
        })
    }
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, element-wise.
/// The student is left alone and the iteration counter advances.
pub fn ema_update(mut state: AdaptationState) -> Result<AdaptationState, HarnessError> {
    ema_update_in_place(&mut state)?;
    Ok(state)
}

pub fn ema_update_in_place(state: &mut AdaptationState) -> Result<(), HarnessError> {
    if state.teacher.len() != state.student.len() {
        return Err(HarnessError::DimensionMismatch {
            teacher: state.teacher.len(),
            student: state.student.len(),
        });
    }
    let a = state.alpha;
    for (t, s) in state.teacher.0.iter_mut().zip(&state.student.0) {
        *t = a * *t + (1.0 - a) * s;
    }
    state.iteration += 1;
    Ok(())
}
