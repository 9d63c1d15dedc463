//! Instance-level gray augmentation toolkit.
//!
//! - [`annotation`]: COCO / YOLO / VOC manifests.
//! - [`engine`]: per-instance graying over color backgrounds.
//! - [`pipeline`]: parallel, deterministic batch augmentation.
//! - [`eval`]: IoU matching, AP and mAP at IoU 0.5.
//! - [`harness`]: a small mean-teacher adaptation loop on synthetic scenes.

pub mod annotation;
pub mod engine;
pub mod eval;
pub mod harness;
pub mod pipeline;
pub mod rng;
