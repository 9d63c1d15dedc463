//! Instance-level gray augmentation: luminance, region rasterization and the
//! compositing step that grays objects while keeping background color.

mod image;
mod luminance;
mod raster;
mod saga;

pub use self::image::{ImageBuffer, ImageError};
pub use luminance::{gray_pixel, luminance, LuminanceWeights};
pub use raster::{rasterize, RegionMask};
pub use saga::{
    apply_full_gray, apply_saga, selection_mask, AppliedReport, AugmentationPolicy,
    InvalidProbability, Mode,
};
