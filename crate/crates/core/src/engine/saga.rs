use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;
use super::luminance::gray_pixel;
use super::raster::{rasterize, RegionMask};
use crate::annotation::Instance;
use crate::rng::counter_bernoulli;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Gray the selected instance regions, keep the background.
    Saga,
    /// Gray every pixel.
    FullGray,
    Identity,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Saga => "saga",
            Mode::FullGray => "fullgray",
            Mode::Identity => "identity",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "saga" => Ok(Mode::Saga),
            "fullgray" | "full-gray" | "full_gray" => Ok(Mode::FullGray),
            "identity" | "none" => Ok(Mode::Identity),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("per-instance probability must lie in [0, 1], got {0}")]
pub struct InvalidProbability(pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    mode: Mode,
    probability: f64,
    category_filter: Option<BTreeSet<u32>>,
    include_ignore: bool,
    seed: u64,
}

impl AugmentationPolicy {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            probability: 1.0,
            category_filter: None,
            include_ignore: true,
            seed,
        }
    }

    pub fn saga(seed: u64) -> Self {
        Self::new(Mode::Saga, seed)
    }

    pub fn full_gray() -> Self {
        Self::new(Mode::FullGray, 0)
    }

    pub fn identity() -> Self {
        Self::new(Mode::Identity, 0)
    }

    pub fn with_probability(mut self, p: f64) -> Result<Self, InvalidProbability> {
        if !(0.0..=1.0).contains(&p) {
            return Err(InvalidProbability(p));
        }
        self.probability = p;
        Ok(self)
    }

    pub fn with_categories(mut self, ids: impl IntoIterator<Item = u32>) -> Self {
        self.category_filter = Some(ids.into_iter().collect());
        self
    }

    pub fn with_include_ignore(mut self, include: bool) -> Self {
        self.include_ignore = include;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn category_filter(&self) -> Option<&BTreeSet<u32>> {
        self.category_filter.as_ref()
    }

    pub fn include_ignore(&self) -> bool {
        self.include_ignore
    }

    /// Whether instance `index` of image `image_id` is grayed under SAGA.
    ///
    /// Every instance consumes its own keyed Bernoulli draw, so filtering one
    /// instance out never changes the draws of the others.
    pub fn selects(&self, image_id: u64, index: usize, instance: &Instance) -> bool {
        let drawn = counter_bernoulli(self.seed, image_id, index as u64, self.probability);
        let category_ok = self
            .category_filter
            .as_ref()
            .is_none_or(|f| f.contains(&instance.category_id));
        let ignore_ok = self.include_ignore || !instance.ignore;
        drawn && category_ok && ignore_ok
    }
}

/// What one application of the engine did to an image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedReport {
    /// Indices of grayed instances, ascending.
    pub grayed: Vec<usize>,
    /// Number of pixels converted to gray.
    pub gray_pixels: usize,
}

/// Union of the masks of the instances selected by `policy`.
pub fn selection_mask(
    width: u32,
    height: u32,
    instances: &[Instance],
    policy: &AugmentationPolicy,
    image_id: u64,
) -> (RegionMask, Vec<usize>) {
    let mut union = RegionMask::new(width, height);
    let mut grayed = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if policy.selects(image_id, i, inst) {
            union.union_with(&rasterize(&inst.region, width, height));
            grayed.push(i);
        }
    }
    (union, grayed)
}

/// Applies `policy` to `image`.
///
/// Under [`Mode::Saga`] the masks of all selected instances are unioned first
/// and every pixel of the union is replaced by the luminance of its original
/// value; pixels outside the union are copied untouched. Overlaps therefore
/// give the same result regardless of instance order.
pub fn apply_saga(
    image: &ImageBuffer,
    instances: &[Instance],
    policy: &AugmentationPolicy,
    image_id: u64,
) -> (ImageBuffer, AppliedReport) {
    match policy.mode {
        Mode::Identity => (image.clone(), AppliedReport::default()),
        Mode::FullGray => {
            let out = apply_full_gray(image);
            let report = AppliedReport {
                grayed: (0..instances.len()).collect(),
                gray_pixels: image.pixel_count(),
            };
            (out, report)
        }
        Mode::Saga => {
            let (mask, grayed) =
                selection_mask(image.width(), image.height(), instances, policy, image_id);
            let mut out = image.clone();
            let mut gray_pixels = 0;
            if !grayed.is_empty() {
                for (i, px) in out.pixels_mut().enumerate() {
                    if mask.get_index(i) {
                        let g = gray_pixel([px[0], px[1], px[2]]);
                        px.copy_from_slice(&g);
                        gray_pixels += 1;
                    }
                }
            }
            (
                out,
                AppliedReport {
                    grayed,
                    gray_pixels,
                },
            )
        }
    }
}

/// Grays the whole image.
pub fn apply_full_gray(image: &ImageBuffer) -> ImageBuffer {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        let g = gray_pixel([px[0], px[1], px[2]]);
        px.copy_from_slice(&g);
    }
    out
}
