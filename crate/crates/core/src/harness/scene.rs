//! Synthetic detection scenes with a controllable color shortcut.
//!
//! A scene is a square grid of cells. A cell holds background texture, a
//! labeled object, or (source domain only) an unlabeled look-alike drawn with
//! the same shapes. Object class is carried by shape; in the source domain
//! the object hue is also tied to the class with probability
//! `bias_strength`. Target scenes are rendered the same way, without
//! look-alikes, and then grayed, so only shape remains class-discriminative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, Category, DatasetManifest, ImageRecord, Instance, Region, Split};
use crate::engine::{apply_full_gray, luminance, ImageBuffer};
use crate::rng::counter_u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    SourceRgb,
    TargetGray,
}

impl Domain {
    fn stream(self) -> u64 {
        match self {
            Domain::SourceRgb => 0x5352_4300,
            Domain::TargetGray => 0x5447_5400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Cells per side.
    pub grid: u32,
    /// Cell side in pixels.
    pub cell: u32,
    /// Average-pooling factor applied to a cell before it reaches the model.
    pub pool: u32,
    /// Number of object classes, 1 to 3.
    pub classes: u32,
    pub object_rate: f64,
    /// Rate of unlabeled look-alikes in source scenes.
    pub decoy_rate: f64,
    /// Per-channel uniform noise amplitude.
    pub pixel_noise: u8,
    /// Minimum gray-level gap between an object and its cell background.
    pub min_contrast: u8,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            cell: 8,
            pool: 2,
            classes: 2,
            object_rate: 0.35,
            decoy_rate: 0.2,
            pixel_noise: 12,
            min_contrast: 50,
        }
    }
}

impl SceneConfig {
    pub fn size(&self) -> u32 {
        self.grid * self.cell
    }

    pub fn cells(&self) -> usize {
        (self.grid * self.grid) as usize
    }

    pub fn feature_len(&self) -> usize {
        let side = (self.cell / self.pool) as usize;
        side * side * 3
    }

    /// Side of the object box; the box sits one pixel inside its cell.
    pub fn object_side(&self) -> u32 {
        self.cell - 2
    }

    pub fn cell_box(&self, index: usize) -> BBox {
        let (cx, cy) = (index as u32 % self.grid, index as u32 / self.grid);
        BBox::new(
            f64::from(cx * self.cell + 1),
            f64::from(cy * self.cell + 1),
            f64::from(self.object_side()),
            f64::from(self.object_side()),
        )
    }

    pub fn categories(&self) -> Vec<Category> {
        const NAMES: [&str; 3] = ["square", "ring", "cross"];
        (0..self.classes)
            .map(|k| Category::new(k, NAMES[k as usize]))
            .collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=3).contains(&self.classes) {
            return Err(format!("classes must be 1..=3, got {}", self.classes));
        }
        if self.cell < 4 || self.pool == 0 || self.cell % self.pool != 0 || self.grid == 0 {
            return Err("cell must be >= 4 and divisible by pool".into());
        }
        if self.object_rate < 0.0 || self.decoy_rate < 0.0 || self.object_rate + self.decoy_rate > 1.0 {
            return Err("object_rate + decoy_rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: ImageBuffer,
    pub instances: Vec<Instance>,
    pub domain: Domain,
    /// Hue in degrees used to paint each instance, aligned with `instances`.
    pub object_hues: Vec<f64>,
}

fn shape_contains(class: u32, lx: u32, ly: u32, side: u32) -> bool {
    match class {
        0 => true,
        1 => lx == 0 || ly == 0 || lx == side - 1 || ly == side - 1,
        _ => {
            let c = side as i64 - 1;
            (2 * lx as i64 - c).abs() <= 1 || (2 * ly as i64 - c).abs() <= 1
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn gray_of(rgb: [u8; 3]) -> i32 {
    i32::from(luminance(rgb[0], rgb[1], rgb[2]))
}

/// Hue tied to `class` with probability `bias`, otherwise uniform.
fn object_hue(rng: &mut ChaCha8Rng, class: u32, classes: u32, bias: f64) -> f64 {
    if rng.random::<f64>() < bias {
        let center = 360.0 * f64::from(class) / f64::from(classes);
        (center + rng.random_range(-15.0..15.0)).rem_euclid(360.0)
    } else {
        rng.random_range(0.0..360.0)
    }
}

/// Paint color with the requested hue, at least `min_contrast` gray levels
/// away from `background`.
fn contrasting_color(rng: &mut ChaCha8Rng, hue: f64, background: [u8; 3], min_contrast: u8) -> [u8; 3] {
    let bg = gray_of(background);
    let sat = rng.random_range(0.6..1.0);
    for _ in 0..64 {
        let rgb = hsv_to_rgb(hue, sat, rng.random_range(0.3..1.0));
        if (gray_of(rgb) - bg).abs() >= i32::from(min_contrast) {
            return rgb;
        }
    }
    // Fall back to whichever extreme is farther from the background.
    let v = if bg < 128 { 1.0 } else { 0.15 };
    hsv_to_rgb(hue, sat, v)
}

fn render(config: &SceneConfig, domain: Domain, bias: f64, rng: &mut ChaCha8Rng) -> SyntheticScene {
    let size = config.size();
    let mut image = ImageBuffer::filled(size, size, [0, 0, 0]).expect("positive size");
    let mut instances = Vec::new();
    let mut hues = Vec::new();
    let side = config.object_side();

    for index in 0..config.cells() {
        let (cx, cy) = (index as u32 % config.grid, index as u32 / config.grid);
        let (x0, y0) = (cx * config.cell, cy * config.cell);
        let background = hsv_to_rgb(
            rng.random_range(0.0..360.0),
            rng.random_range(0.0..0.7),
            rng.random_range(0.25..0.9),
        );
        for y in y0..y0 + config.cell {
            for x in x0..x0 + config.cell {
                image.set_pixel(x, y, background);
            }
        }

        let roll: f64 = rng.random();
        let decoy_rate = if domain == Domain::SourceRgb { config.decoy_rate } else { 0.0 };
        let content = if roll < config.object_rate {
            Some(true)
        } else if roll < config.object_rate + decoy_rate {
            Some(false)
        } else {
            None
        };
        let Some(labeled) = content else { continue };

        let class = rng.random_range(0..config.classes);
        let hue = if labeled {
            object_hue(rng, class, config.classes, bias)
        } else {
            rng.random_range(0.0..360.0)
        };
        let paint = contrasting_color(rng, hue, background, config.min_contrast);
        for ly in 0..side {
            for lx in 0..side {
                if shape_contains(class, lx, ly, side) {
                    image.set_pixel(x0 + 1 + lx, y0 + 1 + ly, paint);
                }
            }
        }
        if labeled {
            instances.push(Instance::new(class, Region::Box(config.cell_box(index))));
            hues.push(hue);
        }
    }

    if config.pixel_noise > 0 {
        let n = i16::from(config.pixel_noise);
        for y in 0..size {
            for x in 0..size {
                let mut px = image.pixel(x, y);
                for c in &mut px {
                    *c = (i16::from(*c) + rng.random_range(-n..=n)).clamp(0, 255) as u8;
                }
                image.set_pixel(x, y, px);
            }
        }
    }

    if domain == Domain::TargetGray {
        image = apply_full_gray(&image);
    }
    SyntheticScene {
        image,
        instances,
        domain,
        object_hues: hues,
    }
}

/// Generates `n` scenes. Scene `i` depends only on `(seed, domain, i)`.
pub fn generate_scenes(
    seed: u64,
    n: usize,
    domain: Domain,
    bias_strength: f64,
    config: &SceneConfig,
) -> Vec<SyntheticScene> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(counter_u64(seed, domain.stream(), i));
            render(config, domain, bias_strength, &mut rng)
        })
        .collect()
}

/// Pooled per-cell features in `[-0.5, 0.5]`, one row per cell, row-major
/// over the grid.
pub fn cell_features(image: &ImageBuffer, config: &SceneConfig) -> Vec<Vec<f64>> {
    let side = config.cell / config.pool;
    let norm = 1.0 / (255.0 * f64::from(config.pool * config.pool));
    (0..config.cells())
        .map(|index| {
            let (cx, cy) = (index as u32 % config.grid, index as u32 / config.grid);
            let mut row = Vec::with_capacity(config.feature_len());
            for by in 0..side {
                for bx in 0..side {
                    let mut acc = [0u32; 3];
                    for dy in 0..config.pool {
                        for dx in 0..config.pool {
                            let px = image.pixel(
                                cx * config.cell + bx * config.pool + dx,
                                cy * config.cell + by * config.pool + dy,
                            );
                            for c in 0..3 {
                                acc[c] += u32::from(px[c]);
                            }
                        }
                    }
                    row.extend(acc.iter().map(|&a| f64::from(a) * norm - 0.5));
                }
            }
            row
        })
        .collect()
}

/// Cell class targets: 0 for background, `category_id + 1` for the cell
/// holding an instance's box center.
pub fn cell_labels(instances: &[Instance], config: &SceneConfig) -> Vec<usize> {
    let mut labels = vec![0; config.cells()];
    for inst in instances {
        let b = inst.region.bounds();
        let cx = ((b.x + b.w / 2.0) / f64::from(config.cell)).floor();
        let cy = ((b.y + b.h / 2.0) / f64::from(config.cell)).floor();
        if cx >= 0.0 && cy >= 0.0 && cx < f64::from(config.grid) && cy < f64::from(config.grid) {
            labels[cy as usize * config.grid as usize + cx as usize] = inst.category_id as usize + 1;
        }
    }
    labels
}

/// Ground-truth manifest for a scene list; image ids are `index + 1`.
pub fn scenes_manifest(scenes: &[SyntheticScene], config: &SceneConfig) -> DatasetManifest {
    let size = config.size();
    DatasetManifest::new(
        config.categories(),
        scenes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rec = ImageRecord::new(i as u64 + 1, format!("scene_{i:05}.png"), size, size)
                    .with_instances(s.instances.clone());
                rec.split = Split::Test;
                rec
            })
            .collect(),
    )
}
