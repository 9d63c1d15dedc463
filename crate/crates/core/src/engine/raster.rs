//! Region rasterization onto a per-pixel bitset.

use crate::annotation::{BBox, Point, Region};

/// One bit per pixel, row-major, sized to a target image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl RegionMask {
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Bit for the `i`-th pixel in row-major order.
    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// # Panics
    /// If the masks have different dimensions.
    pub fn union_with(&mut self, other: &RegionMask) {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dimensions differ"
        );
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn fill_all(&mut self) {
        for y in 0..self.height {
            for x in 0..self.width {
                self.set(x, y);
            }
        }
    }
}

/// Rasterizes a region onto a `width`x`height` canvas.
///
/// A box covers integer pixels `px` with `x <= px < x + w` (same for rows).
/// A polygon covers pixels whose centers are inside under the even-odd rule.
/// Anything outside the canvas is clipped; a region entirely outside yields
/// an empty mask.
pub fn rasterize(region: &Region, width: u32, height: u32) -> RegionMask {
    let mut mask = RegionMask::new(width, height);
    match region {
        Region::Box(b) => fill_box(&mut mask, b),
        Region::Polygon { vertices } => fill_polygon(&mut mask, vertices),
    }
    mask
}

/// First integer `>= v`, clamped into `[0, limit]`.
fn ceil_clamped(v: f64, limit: u32) -> u32 {
    if v.is_nan() {
        return 0;
    }
    v.ceil().clamp(0.0, f64::from(limit)) as u32
}

fn fill_box(mask: &mut RegionMask, b: &BBox) {
    let x0 = ceil_clamped(b.x, mask.width);
    let x1 = ceil_clamped(b.x + b.w, mask.width);
    let y0 = ceil_clamped(b.y, mask.height);
    let y1 = ceil_clamped(b.y + b.h, mask.height);
    for y in y0..y1 {
        for x in x0..x1 {
            mask.set(x, y);
        }
    }
}

fn fill_polygon(mask: &mut RegionMask, vertices: &[Point]) {
    let n = vertices.len();
    if n < 3 {
        return;
    }
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for py in 0..mask.height {
        let yc = f64::from(py) + 0.5;
        crossings.clear();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            // Half-open in y so a vertex on the scanline is counted once.
            if (a.y > yc) != (b.y > yc) {
                crossings.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let (xa, xb) = (span[0], span[1]);
            let start = ((xa - 0.5).floor() - 1.0).clamp(0.0, f64::from(mask.width)) as u32;
            let end = (xb.ceil() + 1.0).clamp(0.0, f64::from(mask.width)) as u32;
            for px in start..end {
                let xc = f64::from(px) + 0.5;
                if xa <= xc && xc < xb {
                    mask.set(px, py);
                }
            }
        }
    }
}
