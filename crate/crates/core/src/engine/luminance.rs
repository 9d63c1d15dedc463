//! Gray conversion with the fixed channel weights 0.2989 / 0.5870 / 0.1140.
//!
//! The weights sum to 0.9999, so a gray input `(v, v, v)` can come back one
//! level darker. The weights are used as given, without renormalizing.

/// Channel weights of the gray conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuminanceWeights {
    pub wr: f64,
    pub wg: f64,
    pub wb: f64,
}

impl LuminanceWeights {
    pub const STANDARD: LuminanceWeights = LuminanceWeights {
        wr: 0.2989,
        wg: 0.5870,
        wb: 0.1140,
    };

    pub fn sum(&self) -> f64 {
        self.wr + self.wg + self.wb
    }
}

// Weights in units of 1e-4, so the weighted sum is an exact integer.
const WR: u32 = 2989;
const WG: u32 = 5870;
const WB: u32 = 1140;
const SCALE: u32 = 10_000;

/// `round_half_to_even(0.2989 r + 0.5870 g + 0.1140 b)`, computed exactly.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let s = WR * u32::from(r) + WG * u32::from(g) + WB * u32::from(b);
    let (q, rem) = (s / SCALE, s % SCALE);
    let rounded = if rem > SCALE / 2 || (rem == SCALE / 2 && q % 2 == 1) {
        q + 1
    } else {
        q
    };
    // The weights sum below 1, so the result never exceeds 255.
    rounded.min(255) as u8
}

#[inline]
pub fn gray_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let v = luminance(r, g, b);
    [v, v, v]
}
