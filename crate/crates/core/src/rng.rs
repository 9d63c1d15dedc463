//! Counter-based random draws: a value is a pure function of its key, so
//! results do not depend on thread scheduling or draw order.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a `(seed, stream, counter)` triple to 64 random bits.
#[inline]
pub fn counter_u64(seed: u64, stream: u64, counter: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ stream.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
    mix64(b ^ counter.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(GOLDEN))
}

/// Uniform in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn counter_unit(seed: u64, stream: u64, counter: u64) -> f64 {
    (counter_u64(seed, stream, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Bernoulli draw keyed by `(seed, stream, counter)`. `p >= 1` is always
/// true and `p <= 0` always false.
#[inline]
pub fn counter_bernoulli(seed: u64, stream: u64, counter: u64, p: f64) -> bool {
    counter_unit(seed, stream, counter) < p
}
