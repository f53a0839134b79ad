//! Bit-level emulation of reduced floating-point precision.
//!
//! Values live in ordinary `f32` storage. Reducing precision means keeping
//! the sign bit, all eight exponent bits and only the top `mantissa_bits`
//! of the 23-bit mantissa. A "B-bit float" in this crate's vocabulary is
//! therefore `1 + 8 + mantissa_bits` bits wide, so a 16-bit value keeps 7
//! mantissa bits:
//!
//! ```text
//!    0 0111 1111 1111 1100 1100 1100 1100 110   1.9875
//! &  1 1111 1111 1111 1110 0000 0000 0000 000   16-bit mask
//!    ----------------------------------------
//!    0 0111 1111 1111 1100 0000 0000 0000 000   1.984375
//! ```
//!
//! Two rounding modes are available. [`truncate`] zeroes the dropped bits,
//! which rounds the magnitude toward zero. [`stochastic_round`] picks one of
//! the two neighbouring grid values with probability proportional to
//! proximity, so its expectation equals the input.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MANTISSA_WIDTH: u8 = 23;
const EXPONENT_MASK: u32 = 0x7f80_0000;
const SIGN_MASK: u32 = 0x8000_0000;
const MAGNITUDE_MASK: u32 = 0x7fff_ffff;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrecisionError {
    #[error("mantissa bits must lie in 0..=23, got {0}")]
    MantissaOutOfRange(u32),
    #[error("total bit size must lie in 9..=32, got {0}")]
    BitsizeOutOfRange(u32),
}

/// Number of binary32 mantissa bits retained, always in `0..=23`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MantissaBits(u8);

impl MantissaBits {
    pub const FULL: MantissaBits = MantissaBits(MANTISSA_WIDTH);

    pub fn new(bits: u32) -> Result<Self, PrecisionError> {
        if bits > MANTISSA_WIDTH as u32 {
            return Err(PrecisionError::MantissaOutOfRange(bits));
        }
        Ok(MantissaBits(bits as u8))
    }

    /// Builds the width from a total bit size (`1 + 8 + mantissa`).
    pub fn from_bitsize(bitsize: u32) -> Result<Self, PrecisionError> {
        if !(9..=32).contains(&bitsize) {
            return Err(PrecisionError::BitsizeOutOfRange(bitsize));
        }
        Ok(MantissaBits((bitsize - 9) as u8))
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// Total width of the emulated format: sign + exponent + kept mantissa.
    pub fn bitsize(self) -> u32 {
        1 + 8 + self.0 as u32
    }

    /// Number of low mantissa bits that are dropped.
    pub fn dropped(self) -> u32 {
        (MANTISSA_WIDTH - self.0) as u32
    }

    /// AND-mask applied to the binary32 bit pattern.
    pub fn mask(self) -> u32 {
        !((1u32 << self.dropped()) - 1)
    }
}

impl fmt::Display for MantissaBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rounding {
    Truncate,
    Stochastic,
}

/// When quantization is applied during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    /// Parameters are quantized after each optimizer update.
    PerBatch,
    /// As `PerBatch`, plus every layer output and gradient is quantized.
    PerLayer,
    /// Every elementary addition, multiplication, etc. is quantized.
    PerOperation,
    /// Full binary32 throughout.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionConfig {
    pub mantissa_bits: MantissaBits,
    pub rounding: Rounding,
    pub granularity: Granularity,
}

impl PrecisionConfig {
    pub fn new(mantissa_bits: MantissaBits, rounding: Rounding, granularity: Granularity) -> Self {
        PrecisionConfig { mantissa_bits, rounding, granularity }
    }

    /// Plain binary32, no quantization anywhere.
    pub fn full() -> Self {
        PrecisionConfig::new(MantissaBits::FULL, Rounding::Truncate, Granularity::None)
    }

    pub fn truncate(mantissa_bits: MantissaBits, granularity: Granularity) -> Self {
        PrecisionConfig::new(mantissa_bits, Rounding::Truncate, granularity)
    }

    pub fn stochastic(mantissa_bits: MantissaBits, granularity: Granularity) -> Self {
        PrecisionConfig::new(mantissa_bits, Rounding::Stochastic, granularity)
    }

    pub fn bitsize(&self) -> u32 {
        self.mantissa_bits.bitsize()
    }

    /// True when quantization is a no-op for every input.
    pub fn is_identity(&self) -> bool {
        self.granularity == Granularity::None
            || (self.mantissa_bits == MantissaBits::FULL && self.rounding == Rounding::Truncate)
    }
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        PrecisionConfig::full()
    }
}

/// Seeded pseudo-random stream used for stochastic rounding, weight
/// initialization and shuffling.
///
/// Backed by ChaCha8 with a 64-bit seed and a 64-bit stream selector, so
/// independent consumers (init, shuffling, rounding) can share one seed
/// without sharing a sequence. Output is identical on every platform.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng(inner)
    }

    /// Uniform draw in `[0, 1)` with 24 bits of resolution.
    pub fn unit_f32(&mut self) -> f32 {
        (self.0.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform draw in `[-1, 1)`.
    pub fn symmetric_f32(&mut self) -> f32 {
        2.0 * self.unit_f32() - 1.0
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[inline]
fn is_non_finite_bits(bits: u32) -> bool {
    bits & EXPONENT_MASK == EXPONENT_MASK
}

/// Zeroes the dropped mantissa bits of `x`.
///
/// Sign and exponent are untouched, so the magnitude rounds toward zero.
/// NaN and infinities pass through unchanged.
#[inline]
pub fn truncate(x: f32, bits: MantissaBits) -> f32 {
    let raw = x.to_bits();
    if is_non_finite_bits(raw) {
        return x;
    }
    f32::from_bits(raw & bits.mask())
}

/// Adjacent grid values `(lo, hi)` with `lo <= x <= hi`.
///
/// Both are equal to `x` when `x` is already representable. For `x` above
/// the largest representable magnitude at this width, the outer neighbour is
/// an infinity.
pub fn grid_neighbors(x: f32, bits: MantissaBits) -> (f32, f32) {
    let toward_zero = truncate(x, bits);
    if toward_zero == x || !x.is_finite() {
        return (x, x);
    }
    let step = 1u32 << bits.dropped();
    let raw = toward_zero.to_bits();
    let away = f32::from_bits((raw & SIGN_MASK) | ((raw & MAGNITUDE_MASK) + step));
    if x > 0.0 {
        (toward_zero, away)
    } else {
        (away, toward_zero)
    }
}

/// Rounds `x` to one of its grid neighbours, up with probability
/// `(x - lo) / (hi - lo)`.
///
/// Implemented on the magnitude bits: a uniform integer below the cut is
/// added before masking, which carries into the kept bits with probability
/// equal to the dropped fraction.
#[inline]
pub fn stochastic_round(x: f32, bits: MantissaBits, rng: &mut Rng) -> f32 {
    let dropped = bits.dropped();
    let raw = x.to_bits();
    if dropped == 0 || is_non_finite_bits(raw) {
        return x;
    }
    let low = (1u32 << dropped) - 1;
    if raw & low == 0 {
        return x;
    }
    let noise = rng.next_u32() & low;
    let magnitude = ((raw & MAGNITUDE_MASK) + noise) & bits.mask();
    f32::from_bits((raw & SIGN_MASK) | magnitude)
}

/// Applies the configured rounding mode, or nothing when granularity is
/// [`Granularity::None`].
#[inline]
pub fn quantize(x: f32, cfg: &PrecisionConfig, rng: &mut Rng) -> f32 {
    if cfg.granularity == Granularity::None {
        return x;
    }
    match cfg.rounding {
        Rounding::Truncate => truncate(x, cfg.mantissa_bits),
        Rounding::Stochastic => stochastic_round(x, cfg.mantissa_bits, rng),
    }
}

/// Element-wise [`quantize`] in place.
pub fn quantize_slice(values: &mut [f32], cfg: &PrecisionConfig, rng: &mut Rng) {
    if cfg.is_identity() {
        return;
    }
    match cfg.rounding {
        Rounding::Truncate => {
            let mask = cfg.mantissa_bits.mask();
            for v in values.iter_mut() {
                let raw = v.to_bits();
                if !is_non_finite_bits(raw) {
                    *v = f32::from_bits(raw & mask);
                }
            }
        }
        Rounding::Stochastic => {
            for v in values.iter_mut() {
                *v = stochastic_round(*v, cfg.mantissa_bits, rng);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: u32) -> MantissaBits {
        MantissaBits::new(bits).unwrap()
    }

    /// Brute-force grid: walk every 32-bit pattern whose dropped bits are
    /// zero, near the bit pattern of `x`, and pick the closest on each side.
    fn brute_neighbors(x: f32, bits: MantissaBits) -> (f32, f32) {
        let step = 1u64 << bits.dropped();
        let centre = (x.to_bits() & MAGNITUDE_MASK) as u64;
        let base = centre - centre % step;
        let mut candidates = Vec::new();
        for k in 0..4u64 {
            for mag in [base.saturating_sub(k * step), base + k * step] {
                let mag = mag as u32;
                candidates.push(f32::from_bits(mag));
                candidates.push(-f32::from_bits(mag));
            }
        }
        let lo = candidates
            .iter()
            .copied()
            .filter(|c| c.is_finite() && *c <= x)
            .fold(f32::NEG_INFINITY, f32::max);
        let hi = candidates
            .iter()
            .copied()
            .filter(|c| c.is_finite() && *c >= x)
            .fold(f32::INFINITY, f32::min);
        (lo, hi)
    }

    #[test]
    fn figure_one_mask() {
        let x: f32 = 1.9875;
        assert_eq!(x.to_bits(), 0b0_01111111_11111100110011001100110);
        assert_eq!(m(7).mask(), 0b1_11111111_11111110000000000000000);
        let t = truncate(x, m(7));
        assert_eq!(t.to_bits(), 0b0_01111111_11111100000000000000000);
        assert_eq!(t, 1.984375);
        assert_eq!(m(7).bitsize(), 16);
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(0.0, m(0)), 0.0);
        assert_eq!(truncate(-1.9875, m(7)), -1.984375);
        assert_eq!(truncate(1.9875, m(23)).to_bits(), 1.9875f32.to_bits());
        assert_eq!(truncate(-0.0, m(3)).to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn non_finite_pass_through() {
        for bits in 0..=23 {
            assert!(truncate(f32::NAN, m(bits)).is_nan());
            assert_eq!(truncate(f32::INFINITY, m(bits)), f32::INFINITY);
            assert_eq!(truncate(f32::NEG_INFINITY, m(bits)), f32::NEG_INFINITY);
            let mut rng = Rng::new(1);
            assert!(stochastic_round(f32::NAN, m(bits), &mut rng).is_nan());
        }
        // a NaN payload in the low bits must not turn into infinity
        let nan = f32::from_bits(0x7f80_0001);
        assert!(truncate(nan, m(0)).is_nan());
    }

    #[test]
    fn subnormals_are_masked() {
        let tiny = f32::from_bits(0x0000_00ff);
        assert_eq!(truncate(tiny, m(20)).to_bits(), 0x0000_00f8);
        assert_eq!(truncate(tiny, m(0)), 0.0);
    }

    #[test]
    fn neighbors_match_brute_force() {
        // grid spacing in [1, 2) at 7 mantissa bits is 2^-7
        assert_eq!(grid_neighbors(1.9875, m(7)), (1.984375, 1.9921875));
        assert_eq!(grid_neighbors(1.984375, m(7)), (1.984375, 1.984375));
        assert_eq!(grid_neighbors(-1.9875, m(7)), (-1.9921875, -1.984375));
        assert_eq!(grid_neighbors(1.995, m(7)), (1.9921875, 2.0));
        assert_eq!(brute_neighbors(1.9875, m(7)), (1.984375, 1.9921875));
        let mut rng = Rng::new(7);
        for _ in 0..2000 {
            let x = (rng.symmetric_f32() * 100.0) * rng.unit_f32().powi(6);
            let bits = m(rng.next_u32() % 24);
            assert_eq!(grid_neighbors(x, bits), brute_neighbors(x, bits), "x={x} bits={bits}");
        }
    }

    #[test]
    fn unit_grid_probabilities() {
        // 1.25 with no mantissa bits: neighbours 1 and 2, P(up) = 0.25
        let bits = m(0);
        assert_eq!(grid_neighbors(1.25, bits), (1.0, 2.0));
        let mut rng = Rng::new(3);
        let n = 200_000;
        let ups = (0..n).filter(|_| stochastic_round(1.25, bits, &mut rng) == 2.0).count();
        let p = ups as f64 / n as f64;
        assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt(), "p = {p}");
    }

    #[test]
    fn on_grid_values_are_fixed_points() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            assert_eq!(stochastic_round(1.984375, m(7), &mut rng), 1.984375);
        }
    }

    #[test]
    fn stochastic_mean_within_standard_errors() {
        let x: f32 = 1.9875;
        let bits = m(7);
        let (lo, hi) = grid_neighbors(x, bits);
        let p = (x as f64 - lo as f64) / (hi as f64 - lo as f64);
        let sigma = (hi as f64 - lo as f64) * (p * (1.0 - p)).sqrt();
        let n = 100_000;
        let mut rng = Rng::new(5);
        let mean = (0..n).map(|_| stochastic_round(x, bits, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - x as f64).abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn quantize_dispatch() {
        let mut rng = Rng::new(0);
        let cfg = PrecisionConfig::truncate(m(7), Granularity::PerBatch);
        assert_eq!(quantize(1.9875, &cfg, &mut rng), 1.984375);
        let none = PrecisionConfig::truncate(m(0), Granularity::None);
        assert_eq!(quantize(1.9875, &none, &mut rng), 1.9875);
        let mut values = vec![1.9875f32; 100];
        quantize_slice(&mut values, &cfg, &mut rng);
        assert_eq!(values.iter().sum::<f32>(), 198.4375);
    }

    #[test]
    fn bitsize_conversion() {
        assert_eq!(MantissaBits::from_bitsize(16).unwrap(), m(7));
        assert_eq!(MantissaBits::from_bitsize(12).unwrap(), m(3));
        assert_eq!(MantissaBits::from_bitsize(32).unwrap(), MantissaBits::FULL);
        assert!(MantissaBits::from_bitsize(8).is_err());
        assert!(MantissaBits::new(24).is_err());
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let a: Vec<u32> = (0..8).scan(Rng::with_stream(9, 2), |r, _| Some(r.next_u32())).collect();
        let b: Vec<u32> = (0..8).scan(Rng::with_stream(9, 2), |r, _| Some(r.next_u32())).collect();
        let c: Vec<u32> = (0..8).scan(Rng::with_stream(9, 3), |r, _| Some(r.next_u32())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
