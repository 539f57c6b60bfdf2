//! Fixed-point tensors and the quantization/normalization functions used by
//! the training pipeline.
//!
//! A tensor element is a signed integer `a` at precision `p` representing the
//! real value `a / 2^p`. All rounding is deterministic (half away from zero)
//! except for [`quant_weight_grad_wage`], which implements the stochastic
//! rounding of the WAGE baseline and never runs inside the secure path.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;
use sha2::{Digest, Sha256};

/// Errors arising from malformed tensor construction or configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FxpError {
    /// Shape product does not match the data length.
    ShapeMismatch { expected: usize, got: usize },
    /// An element does not fit in the declared bit-width.
    OutOfRange { value: i64, bits: u8 },
    /// A precision field lies outside the supported interval.
    BadPrecision { name: &'static str, value: i16 },
}

impl fmt::Display for FxpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FxpError::ShapeMismatch { expected, got } => {
                write!(f, "shape product {expected} does not match data length {got}")
            }
            FxpError::OutOfRange { value, bits } => {
                write!(f, "element {value} does not fit in {bits} bits")
            }
            FxpError::BadPrecision { name, value } => {
                write!(f, "precision field {name}={value} outside supported range")
            }
        }
    }
}

impl core::error::Error for FxpError {}

/// Flat tensor of signed fixed-point integers.
///
/// `bits` is the storage width (8 for quantized values, 32 for accumulators);
/// every element must lie in `[-2^(bits-1), 2^(bits-1) - 1]`. The represented
/// value of element `a` is exactly `a / 2^prec`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    pub data: Vec<i32>,
    pub shape: Vec<usize>,
    pub bits: u8,
    pub prec: u8,
}

impl FixedTensor {
    /// Builds a tensor, validating shape and range invariants.
    pub fn new(data: Vec<i32>, shape: Vec<usize>, bits: u8, prec: u8) -> Result<Self, FxpError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(FxpError::ShapeMismatch { expected, got: data.len() });
        }
        for &a in &data {
            if !fits_bits(i64::from(a), bits) {
                return Err(FxpError::OutOfRange { value: i64::from(a), bits });
            }
        }
        Ok(FixedTensor { data, shape, bits, prec })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>, bits: u8, prec: u8) -> Self {
        let len = shape.iter().product();
        FixedTensor { data: vec![0; len], shape, bits, prec }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Represented real values, for baselines and reporting.
    pub fn values_f64(&self) -> Vec<f64> {
        let scale = libm::exp2(-f64::from(self.prec));
        self.data.iter().map(|&a| f64::from(a) * scale).collect()
    }

    fn map(&self, bits: u8, prec: u8, f: impl Fn(i32) -> i32) -> FixedTensor {
        FixedTensor {
            data: self.data.iter().map(|&a| f(a)).collect(),
            shape: self.shape.clone(),
            bits,
            prec,
        }
    }
}

/// Precision layout of the whole pipeline: weight, activation, gradient and
/// moment precisions, the power-of-two learning rate, and the per-layer
/// normalizer exponents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecisionConfig {
    /// Ternary-target precision, fixed at 1.
    pub p_w: u8,
    /// Stored-weight precision.
    pub p_w_bar: u8,
    /// Activation precision.
    pub p_a: u8,
    /// Activation-gradient precision.
    pub p_e: u8,
    /// Weight-gradient precision.
    pub p_g: u8,
    /// First-moment precision.
    pub p_m: u8,
    /// Second-moment precision.
    pub p_v: u8,
    /// Learning rate as a power-of-two exponent: the step scales by `2^eta`.
    pub eta: i8,
    /// Exponent of the optimizer epsilon: `eps = 2^eps_exp`.
    pub eps_exp: i8,
    /// Per-layer normalizer exponents for the activation scaling shift.
    pub alpha: Vec<u8>,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        PrecisionConfig {
            p_w: 1,
            p_w_bar: 7,
            p_a: 7,
            p_e: 7,
            p_g: 7,
            p_m: 7,
            p_v: 7,
            eta: 0,
            eps_exp: -7,
            alpha: Vec::new(),
        }
    }
}

impl PrecisionConfig {
    /// Checks the field invariants: precisions in `[1, 30]`, `p_w == 1`, and
    /// a non-negative epsilon integer at the second-moment precision.
    pub fn validate(&self) -> Result<(), FxpError> {
        let fields = [
            ("p_w", self.p_w),
            ("p_w_bar", self.p_w_bar),
            ("p_a", self.p_a),
            ("p_e", self.p_e),
            ("p_g", self.p_g),
            ("p_m", self.p_m),
            ("p_v", self.p_v),
        ];
        for (name, value) in fields {
            if !(1..=30).contains(&value) {
                return Err(FxpError::BadPrecision { name, value: i16::from(value) });
            }
        }
        if self.p_w != 1 {
            return Err(FxpError::BadPrecision { name: "p_w", value: i16::from(self.p_w) });
        }
        if i16::from(self.p_v) + i16::from(self.eps_exp) < 0 {
            return Err(FxpError::BadPrecision { name: "eps_exp", value: i16::from(self.eps_exp) });
        }
        Ok(())
    }

    /// Epsilon as an integer at the second-moment precision.
    pub fn eps_int(&self) -> i32 {
        1i32 << (i16::from(self.p_v) + i16::from(self.eps_exp))
    }

    /// Truncated SHA-256 digest of the canonical field encoding. Both parties
    /// compare this during the handshake so a configuration mismatch aborts
    /// before any share leaves the machine.
    pub fn config_hash(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update([
            self.p_w,
            self.p_w_bar,
            self.p_a,
            self.p_e,
            self.p_g,
            self.p_m,
            self.p_v,
            self.eta as u8,
            self.eps_exp as u8,
        ]);
        h.update((self.alpha.len() as u32).to_be_bytes());
        h.update(&self.alpha);
        let digest = h.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        out
    }
}

/// True when `x` fits in a signed two's-complement integer of width `bits`.
pub fn fits_bits(x: i64, bits: u8) -> bool {
    if bits >= 64 {
        return true;
    }
    let hi = (1i64 << (bits - 1)) - 1;
    let lo = -(1i64 << (bits - 1));
    (lo..=hi).contains(&x)
}

fn assert_fits(x: i64, bits: u8) -> i32 {
    assert!(fits_bits(x, bits), "element {x} does not fit in {bits} bits");
    x as i32
}

/// Arithmetic right shift by `t` with rounding half away from zero:
/// the result is `round(x / 2^t)` with ties moving away from zero.
pub fn round_shift_away(x: i64, t: u32) -> i64 {
    if t == 0 {
        return x;
    }
    (x + (1i64 << (t - 1)) - i64::from(x < 0)) >> t
}

/// Smallest exponent `s` with `2^s >= x`; zero for `x <= 1`.
pub fn npow_exact(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Next-power-of-two exponent computed the way the garbled circuit does it:
/// smear the bits of `x - 1` downward with log2(b) shift/OR rounds, add one,
/// and count trailing zeros. Agrees with [`npow_exact`] for all `x < 2^b`.
pub fn npow_smear(x: u64, b: u32) -> u32 {
    debug_assert!(b == 64 || x < (1u64 << b));
    if x <= 1 {
        return 0;
    }
    let mut y = x - 1;
    let mut shift = 1;
    while shift < b {
        y |= y >> shift;
        shift <<= 1;
    }
    (y + 1).trailing_zeros()
}

/// Exponent of the power of two closest to the positive value `a / 2^prec`,
/// ties resolved toward the larger power. Only the WAGE baseline uses this.
pub fn cpow(a: i64, prec: u32) -> i32 {
    assert!(a > 0, "cpow requires a positive value");
    let target = i128::from(a);
    let mut best_t: u32 = 0;
    let mut best_dist = (1i128 - target).abs();
    for t in 1..=62u32 {
        let dist = ((1i128 << t) - target).abs();
        if dist <= best_dist {
            best_t = t;
            best_dist = dist;
        }
    }
    best_t as i32 - prec as i32
}

/// Bitwise OR of the element magnitudes, the aggregate whose next power of
/// two equals that of the true maximum magnitude.
pub fn abs_or_aggregate(data: &[i32]) -> u64 {
    data.iter().fold(0u64, |acc, &a| acc | i64::from(a).unsigned_abs())
}

/// Storage width for a saturated value at precision `q`.
fn sat_bits(q: u8) -> u8 {
    if q < 8 {
        8
    } else if q < 16 {
        16
    } else {
        32
    }
}

/// Rounds every element to precision `q`, keeping the bit-width. For `q >= p`
/// this is an exact left shift; otherwise a rounding right shift. Panics if
/// an output element exceeds the tensor bit-width.
pub fn quant_nearest(v: &FixedTensor, q: u8) -> FixedTensor {
    let p = v.prec;
    v.map(v.bits, q, |a| {
        let x = i64::from(a);
        let y = if q >= p {
            x << (q - p)
        } else {
            round_shift_away(x, u32::from(p - q))
        };
        assert_fits(y, v.bits)
    })
}

/// Clamps every integer element to `[-(2^q - 1), 2^q - 1]`. The input must
/// already be at precision `q`; the output storage narrows to the smallest
/// standard width that holds the clamped range.
pub fn saturate(v: &FixedTensor, q: u8) -> FixedTensor {
    debug_assert_eq!(v.prec, q, "saturate expects an input already at precision q");
    let hi = (1i32 << q) - 1;
    v.map(sat_bits(q), q, |a| a.clamp(-hi, hi))
}

/// Round to precision `q`, then clamp to the representable open unit range.
pub fn quantize(v: &FixedTensor, q: u8) -> FixedTensor {
    saturate(&quant_nearest(v, q), q)
}

/// Maps a stored weight at precision `p_w_bar` to its ternary value in
/// {-1, 0, 1} at precision 0: double the result of quantizing to precision 1.
/// With `p_w_bar = 7` this is sign(a) when `|a| >= 32`, else 0.
pub fn ternarize(w: &FixedTensor) -> FixedTensor {
    let q = quantize(w, 1);
    FixedTensor { data: q.data, shape: q.shape, bits: 8, prec: 0 }
}

/// Scales a post-activation accumulator down by `2^alpha` with a rounding
/// shift, then clamps to the activation range at precision `p_a`.
pub fn quant_activation(v: &FixedTensor, alpha: u8, p_a: u8) -> FixedTensor {
    debug_assert_eq!(v.prec, p_a, "activation accumulator carries the activation precision");
    let hi = (1i32 << p_a) - 1;
    v.map(sat_bits(p_a), p_a, |a| {
        let y = round_shift_away(i64::from(a), u32::from(alpha));
        (y as i32).clamp(-hi, hi)
    })
}

/// Normalization shift shared by the gradient quantizers: the next power of
/// two of the OR-aggregate of magnitudes, computed with the smear variant at
/// the tensor bit-width.
fn grad_norm_shift(g: &FixedTensor) -> u32 {
    npow_smear(abs_or_aggregate(&g.data), u32::from(g.bits))
}

fn grad_normalize(g: &FixedTensor, p_out: u8, bits: u8, clamp_to: Option<i32>) -> FixedTensor {
    let s = grad_norm_shift(g);
    g.map(bits, p_out, |a| {
        let x = i64::from(a);
        let y = if s >= u32::from(p_out) {
            round_shift_away(x, s - u32::from(p_out))
        } else {
            x << (u32::from(p_out) - s)
        };
        let y = match clamp_to {
            Some(hi) => y.clamp(i64::from(-hi), i64::from(hi)),
            None => y,
        };
        assert_fits(y, bits)
    })
}

/// Activation-gradient quantizer: divide by the next power of two of the
/// largest magnitude, round to precision `p_e`, and saturate. An all-zero
/// input passes through unchanged.
pub fn quant_act_grad(e: &FixedTensor, p_e: u8) -> FixedTensor {
    grad_normalize(e, p_e, sat_bits(p_e), Some((1i32 << p_e) - 1))
}

/// Weight-gradient quantizer: same normalization as [`quant_act_grad`] but
/// rounding only, no saturation, so the scaled maximum may reach exactly one.
pub fn quant_weight_grad(g: &FixedTensor, p_g: u8) -> FixedTensor {
    grad_normalize(g, p_g, 32, None)
}

/// Stochastically rounded weight-gradient quantizer of the WAGE baseline:
/// normalize by the closest power of two of the maximum magnitude, scale by
/// the learning rate `2^eta`, and round each magnitude to floor + Bernoulli
/// of the fractional part. Plaintext-only; the secure path never calls this.
pub fn quant_weight_grad_wage(
    g: &FixedTensor,
    p_g: u8,
    eta: i8,
    rng: &mut impl RngCore,
) -> FixedTensor {
    let max_mag = g.data.iter().map(|&a| i64::from(a).unsigned_abs()).max().unwrap_or(0);
    if max_mag == 0 {
        return FixedTensor { data: vec![0; g.len()], shape: g.shape.clone(), bits: 32, prec: p_g };
    }
    let s = cpow(max_mag as i64, u32::from(g.prec));
    let scale = libm::exp2(f64::from(eta) - f64::from(s) - f64::from(g.prec));
    let out = g
        .data
        .iter()
        .map(|&a| {
            let gn = f64::from(a) * scale;
            let mag = libm::fabs(gn);
            let fl = libm::floor(mag);
            let frac = mag - fl;
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let rounded = fl + f64::from(u8::from(u < frac));
            let sign = if gn < 0.0 { -1.0 } else { 1.0 };
            let value = sign * rounded * libm::exp2(1.0 - f64::from(p_g));
            let int = value * libm::exp2(f64::from(p_g));
            assert_fits(int as i64, 32)
        })
        .collect();
    FixedTensor { data: out, shape: g.shape.clone(), bits: 32, prec: p_g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    /// Independent rational oracle: round(x / d) with ties away from zero,
    /// computed by integer division rather than shifts.
    fn round_div_away(x: i128, d: i128) -> i128 {
        let q = x / d;
        let r = x % d;
        if 2 * r.abs() >= d {
            q + x.signum()
        } else {
            q
        }
    }

    fn t8(data: Vec<i32>, prec: u8) -> FixedTensor {
        let n = data.len();
        FixedTensor::new(data, vec![n], 8, prec).unwrap()
    }

    fn t32(data: Vec<i32>, prec: u8) -> FixedTensor {
        let n = data.len();
        FixedTensor::new(data, vec![n], 32, prec).unwrap()
    }

    #[test]
    fn quant_nearest_frozen() {
        assert_eq!(quant_nearest(&t8(vec![100], 7), 2).data, vec![3]);
        assert_eq!(quant_nearest(&t8(vec![0], 7), 3).data, vec![0]);
        let up = quant_nearest(&t8(vec![12], 4), 6);
        assert_eq!(up.data, vec![48]);
        assert_eq!(up.prec, 6);
    }

    #[test]
    fn saturate_frozen() {
        assert_eq!(saturate(&t32(vec![200], 7), 7).data, vec![127]);
        assert_eq!(saturate(&t32(vec![-300], 7), 7).data, vec![-127]);
        assert_eq!(saturate(&t32(vec![50], 7), 7).data, vec![50]);
    }

    #[test]
    fn quantize_frozen() {
        assert_eq!(quantize(&t8(vec![100], 7), 2).data, vec![3]);
        assert_eq!(quantize(&t8(vec![127], 7), 1).data, vec![1]);
        assert_eq!(quantize(&t8(vec![0], 7), 5).data, vec![0]);
    }

    #[test]
    fn ternarize_frozen() {
        let w = t8(vec![38, 20, -96], 7);
        let t = ternarize(&w);
        assert_eq!(t.data, vec![1, 0, -1]);
        assert_eq!(t.prec, 0);
    }

    #[test]
    fn ternarize_threshold_exhaustive() {
        for a in -128..=127i32 {
            let t = ternarize(&t8(vec![a], 7));
            let expected = if a.abs() < 32 { 0 } else { a.signum() };
            assert_eq!(t.data[0], expected, "a={a}");
        }
    }

    #[test]
    fn quant_activation_frozen() {
        assert_eq!(quant_activation(&t32(vec![520], 7), 2, 7).data, vec![127]);
        assert_eq!(quant_activation(&t32(vec![0], 7), 4, 7).data, vec![0]);
        assert_eq!(quant_activation(&t32(vec![100], 7), 0, 7).data, vec![100]);
    }

    #[test]
    fn npow_frozen() {
        assert_eq!(npow_exact(5), 3);
        assert_eq!(npow_exact(8), 3);
        assert_eq!(npow_exact(1), 0);
        assert_eq!(npow_exact(0), 0);
        assert_eq!(npow_smear(5, 8), 3);
        assert_eq!(npow_smear(4, 8), 2);
        assert_eq!(npow_smear(0, 8), 0);
    }

    #[test]
    fn npow_smear_matches_exact_exhaustively() {
        for x in 0..(1u64 << 8) {
            assert_eq!(npow_smear(x, 8), npow_exact(x), "x={x}");
        }
        for x in 0..(1u64 << 16) {
            assert_eq!(npow_smear(x, 16), npow_exact(x), "x={x}");
        }
    }

    #[test]
    fn cpow_frozen() {
        assert_eq!(cpow(5, 0), 2);
        assert_eq!(cpow(6, 0), 3);
        assert_eq!(cpow(4, 0), 2);
        assert_eq!(cpow(96, 7), 0);
    }

    #[test]
    fn quant_act_grad_frozen() {
        assert_eq!(quant_act_grad(&t32(vec![0, 0, 0], 7), 7).data, vec![0, 0, 0]);
        let e = t32(vec![96, -32], 7);
        assert_eq!(quant_act_grad(&e, 7).data, vec![96, -32]);
    }

    #[test]
    fn quant_weight_grad_frozen() {
        assert_eq!(quant_weight_grad(&t32(vec![0], 7), 7).data, vec![0]);
        assert_eq!(quant_weight_grad(&t32(vec![64], 7), 7).data, vec![128]);
        assert_eq!(quant_weight_grad(&t32(vec![48, 16], 7), 7).data, vec![96, 32]);
    }

    #[test]
    fn round_shift_away_spot_checks() {
        assert_eq!(round_shift_away(32, 6), 1);
        assert_eq!(round_shift_away(31, 6), 0);
        assert_eq!(round_shift_away(-32, 6), -1);
        assert_eq!(round_shift_away(-31, 6), 0);
        assert_eq!(round_shift_away(-96, 6), -2);
        assert_eq!(round_shift_away(7, 0), 7);
    }

    #[test]
    fn config_hash_distinguishes_fields() {
        let base = PrecisionConfig::default();
        assert_eq!(base.config_hash(), base.config_hash());
        let mut other = base.clone();
        other.p_e = 6;
        assert_ne!(base.config_hash(), other.config_hash());
        let mut with_alpha = base.clone();
        with_alpha.alpha = vec![2, 3];
        assert_ne!(base.config_hash(), with_alpha.config_hash());
    }

    #[test]
    fn default_config_validates() {
        PrecisionConfig::default().validate().unwrap();
        let mut bad = PrecisionConfig::default();
        bad.p_w = 2;
        assert!(bad.validate().is_err());
        let mut bad_eps = PrecisionConfig::default();
        bad_eps.eps_exp = -9;
        assert!(bad_eps.validate().is_err());
    }

    #[test]
    fn wage_expectation_matches_unrounded_value() {
        let g = t32(vec![96, -32], 7);
        let s = cpow(96, 7);
        let scale = libm::exp2(-f64::from(s) - 7.0);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let n = 10_000usize;
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let q = quant_weight_grad_wage(&g, 7, 0, &mut rng);
            for (acc, v) in sums.iter_mut().zip(q.values_f64()) {
                *acc += v;
            }
        }
        // Expected value of one draw is the normalized gradient times the
        // 2^(1-p_g) output step of the stochastic rounding; the variance of a
        // draw comes from the Bernoulli on the fractional part.
        for (i, &a) in g.data.iter().enumerate() {
            let gn = f64::from(a) * scale;
            let step = libm::exp2(1.0 - 7.0);
            let expected = gn * step;
            let mean = sums[i] / n as f64;
            let frac = libm::fabs(gn) - libm::floor(libm::fabs(gn));
            let se = step * libm::sqrt(frac * (1.0 - frac) / n as f64);
            assert!(
                libm::fabs(mean - expected) <= 3.0 * se + 1e-12,
                "element {i}: mean {mean} vs expected {expected} (se {se})"
            );
        }
    }

    proptest! {
        #[test]
        fn round_shift_matches_rational_division(x in -(1i64 << 40)..(1i64 << 40), t in 0u32..32) {
            let got = round_shift_away(x, t);
            let want = round_div_away(i128::from(x), 1i128 << t);
            prop_assert_eq!(i128::from(got), want);
        }

        #[test]
        fn quantize_is_idempotent_and_bounded(
            data in proptest::collection::vec(-(1i32 << 20)..(1i32 << 20), 1..16),
            p in 1u8..20,
            q in 1u8..10,
        ) {
            let v = t32(data, p);
            let once = quantize(&v, q);
            let hi = (1i32 << q) - 1;
            for &a in &once.data {
                prop_assert!(a.abs() <= hi);
            }
            let twice = quantize(&once, q);
            prop_assert_eq!(&once.data, &twice.data);
        }

        #[test]
        fn upshift_is_invertible(
            data in proptest::collection::vec(-(1i32 << 10)..(1i32 << 10), 1..16),
            p in 1u8..8,
            extra in 1u8..8,
        ) {
            let v = t32(data.clone(), p);
            let up = quant_nearest(&v, p + extra);
            for (&orig, &shifted) in data.iter().zip(&up.data) {
                prop_assert_eq!(i64::from(orig), i64::from(shifted) >> extra);
            }
        }

        #[test]
        fn act_grad_matches_rational_oracle(
            data in proptest::collection::vec(-(1i32 << 24)..(1i32 << 24), 1..20),
            p_e in 1u8..10,
        ) {
            let e = t32(data.clone(), 7);
            let got = quant_act_grad(&e, p_e);
            let max_mag = data.iter().map(|&a| i64::from(a).unsigned_abs()).max().unwrap();
            let s = npow_exact(max_mag);
            let hi = i128::from((1i32 << p_e) - 1);
            for (&a, &g) in data.iter().zip(&got.data) {
                let scaled = i128::from(a) << p_e;
                let want = round_div_away(scaled, 1i128 << s).clamp(-hi, hi);
                prop_assert_eq!(i128::from(g), want);
            }
        }

        #[test]
        fn weight_grad_matches_oracle_and_stays_bounded(
            data in proptest::collection::vec(-(1i32 << 24)..(1i32 << 24), 1..20),
            p_g in 1u8..10,
        ) {
            let g = t32(data.clone(), 7);
            let got = quant_weight_grad(&g, p_g);
            let max_mag = data.iter().map(|&a| i64::from(a).unsigned_abs()).max().unwrap();
            let s = npow_exact(max_mag);
            for (&a, &out) in data.iter().zip(&got.data) {
                let scaled = i128::from(a) << p_g;
                let want = round_div_away(scaled, 1i128 << s);
                prop_assert_eq!(i128::from(out), want);
                prop_assert!(i64::from(out).unsigned_abs() <= 1u64 << p_g);
            }
        }

        #[test]
        fn cpow_is_minimal_with_ties_larger(a in 1i64..(1i64 << 30), p in 0u32..16) {
            let s = cpow(a, p);
            let t = (s + p as i32) as u32;
            let target = i128::from(a);
            let dist = ((1i128 << t) - target).abs();
            for other in 0..=40u32 {
                let d = ((1i128 << other) - target).abs();
                prop_assert!(dist <= d, "t={t} beaten by {other}");
                if d == dist {
                    prop_assert!(t >= other);
                }
            }
        }
    }
}
