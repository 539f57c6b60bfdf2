//! Two-party additive and Boolean secret sharing, the local linear algebra
//! on shares, and the decomposition of a ternary weight matrix into two
//! disjoint Boolean indicator matrices.
//!
//! Arithmetic shares live in the ring of integers mod `2^sigma`; signed
//! tensor values enter and leave the ring through two's-complement
//! truncation and sign extension, so ring arithmetic matches the wrapping
//! integer arithmetic of the plaintext engine bit for bit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::fxp::FixedTensor;

/// Errors from share algebra or the share-file byte format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SharesError {
    SigmaMismatch { left: u8, right: u8 },
    LengthMismatch { left: usize, right: usize },
    BadFormat(String),
}

impl fmt::Display for SharesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SharesError::SigmaMismatch { left, right } => {
                write!(f, "share moduli differ: 2^{left} vs 2^{right}")
            }
            SharesError::LengthMismatch { left, right } => {
                write!(f, "share lengths differ: {left} vs {right}")
            }
            SharesError::BadFormat(err) => write!(f, "malformed share encoding: {err}"),
        }
    }
}

impl core::error::Error for SharesError {}

/// All-ones mask of the ring `Z_{2^sigma}`.
pub fn ring_mask(sigma: u8) -> u64 {
    debug_assert!(matches!(sigma, 8 | 16 | 32 | 64));
    if sigma == 64 {
        u64::MAX
    } else {
        (1u64 << sigma) - 1
    }
}

/// Embeds a signed integer into the ring by two's-complement truncation.
pub fn to_ring(x: i64, sigma: u8) -> u64 {
    (x as u64) & ring_mask(sigma)
}

/// Recovers the signed value of a ring element by sign extension.
pub fn from_ring(v: u64, sigma: u8) -> i64 {
    if sigma == 64 {
        return v as i64;
    }
    let shift = 64 - u32::from(sigma);
    (((v & ring_mask(sigma)) << shift) as i64) >> shift
}

/// One party's additive share of an integer vector mod `2^sigma`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArithShare {
    pub values: Vec<u64>,
    pub sigma: u8,
    pub party: u8,
}

impl ArithShare {
    pub fn zeros(len: usize, sigma: u8, party: u8) -> Self {
        ArithShare { values: vec![0; len], sigma, party }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_compatible(&self, other: &ArithShare) -> Result<(), SharesError> {
        if self.sigma != other.sigma {
            return Err(SharesError::SigmaMismatch { left: self.sigma, right: other.sigma });
        }
        if self.values.len() != other.values.len() {
            return Err(SharesError::LengthMismatch {
                left: self.values.len(),
                right: other.values.len(),
            });
        }
        Ok(())
    }
}

/// Splits a signed vector into two uniformly masked additive shares.
pub fn share_arith(
    x: &[i64],
    sigma: u8,
    rng: &mut impl RngCore,
) -> (ArithShare, ArithShare) {
    let mask = ring_mask(sigma);
    let mut s1 = Vec::with_capacity(x.len());
    let mut s2 = Vec::with_capacity(x.len());
    for &v in x {
        let r = rng.next_u64() & mask;
        s2.push(r);
        s1.push(to_ring(v, sigma).wrapping_sub(r) & mask);
    }
    (
        ArithShare { values: s1, sigma, party: 1 },
        ArithShare { values: s2, sigma, party: 2 },
    )
}

/// Adds both parties' shares back into ring elements.
pub fn reconstruct_arith(a: &ArithShare, b: &ArithShare) -> Result<Vec<u64>, SharesError> {
    a.check_compatible(b)?;
    let mask = ring_mask(a.sigma);
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| x.wrapping_add(y) & mask)
        .collect())
}

/// Reconstruction followed by sign extension back to signed integers.
pub fn reconstruct_signed(a: &ArithShare, b: &ArithShare) -> Result<Vec<i64>, SharesError> {
    let sigma = a.sigma;
    Ok(reconstruct_arith(a, b)?.into_iter().map(|v| from_ring(v, sigma)).collect())
}

/// Element-wise share addition; reconstruction distributes over it.
pub fn local_add(a: &ArithShare, b: &ArithShare) -> Result<ArithShare, SharesError> {
    a.check_compatible(b)?;
    let mask = ring_mask(a.sigma);
    Ok(ArithShare {
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| x.wrapping_add(y) & mask)
            .collect(),
        sigma: a.sigma,
        party: a.party,
    })
}

/// Element-wise share subtraction.
pub fn local_sub(a: &ArithShare, b: &ArithShare) -> Result<ArithShare, SharesError> {
    a.check_compatible(b)?;
    let mask = ring_mask(a.sigma);
    Ok(ArithShare {
        values: a
            .values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| x.wrapping_sub(y) & mask)
            .collect(),
        sigma: a.sigma,
        party: a.party,
    })
}

/// Multiplies a share by a public signed constant.
pub fn local_const_mul(a: &ArithShare, c: i64) -> ArithShare {
    let mask = ring_mask(a.sigma);
    let c_ring = to_ring(c, a.sigma);
    ArithShare {
        values: a.values.iter().map(|&x| x.wrapping_mul(c_ring) & mask).collect(),
        sigma: a.sigma,
        party: a.party,
    }
}

/// Adds a public constant vector to the shared value: only party 1 offsets
/// its share so the reconstruction shifts by exactly the constant.
pub fn local_add_public(a: &ArithShare, c: &[i64]) -> Result<ArithShare, SharesError> {
    if a.values.len() != c.len() {
        return Err(SharesError::LengthMismatch { left: a.values.len(), right: c.len() });
    }
    let mask = ring_mask(a.sigma);
    if a.party != 1 {
        return Ok(a.clone());
    }
    Ok(ArithShare {
        values: a
            .values
            .iter()
            .zip(c)
            .map(|(&x, &k)| x.wrapping_add(to_ring(k, a.sigma)) & mask)
            .collect(),
        sigma: a.sigma,
        party: a.party,
    })
}

/// One party's XOR share of a bit vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolShare {
    pub bits: Vec<bool>,
    pub party: u8,
}

impl BoolShare {
    pub fn zeros(len: usize, party: u8) -> Self {
        BoolShare { bits: vec![false; len], party }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Splits a bit vector into two XOR shares.
pub fn share_bool(bits: &[bool], rng: &mut impl RngCore) -> (BoolShare, BoolShare) {
    let mut s1 = Vec::with_capacity(bits.len());
    let mut s2 = Vec::with_capacity(bits.len());
    let mut word = 0u64;
    for (i, &b) in bits.iter().enumerate() {
        if i % 64 == 0 {
            word = rng.next_u64();
        }
        let r = (word >> (i % 64)) & 1 == 1;
        s2.push(r);
        s1.push(b ^ r);
    }
    (BoolShare { bits: s1, party: 1 }, BoolShare { bits: s2, party: 2 })
}

/// XORs both parties' shares back into plain bits.
pub fn reconstruct_bool(a: &BoolShare, b: &BoolShare) -> Result<Vec<bool>, SharesError> {
    if a.bits.len() != b.bits.len() {
        return Err(SharesError::LengthMismatch { left: a.bits.len(), right: b.bits.len() });
    }
    Ok(a.bits.iter().zip(&b.bits).map(|(&x, &y)| x ^ y).collect())
}

/// Element-wise XOR of two shares held by the same party.
pub fn local_xor(a: &BoolShare, b: &BoolShare) -> Result<BoolShare, SharesError> {
    if a.bits.len() != b.bits.len() {
        return Err(SharesError::LengthMismatch { left: a.bits.len(), right: b.bits.len() });
    }
    Ok(BoolShare {
        bits: a.bits.iter().zip(&b.bits).map(|(&x, &y)| x ^ y).collect(),
        party: a.party,
    })
}

/// Complements the shared bits: only party 1 flips its share.
pub fn local_not(a: &BoolShare) -> BoolShare {
    if a.party != 1 {
        return a.clone();
    }
    BoolShare { bits: a.bits.iter().map(|&b| !b).collect(), party: a.party }
}

/// One party's Boolean shares of the positive and negative indicator
/// matrices of a ternary weight matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedTernaryMatrix {
    pub plus: BoolShare,
    pub minus: BoolShare,
    pub rows: usize,
    pub cols: usize,
}

impl SharedTernaryMatrix {
    /// Shares of the transposed matrix: transposition commutes with
    /// XOR sharing, so each party permutes its bits locally.
    pub fn transpose(&self) -> SharedTernaryMatrix {
        let (r, c) = (self.rows, self.cols);
        let permute = |bits: &[bool]| {
            let mut out = vec![false; bits.len()];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = bits[i * c + j];
                }
            }
            out
        };
        SharedTernaryMatrix {
            plus: BoolShare { bits: permute(&self.plus.bits), party: self.plus.party },
            minus: BoolShare { bits: permute(&self.minus.bits), party: self.minus.party },
            rows: c,
            cols: r,
        }
    }
}

/// Splits a ternary matrix (elements in {-1, 0, 1}, precision 0) into
/// Boolean shares of its +1 and -1 indicator matrices.
pub fn decompose_ternary(
    w: &FixedTensor,
    rng: &mut impl RngCore,
) -> (SharedTernaryMatrix, SharedTernaryMatrix) {
    assert_eq!(w.prec, 0, "ternary weights carry precision 0");
    assert_eq!(w.shape.len(), 2, "weight tensors are matrices");
    let rows = w.shape[0];
    let cols = w.shape[1];
    let plus_bits: Vec<bool> = w.data.iter().map(|&a| a == 1).collect();
    let minus_bits: Vec<bool> = w.data.iter().map(|&a| a == -1).collect();
    debug_assert!(w.data.iter().all(|&a| (-1..=1).contains(&a)));
    let (p1_plus, p2_plus) = share_bool(&plus_bits, rng);
    let (p1_minus, p2_minus) = share_bool(&minus_bits, rng);
    (
        SharedTernaryMatrix { plus: p1_plus, minus: p1_minus, rows, cols },
        SharedTernaryMatrix { plus: p2_plus, minus: p2_minus, rows, cols },
    )
}

/// Reconstructs a ternary matrix from both parties' indicator shares.
pub fn recompose_ternary(
    p1: &SharedTernaryMatrix,
    p2: &SharedTernaryMatrix,
) -> Result<FixedTensor, SharesError> {
    let plus = reconstruct_bool(&p1.plus, &p2.plus)?;
    let minus = reconstruct_bool(&p1.minus, &p2.minus)?;
    let data = plus
        .iter()
        .zip(&minus)
        .map(|(&p, &m)| i32::from(p) - i32::from(m))
        .collect();
    FixedTensor::new(data, vec![p1.rows, p1.cols], 8, 0)
        .map_err(|_| SharesError::BadFormat(String::from("indicator matrices overlap")))
}

/// Byte width of one ring element at modulus exponent `sigma`.
fn elem_bytes(sigma: u8) -> usize {
    usize::from(sigma / 8)
}

/// Serializes a share tensor: magic, version, modulus exponent, shape, then
/// raw little-endian ring elements.
pub fn encode_share_tensor(values: &[u64], shape: &[usize], sigma: u8) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"QSHR");
    out.extend_from_slice(&1u16.to_be_bytes());
    out.push(sigma);
    out.extend_from_slice(&(shape.len() as u32).to_be_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    let width = elem_bytes(sigma);
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes()[..width]);
    }
    out
}

/// Parses a serialized share tensor back into values, shape, and modulus.
pub fn decode_share_tensor(bytes: &[u8]) -> Result<(Vec<u64>, Vec<usize>, u8), SharesError> {
    let bad = |msg: &str| SharesError::BadFormat(String::from(msg));
    if bytes.len() < 11 || &bytes[0..4] != b"QSHR" {
        return Err(bad("missing QSHR magic"));
    }
    let version = u16::from_be_bytes([bytes[4], bytes[5]]);
    if version != 1 {
        return Err(bad("unsupported version"));
    }
    let sigma = bytes[6];
    if !matches!(sigma, 8 | 16 | 32 | 64) {
        return Err(bad("unsupported modulus exponent"));
    }
    let rank = u32::from_be_bytes([bytes[7], bytes[8], bytes[9], bytes[10]]) as usize;
    let mut offset = 11;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        if offset + 4 > bytes.len() {
            return Err(bad("truncated shape"));
        }
        shape.push(u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize);
        offset += 4;
    }
    let len: usize = shape.iter().product();
    let width = elem_bytes(sigma);
    if bytes.len() != offset + len * width {
        return Err(bad("payload length does not match shape"));
    }
    let mut values = Vec::with_capacity(len);
    for chunk in bytes[offset..].chunks_exact(width) {
        let mut buf = [0u8; 8];
        buf[..width].copy_from_slice(chunk);
        values.push(u64::from_le_bytes(buf));
    }
    Ok((values, shape, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::AesPrg;
    use proptest::prelude::*;
    use rand_core::RngCore;

    fn rng() -> AesPrg {
        AesPrg::new([42u8; 16])
    }

    #[test]
    fn share_and_reconstruct_frozen() {
        let a = ArithShare { values: vec![2], sigma: 8, party: 1 };
        let b = ArithShare { values: vec![3], sigma: 8, party: 2 };
        assert_eq!(reconstruct_arith(&a, &b).unwrap(), vec![5]);

        let mut r = rng();
        let (s1, s2) = share_arith(&[0], 8, &mut r);
        assert_eq!(reconstruct_arith(&s1, &s2).unwrap(), vec![0]);
        assert_eq!(s1.values[0], s2.values[0].wrapping_neg() & 0xff);
    }

    #[test]
    fn reconstruction_round_trips_many_values() {
        let mut r = rng();
        for sigma in [8u8, 16, 32, 64] {
            let xs: Vec<i64> = (0..25_000)
                .map(|_| from_ring(r.next_u64() & ring_mask(sigma), sigma))
                .collect();
            let (s1, s2) = share_arith(&xs, sigma, &mut r);
            assert_eq!(reconstruct_signed(&s1, &s2).unwrap(), xs);
        }
    }

    #[test]
    fn bool_share_round_trip() {
        let mut r = rng();
        let bits: Vec<bool> = (0..1000).map(|i| i % 3 == 0).collect();
        let (s1, s2) = share_bool(&bits, &mut r);
        assert_eq!(reconstruct_bool(&s1, &s2).unwrap(), bits);
        let flipped = reconstruct_bool(&local_not(&s1), &s2).unwrap();
        assert!(flipped.iter().zip(&bits).all(|(&f, &b)| f == !b));
    }

    #[test]
    fn ternary_decomposition_frozen() {
        let w = FixedTensor::new(vec![1, -1, 0], vec![1, 3], 8, 0).unwrap();
        let mut r = rng();
        let (p1, p2) = decompose_ternary(&w, &mut r);
        assert_eq!(reconstruct_bool(&p1.plus, &p2.plus).unwrap(), vec![true, false, false]);
        assert_eq!(reconstruct_bool(&p1.minus, &p2.minus).unwrap(), vec![false, true, false]);
        assert_eq!(recompose_ternary(&p1, &p2).unwrap(), w);

        let zero = FixedTensor::zeros(vec![2, 2], 8, 0);
        let (z1, z2) = decompose_ternary(&zero, &mut r);
        assert_eq!(recompose_ternary(&z1, &z2).unwrap().data, vec![0; 4]);
    }

    #[test]
    fn transpose_commutes_with_reconstruction() {
        let w = FixedTensor::new(vec![1, -1, 0, 0, 1, -1], vec![2, 3], 8, 0).unwrap();
        let mut r = rng();
        let (p1, p2) = decompose_ternary(&w, &mut r);
        let wt = recompose_ternary(&p1.transpose(), &p2.transpose()).unwrap();
        assert_eq!(wt.shape, vec![3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(wt.data[j * 2 + i], w.data[i * 3 + j]);
            }
        }
    }

    #[test]
    fn share_values_look_uniform() {
        // Chi-square over 256 buckets at significance 0.01 (df = 255).
        let mut r = rng();
        let xs: Vec<i64> = vec![7; 100_000];
        let (_, s2) = share_arith(&xs, 8, &mut r);
        let mut counts = [0u32; 256];
        for &v in &s2.values {
            counts[v as usize] += 1;
        }
        let expected = 100_000.0 / 256.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = f64::from(c) - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 310.46, "chi-square statistic {chi2} rejects uniformity");
    }

    #[test]
    fn share_file_round_trip() {
        let values = vec![1u64, 0xfffe, 3, 500];
        let encoded = encode_share_tensor(&values, &[2, 2], 16);
        let (got, shape, sigma) = decode_share_tensor(&encoded).unwrap();
        assert_eq!(got, values);
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(sigma, 16);

        assert!(decode_share_tensor(b"QSHRxx").is_err());
        let mut truncated = encoded.clone();
        truncated.pop();
        assert!(decode_share_tensor(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn ring_embedding_round_trips(x in -(1i64 << 31)..(1i64 << 31)) {
            for sigma in [32u8, 64] {
                prop_assert_eq!(from_ring(to_ring(x, sigma), sigma), x);
            }
            let x8 = (x % 128) as i64;
            prop_assert_eq!(from_ring(to_ring(x8, 8), 8), x8);
        }

        #[test]
        fn local_ops_commute_with_reconstruction(
            xs in proptest::collection::vec(-(1i64 << 20)..(1i64 << 20), 1..12),
            ys in proptest::collection::vec(-(1i64 << 20)..(1i64 << 20), 1..12),
            c in -1000i64..1000,
            seed in any::<u64>(),
        ) {
            let n = xs.len().min(ys.len());
            let xs = &xs[..n];
            let ys = &ys[..n];
            let mut seed_bytes = [0u8; 16];
            seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
            let mut r = AesPrg::new(seed_bytes);
            let sigma = 32u8;
            let (x1, x2) = share_arith(xs, sigma, &mut r);
            let (y1, y2) = share_arith(ys, sigma, &mut r);

            let sum = reconstruct_signed(
                &local_add(&x1, &y1).unwrap(),
                &local_add(&x2, &y2).unwrap(),
            ).unwrap();
            let diff = reconstruct_signed(
                &local_sub(&x1, &y1).unwrap(),
                &local_sub(&x2, &y2).unwrap(),
            ).unwrap();
            let scaled = reconstruct_signed(
                &local_const_mul(&x1, c),
                &local_const_mul(&x2, c),
            ).unwrap();
            let shifted = reconstruct_signed(
                &local_add_public(&x1, ys).unwrap(),
                &local_add_public(&x2, ys).unwrap(),
            ).unwrap();
            for i in 0..n {
                prop_assert_eq!(sum[i], from_ring(to_ring(xs[i] + ys[i], sigma), sigma));
                prop_assert_eq!(diff[i], from_ring(to_ring(xs[i] - ys[i], sigma), sigma));
                prop_assert_eq!(scaled[i], from_ring(to_ring(xs[i].wrapping_mul(c), sigma), sigma));
                prop_assert_eq!(shifted[i], from_ring(to_ring(xs[i] + ys[i], sigma), sigma));
            }
        }

        #[test]
        fn ternary_round_trip(
            data in proptest::collection::vec(-1i32..=1, 1..60),
            seed in any::<u64>(),
        ) {
            let n = data.len();
            let w = FixedTensor::new(data, vec![1, n], 8, 0).unwrap();
            let mut seed_bytes = [0u8; 16];
            seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
            let mut r = AesPrg::new(seed_bytes);
            let (p1, p2) = decompose_ternary(&w, &mut r);
            prop_assert_eq!(recompose_ternary(&p1, &p2).unwrap(), w);
        }
    }
}
