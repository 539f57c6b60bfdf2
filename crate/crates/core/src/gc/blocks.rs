//! Circuit blocks for the secure training pipeline.
//!
//! Every block follows one packing convention. The garbler supplies, in
//! order, its share words for each input group (one word per element,
//! least-significant bit first), then one fresh mask word per arithmetic
//! output element, then one mask bit per Boolean output bit. The evaluator
//! supplies its share words for the same groups. Inputs reconstruct inside
//! the circuit by ring addition, and outputs leave it masked: `value - mask`
//! in the output ring for arithmetic outputs, `value XOR mask` for Boolean
//! outputs. The evaluator keeps the decoded outputs as its shares and the
//! garbler keeps the masks, so neither party sees a cleartext intermediate.

use alloc::vec::Vec;

use super::{
    const_word, sext, sll, sra, srl, value_to_bits, zext, Bit, Circuit, CircuitBuilder,
};

/// Packs ring elements into circuit input bits, one word per element.
pub fn pack_words(values: &[u64], width: usize) -> Vec<bool> {
    values
        .iter()
        .flat_map(|&v| value_to_bits(v, width))
        .collect()
}

/// Unpacks circuit output bits back into ring elements.
pub fn unpack_words(bits: &[bool], width: usize) -> Vec<u64> {
    bits.chunks(width).map(super::bits_to_value).collect()
}

fn const_signed(value: i64, width: usize) -> Vec<Bit> {
    const_word(value as u64, width)
}

fn p1_words(b: &mut CircuitBuilder, n: usize, width: usize) -> Vec<Vec<Bit>> {
    (0..n).map(|_| b.input_p1(width)).collect()
}

fn p2_words(b: &mut CircuitBuilder, n: usize, width: usize) -> Vec<Vec<Bit>> {
    (0..n).map(|_| b.input_p2(width)).collect()
}

fn reconstruct(b: &mut CircuitBuilder, s1: &[Vec<Bit>], s2: &[Vec<Bit>]) -> Vec<Vec<Bit>> {
    s1.iter()
        .zip(s2)
        .map(|(a, bb)| b.add_words(a, bb))
        .collect()
}

/// One-hot selector over the exponent of a smeared magnitude aggregate.
///
/// `agg` holds a value `x` with `x < 2^width`. Returns `width + 1` bits where
/// slot `s` fires exactly when the next power of two of `x` is `2^s`; an
/// input of zero fires the top slot, which callers absorb because every
/// dependent value is zero in that case.
fn one_hot_exponent(b: &mut CircuitBuilder, agg: &[Bit]) -> Vec<Bit> {
    let width = agg.len();
    let minus_one = const_word(u64::MAX, width);
    let mut y = b.add_words(agg, &minus_one);
    let mut shift = 1;
    while shift < width {
        let shifted = srl(&y, shift);
        y = b.or_words(&y, &shifted);
        shift *= 2;
    }
    let mut hot = Vec::with_capacity(width + 1);
    hot.push(b.not(y[0]));
    for i in 1..width {
        let ny = b.not(y[i]);
        hot.push(b.and(y[i - 1], ny));
    }
    hot.push(y[width - 1]);
    hot
}

/// Rounding right shift by a hidden exponent held as a one-hot selector.
///
/// Computes `round(x / 2^s)` with ties away from zero, where `x` is the
/// two's-complement word and `s` the slot index of `hot`. The rounding
/// addend `2^(s-1)` is the one-hot word shifted right once, and the away
/// correction for negative values is suppressed when `s` is zero, so the
/// result matches an unshifted pass-through in that slot.
fn hidden_rounding_shift(
    b: &mut CircuitBuilder,
    x: &[Bit],
    hot: &[Bit],
    sign: Bit,
) -> Vec<Bit> {
    let width = x.len();
    let slots = hot.len();
    let mut addend = Vec::with_capacity(width);
    for k in 0..width {
        addend.push(*hot.get(k + 1).unwrap_or(&Bit::Const(false)));
    }
    let rounded_up = b.add_words(x, &addend);
    let nh0 = b.not(hot[0]);
    let away = b.and(sign, nh0);
    let correction = zext(&[away], width);
    let rounded = b.sub_words(&rounded_up, &correction);

    let mut out = alloc::vec![Bit::Const(false); width];
    for (s, &slot) in hot.iter().enumerate().take(slots) {
        let candidate = sra(&rounded, s);
        for (o, c) in out.iter_mut().zip(candidate) {
            let picked = b.and(slot, c);
            *o = b.xor(*o, picked);
        }
    }
    out
}

/// Signed clamp of `v` to `[-hi, hi]` for a small public bound.
fn clamp_word(b: &mut CircuitBuilder, v: &[Bit], hi: u64) -> Vec<Bit> {
    let width = v.len();
    let we = width + 1;
    let ve = sext(v, we);
    let upper = const_word(hi, we);
    let above = b.sub_words(&upper, &ve);
    let gt = above[we - 1];
    let lower = const_signed(-(hi as i64), we);
    let below = b.sub_words(&ve, &lower);
    let lt = below[we - 1];
    let lo_w = const_signed(-(hi as i64), width);
    let hi_w = const_word(hi, width);
    let t = b.mux_words(lt, &lo_w, v);
    b.mux_words(gt, &hi_w, &t)
}

/// Activation block: reconstructs pre-activation sums, applies ReLU, scales
/// by a public rounding shift of `alpha`, saturates to `2^p_a - 1`, and
/// emits the activations masked in the output ring. With `emit_mask` it also
/// emits, XOR-masked, the derivative bit marking each element as strictly
/// positive and unsaturated, so one pass yields both the activation and the
/// mask the backward pass needs.
///
/// Inputs per element: both parties' share words at `sigma_in`, then the
/// garbler's mask word at `sigma_out` and, when `emit_mask`, its mask bit.
/// The reconstruction is exact when the true sum fits the signed input ring.
pub fn build_forward_block(
    n: usize,
    sigma_in: usize,
    sigma_out: usize,
    alpha: u32,
    p_a: u32,
    emit_mask: bool,
) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma_in >= 2 && sigma_in <= 64, "input ring width out of range");
    assert!((p_a as usize) < sigma_in, "activation range must fit the input ring");
    assert!(sigma_out > p_a as usize && sigma_out <= 64, "output ring too narrow");
    assert!(alpha < 32, "scale shift out of range");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma_in);
    let s2 = p2_words(&mut b, n, sigma_in);
    let masks = p1_words(&mut b, n, sigma_out);
    let rbits = if emit_mask { b.input_p1(n) } else { Vec::new() };

    b.stage("reconstruct");
    let z = reconstruct(&mut b, &s1, &s2);

    b.stage("relu");
    let relu: Vec<Vec<Bit>> = z
        .iter()
        .map(|zi| {
            let keep = b.not(zi[sigma_in - 1]);
            zi.iter().map(|&bit| b.and(bit, keep)).collect()
        })
        .collect();

    b.stage("scale");
    let wide = sigma_in + 1;
    let scaled: Vec<Vec<Bit>> = relu
        .iter()
        .map(|ri| {
            let ext = zext(ri, wide);
            if alpha == 0 {
                ext
            } else {
                let half = const_word(1u64 << (alpha - 1), wide);
                let sum = b.add_words(&ext, &half);
                srl(&sum, alpha as usize)
            }
        })
        .collect();

    b.stage("saturate");
    let mut overs = Vec::with_capacity(n);
    let acts: Vec<Vec<Bit>> = scaled
        .iter()
        .map(|si| {
            let over = b.or_reduce(&si[p_a as usize..]);
            overs.push(over);
            let sat: Vec<Bit> = si[..p_a as usize]
                .iter()
                .map(|&bit| b.or(bit, over))
                .collect();
            zext(&sat, sigma_out)
        })
        .collect();

    let mut deriv = Vec::new();
    if emit_mask {
        b.stage("mask-rule");
        for (zi, &over) in z.iter().zip(&overs) {
            let sign = zi[sigma_in - 1];
            let nonzero = b.or_reduce(zi);
            let ns = b.not(sign);
            let positive = b.and(ns, nonzero);
            let fits = b.not(over);
            deriv.push(b.and(positive, fits));
        }
    }

    b.stage("mask");
    let mut outs = Vec::with_capacity(n * sigma_out + n);
    for (act, r) in acts.iter().zip(&masks) {
        outs.extend(b.sub_words(act, r));
    }
    for (&d, &r) in deriv.iter().zip(&rbits) {
        outs.push(b.xor(d, r));
    }
    b.finish(outs)
}

/// Derivative-mask block: emits, XOR-masked, the bit that marks an element
/// as strictly positive and unsaturated after the activation scaling.
pub fn build_deriv_mask_block(n: usize, sigma_in: usize, alpha: u32, p_a: u32) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma_in >= 2 && sigma_in <= 64, "input ring width out of range");
    assert!((p_a as usize) < sigma_in, "activation range must fit the input ring");
    assert!(alpha < 32, "scale shift out of range");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma_in);
    let s2 = p2_words(&mut b, n, sigma_in);
    let rbits = b.input_p1(n);

    b.stage("reconstruct");
    let z = reconstruct(&mut b, &s1, &s2);

    b.stage("mask-rule");
    let mut outs = Vec::with_capacity(n);
    for (zi, &r) in z.iter().zip(&rbits) {
        let sign = zi[sigma_in - 1];
        let nonzero = b.or_reduce(zi);
        let ns = b.not(sign);
        let positive = b.and(ns, nonzero);

        let keep = b.not(sign);
        let relu: Vec<Bit> = zi.iter().map(|&bit| b.and(bit, keep)).collect();
        let ext = zext(&relu, sigma_in + 1);
        let scaled = if alpha == 0 {
            ext
        } else {
            let half = const_word(1u64 << (alpha - 1), sigma_in + 1);
            let sum = b.add_words(&ext, &half);
            srl(&sum, alpha as usize)
        };
        let over = b.or_reduce(&scaled[p_a as usize..]);
        let fits = b.not(over);
        let active = b.and(positive, fits);
        outs.push(b.xor(active, r));
    }
    b.finish(outs)
}

/// Gradient-normalization block: reconstructs a gradient vector, finds the
/// next power of two of the largest magnitude, divides every element by it
/// with a rounding shift to precision `p_out`, optionally clamps, and emits
/// the result masked. With `emit_abs` it also emits each output magnitude
/// masked, which the optimizer's second-moment update consumes.
///
/// `value_bits` bounds the magnitudes (the aggregate must stay below
/// `2^value_bits`), mirroring the scalar quantizer's contract.
pub fn build_backward_norm_block(
    n: usize,
    sigma: usize,
    value_bits: u32,
    p_out: u32,
    clamp_to: Option<u64>,
    emit_abs: bool,
) -> Circuit {
    let b_exp = value_bits as usize;
    assert!(n > 0, "block needs at least one element");
    assert!(sigma >= 2 && sigma <= 64, "ring width out of range");
    assert!(b_exp >= 1 && b_exp <= sigma, "magnitude bound must fit the ring");
    assert!(p_out < 32, "output precision out of range");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma);
    let s2 = p2_words(&mut b, n, sigma);
    let masks = p1_words(&mut b, n, sigma);
    let abs_masks = if emit_abs {
        p1_words(&mut b, n, sigma)
    } else {
        Vec::new()
    };

    b.stage("reconstruct");
    let e = reconstruct(&mut b, &s1, &s2);

    b.stage("magnitude");
    let mags: Vec<Vec<Bit>> = e.iter().map(|ei| b.abs_word(ei)).collect();

    b.stage("aggregate");
    let mut agg = mags[0][..b_exp].to_vec();
    for m in &mags[1..] {
        agg = b.or_words(&agg, &m[..b_exp]);
    }

    b.stage("exponent");
    let hot = one_hot_exponent(&mut b, &agg);

    b.stage("select");
    let wide = sigma + p_out as usize + 1;
    let selected: Vec<Vec<Bit>> = e
        .iter()
        .map(|ei| {
            let xs = sll(&sext(ei, wide), p_out as usize);
            hidden_rounding_shift(&mut b, &xs, &hot, ei[sigma - 1])
        })
        .collect();

    b.stage("clamp");
    let clamped: Vec<Vec<Bit>> = selected
        .iter()
        .map(|v| match clamp_to {
            Some(hi) => clamp_word(&mut b, v, hi),
            None => v.clone(),
        })
        .collect();

    b.stage("mask");
    let mut outs = Vec::with_capacity(n * sigma * if emit_abs { 2 } else { 1 });
    let values: Vec<Vec<Bit>> = clamped.iter().map(|v| v[..sigma].to_vec()).collect();
    for (v, r) in values.iter().zip(&masks) {
        outs.extend(b.sub_words(v, r));
    }
    if emit_abs {
        for (v, r) in values.iter().zip(&abs_masks) {
            let mag = b.abs_word(v);
            outs.extend(b.sub_words(&mag, r));
        }
    }
    b.finish(outs)
}

/// Requantization block: rounding right shift by a public amount, masked.
/// With `t == 0` it degenerates to reconstruct-and-mask, which also serves
/// as the masked-reveal circuit.
pub fn build_requant_block(n: usize, sigma: usize, t: u32) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma >= 2 && sigma <= 64, "ring width out of range");
    assert!(t < 32, "shift amount out of range");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma);
    let s2 = p2_words(&mut b, n, sigma);
    let masks = p1_words(&mut b, n, sigma);

    b.stage("reconstruct");
    let x = reconstruct(&mut b, &s1, &s2);

    b.stage("round");
    let rounded: Vec<Vec<Bit>> = x
        .iter()
        .map(|xi| {
            if t == 0 {
                return xi.clone();
            }
            let wide = sigma + 1;
            let ext = sext(xi, wide);
            let bias = const_word((1u64 << (t - 1)) - 1, wide);
            let keep_up = b.not(xi[sigma - 1]);
            let sum = b.add_with_carry(&ext, &bias, keep_up);
            sra(&sum, t as usize)[..sigma].to_vec()
        })
        .collect();

    b.stage("mask");
    let mut outs = Vec::with_capacity(n * sigma);
    for (v, r) in rounded.iter().zip(&masks) {
        outs.extend(b.sub_words(v, r));
    }
    b.finish(outs)
}

/// Elementwise signed maximum of two shared vectors, masked.
pub fn build_elementwise_max_block(n: usize, sigma: usize) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma >= 2 && sigma <= 64, "ring width out of range");

    let mut b = CircuitBuilder::new();
    let a1 = p1_words(&mut b, n, sigma);
    let b1 = p1_words(&mut b, n, sigma);
    let a2 = p2_words(&mut b, n, sigma);
    let b2 = p2_words(&mut b, n, sigma);
    let masks = p1_words(&mut b, n, sigma);

    b.stage("reconstruct");
    let xs = reconstruct(&mut b, &a1, &a2);
    let ys = reconstruct(&mut b, &b1, &b2);

    b.stage("compare");
    let wide = sigma + 1;
    let maxes: Vec<Vec<Bit>> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let d = {
                let xe = sext(x, wide);
                let ye = sext(y, wide);
                b.sub_words(&xe, &ye)
            };
            let less = d[wide - 1];
            b.mux_words(less, y, x)
        })
        .collect();

    b.stage("mask");
    let mut outs = Vec::with_capacity(n * sigma);
    for (v, r) in maxes.iter().zip(&masks) {
        outs.extend(b.sub_words(v, r));
    }
    b.finish(outs)
}

/// Hidden-exponent scaling for the adaptive optimizer: for each element,
/// derives the exponent of `v + eps` (a non-negative second-moment entry
/// below `2^exp_bits`), then applies a rounding right shift by it to the
/// first moment pre-shifted left by `up`. The result leaves masked.
pub fn build_private_shift_block(
    n: usize,
    sigma: usize,
    up: u32,
    eps: u64,
    exp_bits: usize,
) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma >= 2 && sigma <= 64, "ring width out of range");
    assert!(exp_bits >= 1 && exp_bits < sigma, "exponent domain out of range");
    assert!(up < 32, "pre-shift out of range");
    assert!(eps >= 1 && eps < 1u64 << exp_bits, "offset outside exponent domain");

    let mut b = CircuitBuilder::new();
    let m1 = p1_words(&mut b, n, sigma);
    let v1 = p1_words(&mut b, n, sigma);
    let m2 = p2_words(&mut b, n, sigma);
    let v2 = p2_words(&mut b, n, sigma);
    let masks = p1_words(&mut b, n, sigma);

    let mut outs = Vec::with_capacity(n * sigma);
    let wv = exp_bits + 1;
    let wide = sigma + up as usize + 1;
    for i in 0..n {
        b.stage("exponent");
        // The second moment is non-negative and below 2^exp_bits, so its
        // low bits reconstruct it exactly.
        let v_lo = b.add_words(&v1[i][..wv].to_vec(), &v2[i][..wv].to_vec());
        let shifted_in = {
            let offset = const_word(eps, wv);
            b.add_words(&v_lo, &offset)
        };
        let hot = one_hot_exponent(&mut b, &shifted_in[..exp_bits].to_vec());

        b.stage("select");
        let m_val = b.add_words(&m1[i], &m2[i]);
        let xs = sll(&sext(&m_val, wide), up as usize);
        let v = hidden_rounding_shift(&mut b, &xs, &hot, m_val[sigma - 1]);

        b.stage("mask");
        let masked = b.sub_words(&v[..sigma].to_vec(), &masks[i]);
        outs.extend(masked);
    }
    b.finish(outs)
}

/// Saturating clamp to the symmetric range of `q`-bit magnitudes, masked.
pub fn build_saturate_block(n: usize, sigma: usize, q: u32) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(sigma >= 2 && sigma <= 64, "ring width out of range");
    assert!((q as usize) < sigma, "clamp range must fit the ring");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma);
    let s2 = p2_words(&mut b, n, sigma);
    let masks = p1_words(&mut b, n, sigma);

    b.stage("reconstruct");
    let x = reconstruct(&mut b, &s1, &s2);

    b.stage("clamp");
    let hi = (1u64 << q) - 1;
    let clamped: Vec<Vec<Bit>> = x.iter().map(|xi| clamp_word(&mut b, xi, hi)).collect();

    b.stage("mask");
    let mut outs = Vec::with_capacity(n * sigma);
    for (v, r) in clamped.iter().zip(&masks) {
        outs.extend(b.sub_words(v, r));
    }
    b.finish(outs)
}

/// Ternarization block: compares each stored weight against the rounding
/// thresholds of a one-trit quantizer at weight precision `pbar_w` and emits
/// the positive and negative indicator bits, XOR-masked. Weights must lie in
/// the saturated range, so only the low bits of the ring carry information.
pub fn build_ternarize_block(n: usize, sigma: usize, pbar_w: u32) -> Circuit {
    assert!(n > 0, "block needs at least one element");
    assert!(pbar_w >= 2 && pbar_w <= 30, "weight precision out of range");
    let wt = pbar_w as usize + 2;
    assert!(sigma >= wt && sigma <= 64, "ring too narrow for threshold tests");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n, sigma);
    let s2 = p2_words(&mut b, n, sigma);
    let rbits = b.input_p1(2 * n);

    let thr = 1i64 << (pbar_w - 2);
    let mut outs = Vec::with_capacity(2 * n);
    for i in 0..n {
        b.stage("threshold");
        let a = b.add_words(&s1[i][..wt].to_vec(), &s2[i][..wt].to_vec());
        let above = {
            let c = const_signed(thr, wt);
            b.sub_words(&a, &c)
        };
        let plus = b.not(above[wt - 1]);
        let below = {
            let c = const_signed(thr - 1, wt);
            b.add_words(&a, &c)
        };
        let minus = below[wt - 1];

        b.stage("mask");
        outs.push(b.xor(plus, rbits[2 * i]));
        outs.push(b.xor(minus, rbits[2 * i + 1]));
    }
    b.finish(outs)
}

/// Window-maximum block for pooling: per window, reconstructs non-negative
/// activations from their low `value_bits`, takes the running maximum with
/// the first maximum winning ties, and emits the masked maximum along with
/// an XOR-masked one-hot selector of the winning position.
pub fn build_window_max_block(
    n_windows: usize,
    window: usize,
    sigma: usize,
    value_bits: usize,
) -> Circuit {
    assert!(n_windows > 0 && window > 0, "block needs at least one window");
    assert!(value_bits >= 1 && value_bits < sigma, "value bound must fit the ring");
    assert!(sigma <= 64, "ring width out of range");

    let mut b = CircuitBuilder::new();
    let s1 = p1_words(&mut b, n_windows * window, sigma);
    let s2 = p2_words(&mut b, n_windows * window, sigma);
    let value_masks = p1_words(&mut b, n_windows, sigma);
    let flag_masks = b.input_p1(n_windows * window);

    let mut value_outs = Vec::with_capacity(n_windows * sigma);
    let mut flag_outs = Vec::with_capacity(n_windows * window);
    let wv = value_bits + 1;
    for w in 0..n_windows {
        b.stage("reconstruct");
        let vals: Vec<Vec<Bit>> = (0..window)
            .map(|j| {
                let idx = w * window + j;
                b.add_words(
                    &s1[idx][..value_bits].to_vec(),
                    &s2[idx][..value_bits].to_vec(),
                )
            })
            .collect();

        b.stage("compare");
        let mut best = vals[0].clone();
        let mut flags = alloc::vec![Bit::Const(true)];
        for v in &vals[1..] {
            let d = {
                let be = zext(&best, wv);
                let ve = zext(v, wv);
                b.sub_words(&be, &ve)
            };
            let replaced = d[wv - 1];
            best = b.mux_words(replaced, v, &best);
            let stay = b.not(replaced);
            for f in flags.iter_mut() {
                *f = b.and(*f, stay);
            }
            flags.push(replaced);
        }

        b.stage("mask");
        let wide = zext(&best, sigma);
        value_outs.extend(b.sub_words(&wide, &value_masks[w]));
        for (j, &f) in flags.iter().enumerate() {
            flag_outs.push(b.xor(f, flag_masks[w * window + j]));
        }
    }
    let mut outs = value_outs;
    outs.extend(flag_outs);
    b.finish(outs)
}

#[cfg(test)]
mod tests {
    use super::super::{decode_outputs, garble, Evaluator, Garbled};
    use super::*;
    use crate::fxp::{self, FixedTensor};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    struct Harness<'a> {
        circuit: &'a Circuit,
        garbled: Garbled,
        evaluator: Evaluator<'a>,
        decode: Vec<u8>,
    }

    impl<'a> Harness<'a> {
        fn new(circuit: &'a Circuit, seed: u64) -> Self {
            let mut rng = StdRng::seed_from_u64(seed);
            let garbled = garble(circuit, &mut rng);
            let decode = circuit
                .outputs()
                .iter()
                .map(|&o| garbled.decode_byte(o))
                .collect();
            Harness { circuit, garbled, evaluator: Evaluator::new(circuit), decode }
        }

        fn run(&mut self, p1_bits: &[bool], p2_bits: &[bool]) -> Vec<bool> {
            let p1: Vec<u128> = self
                .circuit
                .p1_wires()
                .iter()
                .zip(p1_bits)
                .map(|(&w, &bit)| self.garbled.active_label(w, bit))
                .collect();
            let p2: Vec<u128> = self
                .circuit
                .p2_wires()
                .iter()
                .zip(p2_bits)
                .map(|(&w, &bit)| self.garbled.active_label(w, bit))
                .collect();
            let active = self
                .evaluator
                .run(self.garbled.tables(), &p1, &p2)
                .expect("evaluation succeeds");
            decode_outputs(&self.decode, &active).expect("decode succeeds")
        }
    }

    fn act_oracle(z: i64, alpha: u32, p_a: u32) -> i64 {
        let hi = (1i64 << p_a) - 1;
        fxp::round_shift_away(z.max(0), alpha).clamp(0, hi)
    }

    fn mask_oracle(z: i64, alpha: u32, p_a: u32) -> bool {
        let hi = (1i64 << p_a) - 1;
        let scaled = fxp::round_shift_away(z.max(0), alpha);
        z > 0 && scaled <= hi
    }

    #[test]
    fn forward_block_matches_the_scalar_activation_exhaustively() {
        for (case, (alpha, p_a)) in [(0u32, 7u32), (2, 7), (2, 4)].iter().enumerate() {
            let circuit = build_forward_block(1, 8, 8, *alpha, *p_a, true);
            let mut harness = Harness::new(&circuit, 0x40 + case as u64);
            for s1 in 0..=255u64 {
                for s2 in 0..=255u64 {
                    let z = ((s1 + s2) & 0xff) as u8 as i8 as i64;
                    let r = (s1 * 31 + s2 * 7 + 5) & 0xff;
                    let rb = (s1 ^ s2) & 1 == 1;
                    let mut p1 = pack_words(&[s1], 8);
                    p1.extend(pack_words(&[r], 8));
                    p1.push(rb);
                    let p2 = pack_words(&[s2], 8);
                    let out = harness.run(&p1, &p2);
                    let got = unpack_words(&out[..8], 8)[0];
                    let expect =
                        (act_oracle(z, *alpha, *p_a) as u64).wrapping_sub(r) & 0xff;
                    assert_eq!(got, expect, "alpha={alpha} p_a={p_a} s1={s1} s2={s2}");
                    let d = mask_oracle(z, *alpha, *p_a) ^ rb;
                    assert_eq!(out[8], d, "mask alpha={alpha} p_a={p_a} s1={s1} s2={s2}");
                }
            }
        }
    }

    #[test]
    fn forward_block_handles_wide_rings_and_batched_elements() {
        let n = 64;
        let circuit = build_forward_block(n, 16, 32, 5, 7, false);
        let mut rng = StdRng::seed_from_u64(0x50);
        for trial in 0..10_000 {
            let zs: Vec<i64> = (0..n).map(|_| i64::from(rng.gen::<i16>())).collect();
            let s1: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u16>())).collect();
            let s2: Vec<u64> = zs
                .iter()
                .zip(&s1)
                .map(|(&z, &a)| (z as u64).wrapping_sub(a) & 0xffff)
                .collect();
            let r: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u32>())).collect();
            let mut p1 = pack_words(&s1, 16);
            p1.extend(pack_words(&r, 32));
            let p2 = pack_words(&s2, 16);
            let out = circuit.eval_plain(&p1, &p2);
            let got = unpack_words(&out, 32);
            for i in 0..n {
                let expect = (act_oracle(zs[i], 5, 7) as u64).wrapping_sub(r[i]) & 0xffff_ffff;
                assert_eq!(got[i], expect, "trial {trial} element {i}");
            }
        }

        let mut harness = Harness::new(&circuit, 0x51);
        for trial in 0..1_000 {
            let zs: Vec<i64> = (0..n).map(|_| i64::from(rng.gen::<i16>())).collect();
            let s1: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u16>())).collect();
            let s2: Vec<u64> = zs
                .iter()
                .zip(&s1)
                .map(|(&z, &a)| (z as u64).wrapping_sub(a) & 0xffff)
                .collect();
            let r: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u32>())).collect();
            let mut p1 = pack_words(&s1, 16);
            p1.extend(pack_words(&r, 32));
            let p2 = pack_words(&s2, 16);
            let out = harness.run(&p1, &p2);
            let got = unpack_words(&out, 32);
            for i in 0..n {
                let expect = (act_oracle(zs[i], 5, 7) as u64).wrapping_sub(r[i]) & 0xffff_ffff;
                assert_eq!(got[i], expect, "garbled trial {trial} element {i}");
            }
        }
    }

    #[test]
    fn forward_relu_stage_costs_one_and_per_value_bit() {
        let circuit = build_forward_block(5, 16, 32, 3, 7, false);
        assert_eq!(circuit.stage_and_count("relu"), 5 * 16);
        let mut rng = StdRng::seed_from_u64(0x52);
        let garbled = garble(&circuit, &mut rng);
        assert_eq!(garbled.tables().len() as u64, circuit.and_count());
    }

    #[test]
    fn deriv_mask_block_matches_the_activation_mask_exhaustively() {
        for (case, (alpha, p_a)) in [(0u32, 7u32), (2, 7), (2, 4)].iter().enumerate() {
            let circuit = build_deriv_mask_block(1, 8, *alpha, *p_a);
            let mut harness = Harness::new(&circuit, 0x60 + case as u64);
            for s1 in 0..=255u64 {
                for s2 in 0..=255u64 {
                    let z = ((s1 + s2) & 0xff) as u8 as i8 as i64;
                    let r = (s1 ^ s2) & 1 == 1;
                    let mut p1 = pack_words(&[s1], 8);
                    p1.push(r);
                    let p2 = pack_words(&[s2], 8);
                    let out = harness.run(&p1, &p2);
                    let expect = mask_oracle(z, *alpha, *p_a) ^ r;
                    assert_eq!(out[0], expect, "alpha={alpha} p_a={p_a} z={z}");
                }
            }
        }
    }

    #[test]
    fn backward_norm_block_matches_the_activation_gradient_quantizer() {
        let circuit = build_backward_norm_block(2, 8, 8, 7, Some(127), true);
        let mut harness = Harness::new(&circuit, 0x70);
        let mut rng = StdRng::seed_from_u64(0x71);
        for v1 in -128i32..=127 {
            for v2 in -128i32..=127 {
                let e = FixedTensor::new(alloc::vec![v1, v2], alloc::vec![2], 8, 7)
                    .expect("tensor");
                let q = fxp::quant_act_grad(&e, 7);
                let s1: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u8>())).collect();
                let s2 = alloc::vec![
                    (v1 as u64).wrapping_sub(s1[0]) & 0xff,
                    (v2 as u64).wrapping_sub(s1[1]) & 0xff,
                ];
                let r: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u8>())).collect();
                let r_abs: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u8>())).collect();
                let mut p1 = pack_words(&s1, 8);
                p1.extend(pack_words(&r, 8));
                p1.extend(pack_words(&r_abs, 8));
                let p2 = pack_words(&s2, 8);
                let out = harness.run(&p1, &p2);
                let got = unpack_words(&out, 8);
                for i in 0..2 {
                    let expect = (q.data[i] as u64).wrapping_sub(r[i]) & 0xff;
                    assert_eq!(got[i], expect, "values ({v1}, {v2}) element {i}");
                    let expect_abs =
                        u64::from(q.data[i].unsigned_abs()).wrapping_sub(r_abs[i]) & 0xff;
                    assert_eq!(got[2 + i], expect_abs, "magnitude ({v1}, {v2}) element {i}");
                }
            }
        }
    }

    #[test]
    fn backward_norm_block_matches_the_weight_gradient_quantizer() {
        let n = 8;
        let circuit = build_backward_norm_block(n, 32, 32, 7, None, false);
        let mut harness = Harness::new(&circuit, 0x72);
        let mut rng = StdRng::seed_from_u64(0x73);
        let mut cases: Vec<Vec<i32>> = alloc::vec![
            alloc::vec![0; n],
            alloc::vec![i32::MAX, i32::MIN, 0, 1, -1, 2, -2, 77],
        ];
        for _ in 0..300 {
            let scale = 1i64 << rng.gen_range(0..31);
            cases.push(
                (0..n)
                    .map(|_| (i64::from(rng.gen::<i32>()) % scale) as i32)
                    .collect(),
            );
        }
        for (case, values) in cases.iter().enumerate() {
            let g = FixedTensor::new(values.clone(), alloc::vec![n], 32, 7).expect("tensor");
            let q = fxp::quant_weight_grad(&g, 7);
            let s1: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u32>())).collect();
            let s2: Vec<u64> = values
                .iter()
                .zip(&s1)
                .map(|(&v, &a)| (v as u32 as u64).wrapping_sub(a) & 0xffff_ffff)
                .collect();
            let r: Vec<u64> = (0..n).map(|_| u64::from(rng.gen::<u32>())).collect();
            let mut p1 = pack_words(&s1, 32);
            p1.extend(pack_words(&r, 32));
            let p2 = pack_words(&s2, 32);
            let out = harness.run(&p1, &p2);
            let got = unpack_words(&out, 32);
            for i in 0..n {
                let expect = (q.data[i] as u32 as u64).wrapping_sub(r[i]) & 0xffff_ffff;
                assert_eq!(got[i], expect, "case {case} element {i}");
            }
        }
    }

    #[test]
    fn requant_block_rounds_like_the_scalar_shift() {
        for t in [0u32, 1, 3] {
            let circuit = build_requant_block(1, 8, t);
            let mut harness = Harness::new(&circuit, 0x80 + u64::from(t));
            for s1 in 0..=255u64 {
                for s2 in 0..=255u64 {
                    let x = ((s1 + s2) & 0xff) as u8 as i8 as i64;
                    let r = (s1 * 13 + s2) & 0xff;
                    let mut p1 = pack_words(&[s1], 8);
                    p1.extend(pack_words(&[r], 8));
                    let out = harness.run(&p1, &pack_words(&[s2], 8));
                    let expect =
                        (fxp::round_shift_away(x, t) as u64).wrapping_sub(r) & 0xff;
                    assert_eq!(unpack_words(&out, 8)[0], expect, "t={t} x={x}");
                }
            }
        }

        let circuit = build_requant_block(4, 32, 7);
        let mut harness = Harness::new(&circuit, 0x84);
        let mut rng = StdRng::seed_from_u64(0x85);
        for _ in 0..500 {
            let xs: Vec<i32> = (0..4).map(|_| rng.gen()).collect();
            let s1: Vec<u64> = (0..4).map(|_| u64::from(rng.gen::<u32>())).collect();
            let s2: Vec<u64> = xs
                .iter()
                .zip(&s1)
                .map(|(&x, &a)| (x as u32 as u64).wrapping_sub(a) & 0xffff_ffff)
                .collect();
            let r: Vec<u64> = (0..4).map(|_| u64::from(rng.gen::<u32>())).collect();
            let mut p1 = pack_words(&s1, 32);
            p1.extend(pack_words(&r, 32));
            let out = harness.run(&p1, &pack_words(&s2, 32));
            let got = unpack_words(&out, 32);
            for i in 0..4 {
                let expect = (fxp::round_shift_away(i64::from(xs[i]), 7) as u64)
                    .wrapping_sub(r[i])
                    & 0xffff_ffff;
                assert_eq!(got[i], expect);
            }
        }
    }

    #[test]
    fn max_block_selects_the_larger_signed_value() {
        let circuit = build_elementwise_max_block(1, 8);
        let mut harness = Harness::new(&circuit, 0x90);
        for x in -128i64..=127 {
            for y in -128i64..=127 {
                let a1 = (x as u64).wrapping_mul(77).wrapping_add(y as u64) & 0xff;
                let a2 = (x as u64).wrapping_sub(a1) & 0xff;
                let b1 = (y as u64).wrapping_mul(31).wrapping_add(9) & 0xff;
                let b2 = (y as u64).wrapping_sub(b1) & 0xff;
                let r = (a1 ^ b1) & 0xff;
                let mut p1 = pack_words(&[a1], 8);
                p1.extend(pack_words(&[b1], 8));
                p1.extend(pack_words(&[r], 8));
                let mut p2 = pack_words(&[a2], 8);
                p2.extend(pack_words(&[b2], 8));
                let out = harness.run(&p1, &p2);
                let expect = (x.max(y) as u64).wrapping_sub(r) & 0xff;
                assert_eq!(unpack_words(&out, 8)[0], expect, "max({x}, {y})");
            }
        }
    }

    #[test]
    fn private_shift_block_applies_the_hidden_exponent() {
        let circuit = build_private_shift_block(2, 32, 7, 1, 16);
        let mut harness = Harness::new(&circuit, 0xa0);
        let mut rng = StdRng::seed_from_u64(0xa1);
        let vh_cases = [0u64, 1, 2, 3, 100, 255, 256, 4095, 65_534];
        for &vh in &vh_cases {
            for _ in 0..60 {
                let ms: Vec<i32> = (0..2).map(|_| rng.gen_range(-(1 << 20)..(1 << 20))).collect();
                let s = fxp::npow_smear(vh + 1, 16);
                let m1: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u32>())).collect();
                let m2: Vec<u64> = ms
                    .iter()
                    .zip(&m1)
                    .map(|(&m, &a)| (m as u32 as u64).wrapping_sub(a) & 0xffff_ffff)
                    .collect();
                let v1: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u32>())).collect();
                let v2: Vec<u64> = v1
                    .iter()
                    .map(|&a| vh.wrapping_sub(a) & 0xffff_ffff)
                    .collect();
                let r: Vec<u64> = (0..2).map(|_| u64::from(rng.gen::<u32>())).collect();
                let mut p1 = pack_words(&m1, 32);
                p1.extend(pack_words(&v1, 32));
                p1.extend(pack_words(&r, 32));
                let mut p2 = pack_words(&m2, 32);
                p2.extend(pack_words(&v2, 32));
                let out = harness.run(&p1, &p2);
                let got = unpack_words(&out, 32);
                for i in 0..2 {
                    let expect = (fxp::round_shift_away(i64::from(ms[i]) << 7, s) as u64)
                        .wrapping_sub(r[i])
                        & 0xffff_ffff;
                    assert_eq!(got[i], expect, "vh={vh} m={}", ms[i]);
                }
            }
        }
    }

    #[test]
    fn saturate_block_clamps_to_the_weight_range() {
        let circuit = build_saturate_block(1, 8, 4);
        let mut harness = Harness::new(&circuit, 0xb0);
        for s1 in 0..=255u64 {
            for s2 in 0..=255u64 {
                let x = ((s1 + s2) & 0xff) as u8 as i8 as i64;
                let r = (s1 * 3 + s2 * 11) & 0xff;
                let mut p1 = pack_words(&[s1], 8);
                p1.extend(pack_words(&[r], 8));
                let out = harness.run(&p1, &pack_words(&[s2], 8));
                let expect = (x.clamp(-15, 15) as u64).wrapping_sub(r) & 0xff;
                assert_eq!(unpack_words(&out, 8)[0], expect, "x={x}");
            }
        }

        let circuit = build_saturate_block(3, 32, 7);
        let mut harness = Harness::new(&circuit, 0xb1);
        let mut rng = StdRng::seed_from_u64(0xb2);
        for _ in 0..500 {
            let xs: Vec<i32> = alloc::vec![
                rng.gen_range(-200_000..200_000),
                rng.gen_range(-128..128),
                rng.gen::<i16>() as i32,
            ];
            let s1: Vec<u64> = (0..3).map(|_| u64::from(rng.gen::<u32>())).collect();
            let s2: Vec<u64> = xs
                .iter()
                .zip(&s1)
                .map(|(&x, &a)| (x as u32 as u64).wrapping_sub(a) & 0xffff_ffff)
                .collect();
            let r: Vec<u64> = (0..3).map(|_| u64::from(rng.gen::<u32>())).collect();
            let mut p1 = pack_words(&s1, 32);
            p1.extend(pack_words(&r, 32));
            let out = harness.run(&p1, &pack_words(&s2, 32));
            let got = unpack_words(&out, 32);
            for i in 0..3 {
                let expect =
                    (i64::from(xs[i]).clamp(-127, 127) as u64).wrapping_sub(r[i]) & 0xffff_ffff;
                assert_eq!(got[i], expect, "x={}", xs[i]);
            }
        }
    }

    #[test]
    fn ternarize_block_matches_the_weight_ternarizer() {
        let circuit = build_ternarize_block(1, 16, 7);
        let mut harness = Harness::new(&circuit, 0xc0);
        let mut rng = StdRng::seed_from_u64(0xc1);
        for v in -128i32..=127 {
            let w = FixedTensor::new(alloc::vec![v], alloc::vec![1], 8, 7).expect("tensor");
            let t = fxp::ternarize(&w);
            let expect_plus = t.data[0] == 1;
            let expect_minus = t.data[0] == -1;
            for _ in 0..256 {
                let s1 = u64::from(rng.gen::<u16>());
                let s2 = (v as u32 as u64).wrapping_sub(s1) & 0xffff;
                let rp = rng.gen::<bool>();
                let rm = rng.gen::<bool>();
                let mut p1 = pack_words(&[s1], 16);
                p1.push(rp);
                p1.push(rm);
                let out = harness.run(&p1, &pack_words(&[s2], 16));
                assert_eq!(out[0], expect_plus ^ rp, "plus for {v}");
                assert_eq!(out[1], expect_minus ^ rm, "minus for {v}");
            }
        }
    }

    #[test]
    fn window_max_block_tracks_the_first_maximum() {
        let circuit = build_window_max_block(1, 4, 16, 8);
        let mut harness = Harness::new(&circuit, 0xd0);
        let mut rng = StdRng::seed_from_u64(0xd1);
        for case in 0..65_536u64 {
            let vals: Vec<u64> = (0..4).map(|j| (case >> (4 * j)) & 0xf).collect();
            let best = *vals.iter().max().expect("window");
            let winner = vals.iter().position(|&v| v == best).expect("winner");
            let s1: Vec<u64> = (0..4).map(|_| u64::from(rng.gen::<u16>())).collect();
            let s2: Vec<u64> = vals
                .iter()
                .zip(&s1)
                .map(|(&v, &a)| v.wrapping_sub(a) & 0xffff)
                .collect();
            let r = u64::from(rng.gen::<u16>());
            let rflags: Vec<bool> = (0..4).map(|_| rng.gen()).collect();
            let mut p1 = pack_words(&s1, 16);
            p1.extend(pack_words(&[r], 16));
            p1.extend(rflags.iter().copied());
            let out = harness.run(&p1, &pack_words(&s2, 16));
            let got = unpack_words(&out[..16], 16)[0];
            assert_eq!(got, best.wrapping_sub(r) & 0xffff, "case {case}");
            for j in 0..4 {
                assert_eq!(out[16 + j], (j == winner) ^ rflags[j], "case {case} flag {j}");
            }
        }
    }

    #[test]
    fn masked_outputs_reconstruct_and_stay_uniform() {
        // Reveal circuit: reconstruct and subtract the garbler's mask.
        let circuit = build_requant_block(1, 8, 0);
        let mut p1 = pack_words(&[4], 8);
        p1.extend(pack_words(&[3], 8));
        let out = circuit.eval_plain(&p1, &pack_words(&[6], 8));
        assert_eq!(unpack_words(&out, 8)[0], 7);

        let mut p1 = pack_words(&[4], 8);
        p1.extend(pack_words(&[0], 8));
        let out = circuit.eval_plain(&p1, &pack_words(&[6], 8));
        assert_eq!(unpack_words(&out, 8)[0], 10);

        let mut rng = StdRng::seed_from_u64(0xe0);
        let mut bins = [0u64; 256];
        for _ in 0..10_000 {
            let value = u64::from(rng.gen::<u8>());
            let s1 = u64::from(rng.gen::<u8>());
            let s2 = value.wrapping_sub(s1) & 0xff;
            let r = u64::from(rng.gen::<u8>());
            let mut p1 = pack_words(&[s1], 8);
            p1.extend(pack_words(&[r], 8));
            let out = circuit.eval_plain(&p1, &pack_words(&[s2], 8));
            let masked = unpack_words(&out, 8)[0];
            assert_eq!(masked.wrapping_add(r) & 0xff, value);
            bins[masked as usize] += 1;
        }
        let expected = 10_000.0 / 256.0;
        let chi: f64 = bins
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi < 310.46, "masked outputs not uniform: chi-square {chi}");
    }

    #[test]
    fn blocks_run_end_to_end_over_a_channel() {
        use crate::channel::MemChannel;
        use crate::gc::{run_evaluator, run_garbler};
        use crate::ot::{ExtReceiver, ExtSender, SecurityParams};
        use rand_chacha::ChaCha20Rng;

        let n = 3;
        let circuit = build_forward_block(n, 8, 32, 2, 7, false);
        let zs: Vec<i64> = alloc::vec![100, -5, 37];
        let s1: Vec<u64> = alloc::vec![200, 17, 250];
        let s2: Vec<u64> = zs
            .iter()
            .zip(&s1)
            .map(|(&z, &a)| (z as u64).wrapping_sub(a) & 0xff)
            .collect();
        let r: Vec<u64> = alloc::vec![0x1234_5678, 9, 0xffff_fff0];

        let (mut ch1, mut ch2) = MemChannel::pair();
        let circuit2 = circuit.clone();
        let p2_bits = pack_words(&s2, 8);
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha20Rng::seed_from_u64(0xf0);
            let mut ot =
                ExtReceiver::setup(SecurityParams::default(), &mut ch2, &mut rng).expect("setup");
            run_evaluator(&circuit2, &p2_bits, &mut ot, &mut ch2).expect("evaluate")
        });
        let mut rng = ChaCha20Rng::seed_from_u64(0xf1);
        let mut ot =
            ExtSender::setup(SecurityParams::default(), &mut ch1, &mut rng).expect("setup");
        let mut p1_bits = pack_words(&s1, 8);
        p1_bits.extend(pack_words(&r, 32));
        run_garbler(&circuit, &p1_bits, &mut ot, &mut ch1, &mut rng).expect("garble");
        let out = handle.join().expect("evaluator thread");
        let got = unpack_words(&out, 32);
        for i in 0..n {
            let expect = (act_oracle(zs[i], 2, 7) as u64).wrapping_sub(r[i]) & 0xffff_ffff;
            assert_eq!(got[i], expect, "element {i}");
        }
    }

    #[test]
    fn stage_tallies_cover_every_gate() {
        let circuits = [
            build_forward_block(4, 16, 32, 3, 7, false),
            build_backward_norm_block(4, 32, 32, 7, Some(127), true),
            build_private_shift_block(2, 32, 7, 1, 16),
            build_ternarize_block(4, 32, 7),
            build_window_max_block(2, 4, 32, 8),
        ];
        for c in &circuits {
            let total: u64 = c
                .stages()
                .iter()
                .map(|s| s.and_gates + s.xor_gates + s.not_gates)
                .sum();
            assert_eq!(total, c.gates().len() as u64);
            assert!(c.and_count() > 0);
        }
    }
}
