//! Plaintext fixed-point neural networks over ternary weights.
//!
//! This module is the reference engine: the secure two-party path reproduces
//! these computations bit for bit, so every rounding point here is pinned.
//! Accumulation uses wrapping 32-bit arithmetic to match the mod-2^32 ring
//! the share protocols work in.
//!
//! Layer semantics:
//! * fully-connected and convolutional layers multiply by a ternary matrix
//!   (convolution routes through patch unrolling), apply ReLU, scale by
//!   `2^-alpha` with a rounding shift, and saturate to the activation range;
//! * max-pool takes window maxima, first maximum winning ties;
//! * a residual-add marker fuses with the immediately preceding linear
//!   layer: the recorded earlier activation joins the pre-activation sum
//!   before ReLU, and the marker owns the activation step.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::fxp::{
    self, npow_smear, quant_act_grad, quant_weight_grad, round_shift_away, FixedTensor,
    PrecisionConfig,
};

/// Errors from model construction or mismatched pass inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NnError {
    BadModel(String),
    ShapeMismatch { context: &'static str, expected: usize, got: usize },
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::BadModel(msg) => write!(f, "invalid model: {msg}"),
            NnError::ShapeMismatch { context, expected, got } => {
                write!(f, "{context}: expected length {expected}, got {got}")
            }
        }
    }
}

impl core::error::Error for NnError {}

/// Convolution geometry shared by the plaintext and secure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn patch_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn patch_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.k == 0 || self.stride == 0 {
            return Err(NnError::BadModel(String::from("zero kernel or stride")));
        }
        if self.in_h + 2 * self.pad < self.k || self.in_w + 2 * self.pad < self.k {
            return Err(NnError::BadModel(String::from("kernel larger than padded input")));
        }
        if (self.in_h + 2 * self.pad - self.k) % self.stride != 0
            || (self.in_w + 2 * self.pad - self.k) % self.stride != 0
        {
            return Err(NnError::BadModel(String::from("stride does not tile the input")));
        }
        Ok(())
    }
}

/// Patch-unrolling index map: entry `row * patch_cols + col` holds the flat
/// input index feeding that position, or `None` for zero padding. Both the
/// plaintext engine and the share protocols gather through this same map so
/// convolution reduces to the matrix-vector product everywhere.
pub fn im2col_map(g: &ConvGeom) -> Vec<Option<usize>> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut map = Vec::with_capacity(g.patch_rows() * g.patch_cols());
    for c in 0..g.in_c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let y = (oi * g.stride + ki) as isize - g.pad as isize;
                        let x = (oj * g.stride + kj) as isize - g.pad as isize;
                        if y < 0 || x < 0 || y as usize >= g.in_h || x as usize >= g.in_w {
                            map.push(None);
                        } else {
                            map.push(Some((c * g.in_h + y as usize) * g.in_w + x as usize));
                        }
                    }
                }
            }
        }
    }
    map
}

/// Gathers an input vector into the unrolled patch matrix.
pub fn im2col_gather<T: Copy + Default>(map: &[Option<usize>], input: &[T]) -> Vec<T> {
    map.iter().map(|m| m.map_or_else(T::default, |i| input[i])).collect()
}

/// Pooling window index map: one entry per output element listing the flat
/// input indices of its window in scan order.
pub fn pool_windows(in_h: usize, in_w: usize, c: usize, k: usize, stride: usize) -> Vec<Vec<usize>> {
    let oh = (in_h - k) / stride + 1;
    let ow = (in_w - k) / stride + 1;
    let mut windows = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut win = Vec::with_capacity(k * k);
                for ki in 0..k {
                    for kj in 0..k {
                        win.push((ch * in_h + oi * stride + ki) * in_w + oj * stride + kj);
                    }
                }
                windows.push(win);
            }
        }
    }
    windows
}

/// Layer shape and behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    FullyConnected { input: usize, output: usize },
    Conv { geom: ConvGeom, out_c: usize },
    MaxPool { in_h: usize, in_w: usize, c: usize, k: usize, stride: usize },
    /// Adds the activation produced at index `from` (0 is the model input,
    /// i+1 is the output of layer i) to the pre-activation of the directly
    /// preceding linear layer, then applies that layer's activation.
    ResidualAdd { from: usize },
}

/// One layer: its kind plus the activation scaling exponent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub alpha: u8,
}

impl LayerKind {
    /// Number of input elements per sample; zero for the residual marker,
    /// whose input is the preceding layer's raw pre-activation.
    pub fn in_len(&self) -> usize {
        match self {
            LayerKind::FullyConnected { input, .. } => *input,
            LayerKind::Conv { geom, .. } => geom.in_c * geom.in_h * geom.in_w,
            LayerKind::MaxPool { in_h, in_w, c, .. } => c * in_h * in_w,
            LayerKind::ResidualAdd { .. } => 0,
        }
    }

    /// Number of output elements per sample.
    pub fn out_len(&self) -> usize {
        match self {
            LayerKind::FullyConnected { output, .. } => *output,
            LayerKind::Conv { geom, out_c } => out_c * geom.patch_cols(),
            LayerKind::MaxPool { in_h, in_w, c, k, stride } => {
                let oh = (in_h - k) / stride + 1;
                let ow = (in_w - k) / stride + 1;
                c * oh * ow
            }
            LayerKind::ResidualAdd { .. } => 0,
        }
    }

    /// Weight matrix dimensions for parametered layers.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match self {
            LayerKind::FullyConnected { input, output } => Some((*output, *input)),
            LayerKind::Conv { geom, out_c } => Some((*out_c, geom.patch_rows())),
            _ => None,
        }
    }

    /// Fan-in used for the default activation scaling exponent.
    pub fn fan_in(&self) -> usize {
        match self {
            LayerKind::FullyConnected { input, .. } => *input,
            LayerKind::Conv { geom, .. } => geom.patch_rows(),
            _ => 0,
        }
    }
}

/// Default activation scaling exponent: `max(0, round(log2(sqrt(fan_in))))`.
pub fn default_alpha(fan_in: usize) -> u8 {
    if fan_in <= 1 {
        return 0;
    }
    let half_log = 0.5 * libm::log2(fan_in as f64);
    let rounded = libm::round(half_log);
    if rounded < 0.0 {
        0
    } else {
        rounded as u8
    }
}

/// A ternary-weight network: stored weights at precision `p_w_bar` drive the
/// ternary weights used by every pass, refreshed after each optimizer step.
#[derive(Debug, Clone)]
pub struct Model {
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
    pub weights_stored: Vec<Option<FixedTensor>>,
    pub weights_ternary: Vec<Option<FixedTensor>>,
    pub config: PrecisionConfig,
}

impl Model {
    /// Validates the layer chain and creates a model with zero weights.
    /// `config.alpha` is overwritten with the per-layer exponents.
    pub fn new(
        input_len: usize,
        layers: Vec<LayerSpec>,
        mut config: PrecisionConfig,
    ) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadModel(String::from("no layers")));
        }
        let mut act_len = Vec::with_capacity(layers.len() + 1);
        act_len.push(input_len);
        for (i, layer) in layers.iter().enumerate() {
            let prev = *act_len.last().unwrap();
            match &layer.kind {
                LayerKind::FullyConnected { .. }
                | LayerKind::Conv { .. }
                | LayerKind::MaxPool { .. } => {
                    if let LayerKind::Conv { geom, .. } = &layer.kind {
                        geom.validate()?;
                    }
                    if layer.kind.in_len() != prev {
                        return Err(NnError::ShapeMismatch {
                            context: "layer input",
                            expected: prev,
                            got: layer.kind.in_len(),
                        });
                    }
                    act_len.push(layer.kind.out_len());
                }
                LayerKind::ResidualAdd { from } => {
                    let fused = i
                        .checked_sub(1)
                        .map(|p| {
                            matches!(
                                layers[p].kind,
                                LayerKind::FullyConnected { .. } | LayerKind::Conv { .. }
                            )
                        })
                        .unwrap_or(false);
                    if !fused {
                        return Err(NnError::BadModel(String::from(
                            "residual marker must directly follow a linear layer",
                        )));
                    }
                    if *from >= i {
                        return Err(NnError::BadModel(String::from(
                            "residual source must precede the fused layer",
                        )));
                    }
                    if act_len[*from] != prev {
                        return Err(NnError::ShapeMismatch {
                            context: "residual source",
                            expected: prev,
                            got: act_len[*from],
                        });
                    }
                    act_len.push(prev);
                }
            }
        }
        config.alpha = layers.iter().map(|l| l.alpha).collect();
        let weights_stored: Vec<Option<FixedTensor>> = layers
            .iter()
            .map(|l| {
                l.kind
                    .weight_shape()
                    .map(|(r, c)| FixedTensor::zeros(vec![r, c], 8, config.p_w_bar))
            })
            .collect();
        let weights_ternary = weights_stored
            .iter()
            .map(|w| w.as_ref().map(fxp::ternarize))
            .collect();
        Ok(Model { input_len, layers, weights_stored, weights_ternary, config })
    }

    /// Per-sample activation lengths at every index (0 is the input).
    pub fn activation_lens(&self) -> Vec<usize> {
        let mut lens = Vec::with_capacity(self.layers.len() + 1);
        lens.push(self.input_len);
        for layer in &self.layers {
            let prev = *lens.last().unwrap();
            match layer.kind {
                LayerKind::ResidualAdd { .. } => lens.push(prev),
                _ => lens.push(layer.kind.out_len()),
            }
        }
        lens
    }

    /// Draws stored weights uniformly over the full representable range and
    /// refreshes the ternary matrices. Deterministic per generator state.
    pub fn init_random(&mut self, rng: &mut impl RngCore) {
        let hi = (1i32 << self.config.p_w_bar) - 1;
        let span = (2 * hi + 1) as u32;
        for w in self.weights_stored.iter_mut().flatten() {
            for elem in w.data.iter_mut() {
                *elem = (rng.next_u32() % span) as i32 - hi;
            }
        }
        self.refresh_ternary();
    }

    /// Recomputes every ternary matrix from the stored weights.
    pub fn refresh_ternary(&mut self) {
        self.weights_ternary = self
            .weights_stored
            .iter()
            .map(|w| w.as_ref().map(fxp::ternarize))
            .collect();
    }

    /// True when layer `i` is a linear layer fused with a following
    /// residual marker (the marker owns the activation step).
    pub fn fused_with_marker(&self, i: usize) -> bool {
        matches!(self.layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::ResidualAdd { .. }))
    }
}

/// Per-layer forward records needed by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct TapeEntry {
    /// Pre-activation accumulator, for layers that own an activation step.
    pub z: Option<FixedTensor>,
    /// Combined ReLU/saturation derivative mask: bit i is set iff z_i > 0
    /// and the alpha-scaled value stayed strictly inside the clamp range.
    pub d: Option<Vec<bool>>,
    /// Flat input index of each window maximum (first maximum wins).
    pub argmax: Option<Vec<usize>>,
}

/// Activations and tape from one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input; `activations[i+1]` is layer i's
    /// output (the raw pre-activation for a linear layer fused with a
    /// residual marker).
    pub activations: Vec<FixedTensor>,
    pub tape: Vec<TapeEntry>,
}

fn batch_of(t: &FixedTensor) -> usize {
    t.shape[0]
}

fn per_sample(t: &FixedTensor) -> usize {
    t.data.len() / t.shape[0]
}

/// Ternary matrix times batch of vectors into a wrapping 32-bit accumulator:
/// out[b][o] = sum_i w[o][i] * a[b][i].
fn ternary_matvec(w: &FixedTensor, a_data: &[i32], batch: usize, p_out: u8) -> FixedTensor {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(a_data.len(), batch * in_dim);
    let mut out = vec![0i32; batch * out_dim];
    for b in 0..batch {
        let sample = &a_data[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let row = &w.data[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0i32;
            for (&wv, &av) in row.iter().zip(sample) {
                match wv {
                    1 => acc = acc.wrapping_add(av),
                    -1 => acc = acc.wrapping_sub(av),
                    _ => {}
                }
            }
            out[b * out_dim + o] = acc;
        }
    }
    FixedTensor { data: out, shape: vec![batch, out_dim], bits: 32, prec: p_out }
}

/// ReLU, rounding shift by alpha, and clamp, recording the derivative mask.
fn activation_step(z: &FixedTensor, alpha: u8, p_a: u8) -> (FixedTensor, Vec<bool>) {
    let hi = (1i32 << p_a) - 1;
    let mut mask = Vec::with_capacity(z.data.len());
    let data = z
        .data
        .iter()
        .map(|&zv| {
            let positive = zv > 0;
            let scaled = round_shift_away(i64::from(zv.max(0)), u32::from(alpha)) as i32;
            mask.push(positive && scaled <= hi);
            scaled.clamp(0, hi)
        })
        .collect();
    (
        FixedTensor { data, shape: z.shape.clone(), bits: 8, prec: p_a },
        mask,
    )
}

/// Runs the model over a batch, returning all activations and the tape.
pub fn forward(model: &Model, a0: &FixedTensor) -> Result<ForwardPass, NnError> {
    if a0.shape.len() != 2 || per_sample(a0) != model.input_len {
        return Err(NnError::ShapeMismatch {
            context: "forward input",
            expected: model.input_len,
            got: if a0.shape.len() == 2 { per_sample(a0) } else { 0 },
        });
    }
    let batch = batch_of(a0);
    let p_a = model.config.p_a;
    let mut activations = vec![a0.clone()];
    let mut tape: Vec<TapeEntry> = Vec::with_capacity(model.layers.len());

    for (i, layer) in model.layers.iter().enumerate() {
        let prev = &activations[i];
        match &layer.kind {
            LayerKind::FullyConnected { .. } | LayerKind::Conv { .. } => {
                let w = model.weights_ternary[i]
                    .as_ref()
                    .ok_or_else(|| NnError::BadModel(String::from("missing weights")))?;
                let z = match &layer.kind {
                    LayerKind::FullyConnected { .. } => {
                        ternary_matvec(w, &prev.data, batch, p_a)
                    }
                    LayerKind::Conv { geom, out_c } => {
                        let map = im2col_map(geom);
                        let cols = geom.patch_cols();
                        let in_len = layer.kind.in_len();
                        let mut z_data = vec![0i32; batch * out_c * cols];
                        for b in 0..batch {
                            let patches = im2col_gather(
                                &map,
                                &prev.data[b * in_len..(b + 1) * in_len],
                            );
                            for oc in 0..*out_c {
                                let row = &w.data[oc * geom.patch_rows()..(oc + 1) * geom.patch_rows()];
                                for col in 0..cols {
                                    let mut acc = 0i32;
                                    for (r, &wv) in row.iter().enumerate() {
                                        let av = patches[r * cols + col];
                                        match wv {
                                            1 => acc = acc.wrapping_add(av),
                                            -1 => acc = acc.wrapping_sub(av),
                                            _ => {}
                                        }
                                    }
                                    z_data[(b * out_c + oc) * cols + col] = acc;
                                }
                            }
                        }
                        FixedTensor {
                            data: z_data,
                            shape: vec![batch, out_c * cols],
                            bits: 32,
                            prec: p_a,
                        }
                    }
                    _ => unreachable!(),
                };
                if model.fused_with_marker(i) {
                    // The following residual marker owns the activation.
                    tape.push(TapeEntry::default());
                    activations.push(z);
                } else {
                    let (a, d) = activation_step(&z, layer.alpha, p_a);
                    tape.push(TapeEntry { z: Some(z), d: Some(d), argmax: None });
                    activations.push(a);
                }
            }
            LayerKind::MaxPool { in_h, in_w, c, k, stride } => {
                let windows = pool_windows(*in_h, *in_w, *c, *k, *stride);
                let out_len = windows.len();
                let in_len = layer.kind.in_len();
                let mut out = vec![0i32; batch * out_len];
                let mut argmax = vec![0usize; batch * out_len];
                for b in 0..batch {
                    let sample = &prev.data[b * in_len..(b + 1) * in_len];
                    for (o, win) in windows.iter().enumerate() {
                        let mut best = sample[win[0]];
                        let mut best_idx = win[0];
                        for &idx in &win[1..] {
                            if sample[idx] > best {
                                best = sample[idx];
                                best_idx = idx;
                            }
                        }
                        out[b * out_len + o] = best;
                        argmax[b * out_len + o] = best_idx;
                    }
                }
                tape.push(TapeEntry { z: None, d: None, argmax: Some(argmax) });
                activations.push(FixedTensor {
                    data: out,
                    shape: vec![batch, out_len],
                    bits: 8,
                    prec: p_a,
                });
            }
            LayerKind::ResidualAdd { from } => {
                let skip = &activations[*from];
                let z_raw = &activations[i];
                let data: Vec<i32> = z_raw
                    .data
                    .iter()
                    .zip(&skip.data)
                    .map(|(&zv, &sv)| zv.wrapping_add(sv))
                    .collect();
                let z = FixedTensor {
                    data,
                    shape: z_raw.shape.clone(),
                    bits: 32,
                    prec: p_a,
                };
                let (a, d) = activation_step(&z, layer.alpha, p_a);
                tape.push(TapeEntry { z: Some(z), d: Some(d), argmax: None });
                activations.push(a);
            }
        }
    }
    Ok(ForwardPass { activations, tape })
}

/// Error signal of the squared loss at the output layer: `aL - y` in the
/// 32-bit accumulator. Labels are one-hot at the activation precision.
pub fn mse_loss_grad(a_last: &FixedTensor, y: &FixedTensor) -> FixedTensor {
    debug_assert_eq!(a_last.data.len(), y.data.len());
    FixedTensor {
        data: a_last
            .data
            .iter()
            .zip(&y.data)
            .map(|(&a, &t)| a.wrapping_sub(t))
            .collect(),
        shape: a_last.shape.clone(),
        bits: 32,
        prec: a_last.prec,
    }
}

/// Mean squared error over the batch, in real value units, for reporting.
pub fn mse_loss(a_last: &FixedTensor, y: &FixedTensor) -> f64 {
    let scale = libm::exp2(-f64::from(a_last.prec));
    let sum: f64 = a_last
        .data
        .iter()
        .zip(&y.data)
        .map(|(&a, &t)| {
            let d = f64::from(a - t) * scale;
            d * d
        })
        .sum();
    sum / a_last.data.len() as f64
}

/// Index of the largest output per sample, first maximum winning ties.
pub fn argmax_rows(a_last: &FixedTensor) -> Vec<usize> {
    let batch = batch_of(a_last);
    let n = per_sample(a_last);
    (0..batch)
        .map(|b| {
            let row = &a_last.data[b * n..(b + 1) * n];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Transposed ternary matvec: out[b][i] = sum_o w[o][i] * u[b][o].
fn ternary_matvec_t(w: &FixedTensor, u_data: &[i32], batch: usize, p_out: u8) -> FixedTensor {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(u_data.len(), batch * out_dim);
    let mut out = vec![0i32; batch * in_dim];
    for b in 0..batch {
        for o in 0..out_dim {
            let uv = u_data[b * out_dim + o];
            if uv == 0 {
                continue;
            }
            let row = &w.data[o * in_dim..(o + 1) * in_dim];
            for (i, &wv) in row.iter().enumerate() {
                match wv {
                    1 => out[b * in_dim + i] = out[b * in_dim + i].wrapping_add(uv),
                    -1 => out[b * in_dim + i] = out[b * in_dim + i].wrapping_sub(uv),
                    _ => {}
                }
            }
        }
    }
    FixedTensor { data: out, shape: vec![batch, in_dim], bits: 32, prec: p_out }
}

/// Backward pass: returns the raw 32-bit weight-gradient accumulator per
/// parametered layer (None elsewhere), summed over the batch.
pub fn backward(
    model: &Model,
    pass: &ForwardPass,
    e_last: &FixedTensor,
) -> Result<Vec<Option<FixedTensor>>, NnError> {
    let n_layers = model.layers.len();
    let batch = batch_of(e_last);
    let p_e = model.config.p_e;
    let lens = model.activation_lens();
    if per_sample(e_last) != lens[n_layers] {
        return Err(NnError::ShapeMismatch {
            context: "backward input",
            expected: lens[n_layers],
            got: per_sample(e_last),
        });
    }

    // err[i] accumulates the gradient with respect to activations[i].
    let mut err: Vec<Option<FixedTensor>> = vec![None; n_layers + 1];
    err[n_layers] = Some(e_last.clone());
    let mut grads: Vec<Option<FixedTensor>> = vec![None; n_layers];
    // Quantized/masked gradient handed from a residual marker to the linear
    // layer it fused with.
    let mut carried: Option<(FixedTensor, FixedTensor)> = None;

    let add_into = |slot: &mut Option<FixedTensor>, delta: &FixedTensor| {
        match slot {
            Some(acc) => {
                for (a, &d) in acc.data.iter_mut().zip(&delta.data) {
                    *a = a.wrapping_add(d);
                }
            }
            None => *slot = Some(delta.clone()),
        }
    };

    for i in (0..n_layers).rev() {
        let layer = &model.layers[i];
        match &layer.kind {
            LayerKind::FullyConnected { .. } | LayerKind::Conv { .. } => {
                let w = model.weights_ternary[i]
                    .as_ref()
                    .ok_or_else(|| NnError::BadModel(String::from("missing weights")))?;
                let (e_q, u) = if let Some(pair) = carried.take() {
                    pair
                } else {
                    let e_in = err[i + 1]
                        .take()
                        .ok_or_else(|| NnError::BadModel(String::from("missing error")))?;
                    let e_q = quant_act_grad(&e_in, p_e);
                    let d = model_mask(&pass.tape[i])?;
                    (e_q.clone(), apply_mask(&e_q, d))
                };
                let a_prev = &pass.activations[i];
                let patch_map = match &layer.kind {
                    LayerKind::Conv { geom, .. } => Some((im2col_map(geom), layer.kind.in_len())),
                    _ => None,
                };
                grads[i] = Some(weight_grad(
                    w,
                    a_prev,
                    &e_q,
                    batch,
                    patch_map.as_ref().map(|(m, l)| (m.as_slice(), *l)),
                    model.config.p_a,
                    p_e,
                ));
                let e_prev = match &layer.kind {
                    LayerKind::FullyConnected { .. } => {
                        ternary_matvec_t(w, &u.data, batch, p_e)
                    }
                    LayerKind::Conv { geom, out_c } => {
                        conv_backward_input(w, geom, *out_c, &u.data, batch, p_e)
                    }
                    _ => unreachable!(),
                };
                add_into(&mut err[i], &e_prev);
            }
            LayerKind::MaxPool { .. } => {
                let e_in = err[i + 1]
                    .take()
                    .ok_or_else(|| NnError::BadModel(String::from("missing error")))?;
                let argmax = pass.tape[i]
                    .argmax
                    .as_ref()
                    .ok_or_else(|| NnError::BadModel(String::from("missing pool tape")))?;
                let in_len = lens[i];
                let out_len = lens[i + 1];
                let mut routed = vec![0i32; batch * in_len];
                for b in 0..batch {
                    for o in 0..out_len {
                        let src = argmax[b * out_len + o];
                        routed[b * in_len + src] =
                            routed[b * in_len + src].wrapping_add(e_in.data[b * out_len + o]);
                    }
                }
                let e_prev = FixedTensor {
                    data: routed,
                    shape: vec![batch, in_len],
                    bits: 32,
                    prec: e_in.prec,
                };
                add_into(&mut err[i], &e_prev);
            }
            LayerKind::ResidualAdd { from } => {
                let e_in = err[i + 1]
                    .take()
                    .ok_or_else(|| NnError::BadModel(String::from("missing error")))?;
                let e_q = quant_act_grad(&e_in, p_e);
                let d = model_mask(&pass.tape[i])?;
                let u = apply_mask(&e_q, d);
                add_into(&mut err[*from], &u);
                carried = Some((e_q, u));
            }
        }
    }
    Ok(grads)
}

fn model_mask<'t>(entry: &'t TapeEntry) -> Result<&'t [bool], NnError> {
    entry
        .d
        .as_deref()
        .ok_or_else(|| NnError::BadModel(String::from("missing derivative mask")))
}

fn apply_mask(e_q: &FixedTensor, d: &[bool]) -> FixedTensor {
    FixedTensor {
        data: e_q
            .data
            .iter()
            .zip(d)
            .map(|(&e, &keep)| if keep { e } else { 0 })
            .collect(),
        shape: e_q.shape.clone(),
        bits: e_q.bits,
        prec: e_q.prec,
    }
}

/// Weight gradient accumulator: G[o][i] = sum_b e_q[b][o] * a_prev[b][i]
/// (patches replace a_prev for convolution, gathered through `patch_map`),
/// wrapping 32-bit, summed over the batch, at precision p_a + p_e.
fn weight_grad(
    w: &FixedTensor,
    a_prev: &FixedTensor,
    e_q: &FixedTensor,
    batch: usize,
    patch_map: Option<(&[Option<usize>], usize)>,
    p_a: u8,
    p_e: u8,
) -> FixedTensor {
    let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
    let mut g = vec![0i32; out_dim * in_dim];
    let e_per = e_q.data.len() / batch;
    match patch_map {
        None => {
            for b in 0..batch {
                for o in 0..out_dim {
                    let ev = e_q.data[b * out_dim + o];
                    if ev == 0 {
                        continue;
                    }
                    for i in 0..in_dim {
                        let slot = &mut g[o * in_dim + i];
                        *slot = slot.wrapping_add(ev.wrapping_mul(a_prev.data[b * in_dim + i]));
                    }
                }
            }
        }
        Some((map, in_len)) => {
            // Convolution: e_q is [batch, out_c * cols].
            let cols = e_per / out_dim;
            for b in 0..batch {
                let patches =
                    im2col_gather(map, &a_prev.data[b * in_len..(b + 1) * in_len]);
                for o in 0..out_dim {
                    for col in 0..cols {
                        let ev = e_q.data[(b * out_dim + o) * cols + col];
                        if ev == 0 {
                            continue;
                        }
                        for r in 0..in_dim {
                            let slot = &mut g[o * in_dim + r];
                            *slot = slot.wrapping_add(ev.wrapping_mul(patches[r * cols + col]));
                        }
                    }
                }
            }
        }
    }
    FixedTensor { data: g, shape: vec![out_dim, in_dim], bits: 32, prec: p_a + p_e }
}

/// First and second moment tensors plus the running second-moment maximum,
/// one entry per parametered layer, all starting at zero.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<Option<FixedTensor>>,
    pub v: Vec<Option<FixedTensor>>,
    pub v_hat: Vec<Option<FixedTensor>>,
}

impl OptimizerState {
    pub fn zeros(model: &Model) -> Self {
        let make = |prec: u8| {
            model
                .weights_stored
                .iter()
                .map(|w| w.as_ref().map(|t| FixedTensor::zeros(t.shape.clone(), 32, prec)))
                .collect::<Vec<_>>()
        };
        OptimizerState {
            m: make(model.config.p_m),
            v: make(model.config.p_v),
            v_hat: make(model.config.p_v),
        }
    }
}

/// Subtracts `2^eta` times the quantized gradient from the stored weights,
/// saturating to the stored-weight range. The gradient integer is aligned
/// from precision `p_g` to `p_w_bar` by an exact or rounding shift.
fn apply_weight_update(w: &mut FixedTensor, g_q: &FixedTensor, eta: i8, p_w_bar: u8, p_g: u8) {
    let shift = i32::from(eta) + i32::from(p_w_bar) - i32::from(p_g);
    let hi = i64::from((1i32 << p_w_bar) - 1);
    for (wv, &gv) in w.data.iter_mut().zip(&g_q.data) {
        let step = if shift >= 0 {
            i64::from(gv) << shift
        } else {
            round_shift_away(i64::from(gv), (-shift) as u32)
        };
        *wv = (i64::from(*wv) - step).clamp(-hi, hi) as i32;
    }
}

/// Fixed-point SGD: quantize each raw gradient with the normalizing
/// weight-gradient quantizer, take a saturating step, and re-ternarize.
pub fn sgd_step(model: &mut Model, grads: &[Option<FixedTensor>]) -> Result<(), NnError> {
    let cfg = model.config.clone();
    for (i, grad) in grads.iter().enumerate() {
        let (Some(g), Some(w)) = (grad.as_ref(), model.weights_stored[i].as_mut()) else {
            continue;
        };
        let g_q = quant_weight_grad(g, cfg.p_g);
        apply_weight_update(w, &g_q, cfg.eta, cfg.p_w_bar, cfg.p_g);
    }
    model.refresh_ternary();
    Ok(())
}

/// Aligns an integer from one precision to another: exact left shift when
/// the target is finer, rounding right shift otherwise.
fn align_prec(x: i64, from: u8, to: u8) -> i64 {
    if to >= from {
        x << (to - from)
    } else {
        round_shift_away(x, u32::from(from - to))
    }
}

/// Fixed-point AMSgrad step. Per parametered layer, with all arithmetic on
/// integers:
/// 1. normalize the raw gradient by the next power of two of its largest
///    magnitude (the weight-gradient quantizer without saturation);
/// 2. decay the moments with the public precision-7 constants
///    0.9 -> 115/128, 0.1 -> 13/128, 0.99 -> 127/128, 0.01 -> 1/128, one
///    rounding shift per moment;
/// 3. raise the running maximum of the second moment;
/// 4. scale the first moment down by the per-element next power of two of
///    (max second moment + eps), rounding once into precision `p_g`;
/// 5. take the same saturating weight step as SGD and re-ternarize.
pub fn amsgrad_step(
    model: &mut Model,
    state: &mut OptimizerState,
    grads: &[Option<FixedTensor>],
) -> Result<(), NnError> {
    let cfg = model.config.clone();
    let eps = i64::from(cfg.eps_int());
    for (i, grad) in grads.iter().enumerate() {
        let Some(g) = grad.as_ref() else { continue };
        let w = model.weights_stored[i]
            .as_mut()
            .ok_or_else(|| NnError::BadModel(String::from("gradient for weightless layer")))?;
        let m = state.m[i].as_mut().unwrap();
        let v = state.v[i].as_mut().unwrap();
        let v_hat = state.v_hat[i].as_mut().unwrap();

        let g1 = quant_weight_grad(g, cfg.p_g);
        let mut g2 = FixedTensor::zeros(g1.shape.clone(), 32, cfg.p_g);
        for j in 0..g1.data.len() {
            let g_pm = align_prec(i64::from(g1.data[j]), cfg.p_g, cfg.p_m);
            let g_pv = align_prec(i64::from(g1.data[j]), cfg.p_g, cfg.p_v).abs();
            let m_new = round_shift_away(115 * i64::from(m.data[j]) + 13 * g_pm, 7);
            let v_new = round_shift_away(127 * i64::from(v.data[j]) + g_pv, 7);
            let vh_new = i64::from(v_hat.data[j]).max(v_new);
            m.data[j] = m_new as i32;
            v.data[j] = v_new as i32;
            v_hat.data[j] = vh_new as i32;

            let scaled = (vh_new + eps) as u64;
            debug_assert!(scaled < (1 << 16), "second-moment magnitude exceeds 16 bits");
            let s = npow_smear(scaled, 16);
            let up = i32::from(cfg.p_g) + i32::from(cfg.p_v) - i32::from(cfg.p_m);
            debug_assert!(up >= 0, "p_g + p_v must reach p_m");
            g2.data[j] = round_shift_away(m_new << up, s) as i32;
        }
        apply_weight_update(w, &g2, cfg.eta, cfg.p_w_bar, cfg.p_g);
    }
    model.refresh_ternary();
    Ok(())
}

/// Floating-point fully-connected network mirroring the fixed-point layer
/// semantics in real arithmetic: ReLU, scale by `2^-alpha`, clamp to the
/// open unit range. Baseline and gradient-sanity reference only.
#[derive(Debug, Clone)]
pub struct FloatMlp {
    pub dims: Vec<usize>,
    pub alpha: Vec<u8>,
    pub weights: Vec<Vec<f64>>,
    pub clamp_hi: f64,
}

impl FloatMlp {
    /// Copies the architecture and current ternary weight values of a
    /// fully-connected fixed-point model.
    pub fn from_ternary(model: &Model) -> Option<FloatMlp> {
        let mut dims = vec![model.input_len];
        let mut alpha = Vec::new();
        let mut weights = Vec::new();
        for (i, layer) in model.layers.iter().enumerate() {
            let LayerKind::FullyConnected { output, .. } = layer.kind else {
                return None;
            };
            dims.push(output);
            alpha.push(layer.alpha);
            weights.push(
                model.weights_ternary[i]
                    .as_ref()?
                    .data
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect(),
            );
        }
        Some(FloatMlp {
            dims,
            alpha,
            weights,
            clamp_hi: 1.0 - libm::exp2(-f64::from(model.config.p_a)),
        })
    }

    /// Per-layer activations for one sample, layer 0 being the input.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (l, w) in self.weights.iter().enumerate() {
            let (out_d, in_d) = (self.dims[l + 1], self.dims[l]);
            let prev = acts.last().unwrap();
            let scale = libm::exp2(-f64::from(self.alpha[l]));
            let mut a = vec![0.0; out_d];
            for o in 0..out_d {
                let mut z = 0.0;
                for i in 0..in_d {
                    z += w[o * in_d + i] * prev[i];
                }
                let r = if z > 0.0 { z * scale } else { 0.0 };
                a[o] = r.min(self.clamp_hi);
            }
            acts.push(a);
        }
        acts
    }

    /// Squared-error loss against a one-hot target, summed over outputs.
    pub fn loss(&self, x: &[f64], y: &[f64]) -> f64 {
        let out = self.forward(x);
        out.last()
            .unwrap()
            .iter()
            .zip(y)
            .map(|(&a, &t)| (a - t) * (a - t))
            .sum()
    }

    /// Analytic gradient of [`FloatMlp::loss`] with respect to each weight,
    /// one flat matrix per layer, summed over the batch.
    pub fn grad(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> =
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        for (x, y) in xs.iter().zip(ys) {
            let acts = self.forward(x);
            let last = acts.last().unwrap();
            let mut e: Vec<f64> =
                last.iter().zip(y).map(|(&a, &t)| 2.0 * (a - t)).collect();
            for l in (0..self.weights.len()).rev() {
                let (out_d, in_d) = (self.dims[l + 1], self.dims[l]);
                let scale = libm::exp2(-f64::from(self.alpha[l]));
                let prev = &acts[l];
                // Derivative through clamp and ReLU on the recomputed
                // pre-activation.
                let mut dz = vec![0.0; out_d];
                for o in 0..out_d {
                    let mut z = 0.0;
                    for i in 0..in_d {
                        z += self.weights[l][o * in_d + i] * prev[i];
                    }
                    let scaled = z * scale;
                    dz[o] = if z > 0.0 && scaled < self.clamp_hi {
                        e[o] * scale
                    } else {
                        0.0
                    };
                }
                for o in 0..out_d {
                    for i in 0..in_d {
                        grads[l][o * in_d + i] += dz[o] * prev[i];
                    }
                }
                let mut e_prev = vec![0.0; in_d];
                for i in 0..in_d {
                    for o in 0..out_d {
                        e_prev[i] += self.weights[l][o * in_d + i] * dz[o];
                    }
                }
                e = e_prev;
            }
        }
        grads
    }
}

/// Floating-point moment state for the standard optimizer.
#[derive(Debug, Clone)]
pub struct FloatMoments {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
}

impl FloatMoments {
    pub fn zeros(mlp: &FloatMlp) -> Self {
        let z: Vec<Vec<f64>> = mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        FloatMoments { m: z.clone(), v: z.clone(), v_hat: z }
    }
}

/// Standard floating-point AMSgrad step with square and square root kept:
/// M = 0.9 M + 0.1 G, V = 0.99 V + 0.01 G^2, V_hat = max(V_hat, V),
/// W -= eta * M / (sqrt(V_hat) + eps).
pub fn standard_amsgrad_step(
    weights: &mut [Vec<f64>],
    state: &mut FloatMoments,
    grads: &[Vec<f64>],
    eta: f64,
    eps: f64,
) {
    for l in 0..weights.len() {
        for j in 0..weights[l].len() {
            let g = grads[l][j];
            state.m[l][j] = 0.9 * state.m[l][j] + 0.1 * g;
            state.v[l][j] = 0.99 * state.v[l][j] + 0.01 * g * g;
            if state.v[l][j] > state.v_hat[l][j] {
                state.v_hat[l][j] = state.v[l][j];
            }
            weights[l][j] -= eta * state.m[l][j] / (libm::sqrt(state.v_hat[l][j]) + eps);
        }
    }
}

/// Gradient with respect to a convolution input: scatter the transposed
/// matvec of the patch gradient back through the unrolling map.
fn conv_backward_input(
    w: &FixedTensor,
    geom: &ConvGeom,
    out_c: usize,
    u_data: &[i32],
    batch: usize,
    p_out: u8,
) -> FixedTensor {
    let map = im2col_map(geom);
    let rows = geom.patch_rows();
    let cols = geom.patch_cols();
    let in_len = geom.in_c * geom.in_h * geom.in_w;
    let mut out = vec![0i32; batch * in_len];
    for b in 0..batch {
        for r in 0..rows {
            for col in 0..cols {
                let Some(src) = map[r * cols + col] else { continue };
                let mut acc = 0i32;
                for oc in 0..out_c {
                    let wv = w.data[oc * rows + r];
                    if wv == 0 {
                        continue;
                    }
                    let uv = u_data[(b * out_c + oc) * cols + col];
                    acc = if wv == 1 {
                        acc.wrapping_add(uv)
                    } else {
                        acc.wrapping_sub(uv)
                    };
                }
                out[b * in_len + src] = out[b * in_len + src].wrapping_add(acc);
            }
        }
    }
    FixedTensor { data: out, shape: vec![batch, in_len], bits: 32, prec: p_out }
}
