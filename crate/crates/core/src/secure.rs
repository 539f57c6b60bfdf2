//! Two-party secure training and prediction over shared ternary networks.
//!
//! Both parties hold additive shares of every tensor in one 32-bit ring and
//! Boolean shares of the ternary weight indicators. Linear layers run as
//! batched correlated-transfer matrix-vector products; nonlinear steps
//! (activation, gradient normalization, rounding, maxima, ternarization)
//! run as garbled-circuit blocks that reconstruct inside the circuit and
//! emit freshly masked shares. Everything in between is local ring
//! arithmetic. Party 1 always garbles and party 2 always evaluates.
//!
//! The pipeline mirrors the plaintext engine operation for operation, so
//! reconstructing any secure intermediate yields the plaintext value
//! exactly; training trajectories agree bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore, SeedableRng};

use crate::channel::{msg, Channel, ChannelError};
use crate::fxp::{FixedTensor, FxpError, PrecisionConfig};
use crate::gc::{self, blocks, Circuit, GcError};
use crate::nn::{self, LayerKind, LayerSpec, Model, NnError};
use crate::ot::SecurityParams;
use crate::proto::{
    componentwise_mult_cot, outer_product, packed_matvec, MatVecJob, PackedLaneConfig,
    ProtoError, ProtoSession, Role,
};
use crate::shares::{
    decompose_ternary, local_add, local_const_mul, local_sub, ring_mask, share_arith,
    ArithShare, BoolShare, SharedTernaryMatrix, SharesError,
};

/// Ring width of every arithmetic share in a secure session. Matches the
/// plaintext engine's 32-bit accumulators, so reconstruction is exact.
pub const SHARE_RING: u8 = 32;

/// Errors raised by the composed secure protocols.
#[derive(Debug)]
pub enum SecureError {
    Channel(ChannelError),
    Gc(GcError),
    Proto(ProtoError),
    Shares(SharesError),
    Model(NnError),
    Config(FxpError),
    /// Inputs disagree in shape or ring.
    Shape(String),
    /// The two parties are out of step or configured differently.
    Protocol(String),
}

impl fmt::Display for SecureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SecureError::Channel(e) => write!(f, "channel error: {e}"),
            SecureError::Gc(e) => write!(f, "garbling error: {e}"),
            SecureError::Proto(e) => write!(f, "transfer protocol error: {e}"),
            SecureError::Shares(e) => write!(f, "share error: {e}"),
            SecureError::Model(e) => write!(f, "model error: {e}"),
            SecureError::Config(e) => write!(f, "configuration error: {e}"),
            SecureError::Shape(m) => write!(f, "shape mismatch: {m}"),
            SecureError::Protocol(m) => write!(f, "protocol violation: {m}"),
        }
    }
}

impl core::error::Error for SecureError {}

impl From<ChannelError> for SecureError {
    fn from(e: ChannelError) -> Self {
        SecureError::Channel(e)
    }
}

impl From<GcError> for SecureError {
    fn from(e: GcError) -> Self {
        SecureError::Gc(e)
    }
}

impl From<ProtoError> for SecureError {
    fn from(e: ProtoError) -> Self {
        SecureError::Proto(e)
    }
}

impl From<SharesError> for SecureError {
    fn from(e: SharesError) -> Self {
        SecureError::Shares(e)
    }
}

impl From<NnError> for SecureError {
    fn from(e: NnError) -> Self {
        SecureError::Model(e)
    }
}

impl From<FxpError> for SecureError {
    fn from(e: FxpError) -> Self {
        SecureError::Config(e)
    }
}

/// One party's endpoint of a secure computation: transfer sessions in both
/// directions, the agreed precision configuration, and the public seed both
/// parties use to draw identical batch schedules.
pub struct SecureSession {
    proto: ProtoSession,
    config: PrecisionConfig,
    batch_seed: u64,
}

impl SecureSession {
    /// Handshakes the configuration and batch seed, then runs the base
    /// transfer setup. Party 1's seed is adopted by both sides; a precision
    /// configuration mismatch aborts before any share moves.
    pub fn establish<C: Channel, R: RngCore + CryptoRng>(
        role: Role,
        params: SecurityParams,
        config: PrecisionConfig,
        batch_seed: u64,
        channel: &mut C,
        rng: &mut R,
    ) -> Result<Self, SecureError> {
        config.validate()?;
        let hash = config.config_hash();
        let mut hello = [0u8; 17];
        hello[0] = 1;
        hello[1..9].copy_from_slice(&hash);
        hello[9..17].copy_from_slice(&batch_seed.to_be_bytes());

        let seed = match role {
            Role::Party1 => {
                channel.send(msg::HANDSHAKE, &hello)?;
                let reply = channel.recv(msg::HANDSHAKE)?;
                if reply != hello {
                    return Err(SecureError::Protocol(String::from(
                        "peer acknowledged a different session configuration",
                    )));
                }
                batch_seed
            }
            Role::Party2 => {
                let peer = channel.recv(msg::HANDSHAKE)?;
                if peer.len() != 17 || peer[0] != 1 {
                    return Err(SecureError::Protocol(String::from(
                        "unrecognized session announcement",
                    )));
                }
                if peer[1..9] != hash {
                    return Err(SecureError::Protocol(String::from(
                        "precision configuration differs between the parties",
                    )));
                }
                let mut seed_bytes = [0u8; 8];
                seed_bytes.copy_from_slice(&peer[9..17]);
                let seed = u64::from_be_bytes(seed_bytes);
                let mut echo = [0u8; 17];
                echo.copy_from_slice(&peer);
                channel.send(msg::HANDSHAKE, &echo)?;
                seed
            }
        };
        let proto = ProtoSession::establish(role, params, channel, rng)?;
        Ok(SecureSession { proto, config, batch_seed: seed })
    }

    pub fn role(&self) -> Role {
        self.proto.role()
    }

    pub fn party_index(&self) -> u8 {
        self.proto.party_index()
    }

    pub fn config(&self) -> &PrecisionConfig {
        &self.config
    }

    pub fn batch_seed(&self) -> u64 {
        self.batch_seed
    }
}

/// Runs one masked circuit block. `groups` are this party's input share
/// word groups in block order. The garbler draws the output masks and keeps
/// them as its shares; the evaluator keeps the decoded masked outputs.
/// Returns the arithmetic output words and Boolean output bits.
#[allow(clippy::too_many_arguments)]
fn run_masked_block<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    circuit: &Circuit,
    groups: &[(&[u64], usize)],
    arith_out: usize,
    sigma_out: usize,
    bool_out: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<(Vec<u64>, Vec<bool>), SecureError> {
    let mut bits = Vec::new();
    for (words, width) in groups {
        bits.extend(blocks::pack_words(words, *width));
    }
    match session.role() {
        Role::Party1 => {
            let mask = ring_mask(sigma_out as u8);
            let mask_words: Vec<u64> = (0..arith_out).map(|_| rng.next_u64() & mask).collect();
            let mask_bits: Vec<bool> = (0..bool_out).map(|_| rng.next_u64() & 1 == 1).collect();
            bits.extend(blocks::pack_words(&mask_words, sigma_out));
            bits.extend(mask_bits.iter().copied());
            let (ot_send, _) = session.proto.transfer_endpoints();
            gc::run_garbler(circuit, &bits, ot_send, channel, rng)?;
            Ok((mask_words, mask_bits))
        }
        Role::Party2 => {
            let (_, ot_recv) = session.proto.transfer_endpoints();
            let out = gc::run_evaluator(circuit, &bits, ot_recv, channel)?;
            let split = arith_out * sigma_out;
            if out.len() != split + bool_out {
                return Err(SecureError::Protocol(format!(
                    "block produced {} output bits, expected {}",
                    out.len(),
                    split + bool_out
                )));
            }
            let words = blocks::unpack_words(&out[..split], sigma_out);
            let flags = out[split..].to_vec();
            Ok((words, flags))
        }
    }
}

fn arith_from(values: Vec<u64>, party: u8) -> ArithShare {
    ArithShare { values, sigma: SHARE_RING, party }
}

fn sample_slice(share: &ArithShare, b: usize, len: usize) -> ArithShare {
    ArithShare {
        values: share.values[b * len..(b + 1) * len].to_vec(),
        sigma: share.sigma,
        party: share.party,
    }
}

fn check_ring(share: &ArithShare, what: &str) -> Result<(), SecureError> {
    if share.sigma != SHARE_RING {
        return Err(SecureError::Shape(format!(
            "{what} shares live in a {}-bit ring, session uses {SHARE_RING}",
            share.sigma
        )));
    }
    Ok(())
}

/// One parametered layer's secret state: the stored-weight shares and the
/// Boolean shares of the ternary indicators derived from them.
#[derive(Debug, Clone)]
pub struct LayerShares {
    pub stored: ArithShare,
    pub ternary: SharedTernaryMatrix,
}

/// Secret-shared model: the public layer plan plus per-layer weight shares.
#[derive(Debug, Clone)]
pub struct SecureModelShares {
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
    pub config: PrecisionConfig,
    pub weights: Vec<Option<LayerShares>>,
}

impl SecureModelShares {
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

    /// True when layer `i` is a linear layer fused with a following
    /// residual marker (the marker owns the activation step).
    pub fn fused_with_marker(&self, i: usize) -> bool {
        matches!(
            self.layers.get(i + 1).map(|l| &l.kind),
            Some(LayerKind::ResidualAdd { .. })
        )
    }
}

fn tensor_values(t: &FixedTensor) -> Vec<i64> {
    t.data.iter().map(|&v| i64::from(v)).collect()
}

/// Splits a plaintext model into two shares: additive shares of the stored
/// weights and Boolean shares of the ternary indicators, plus identical
/// copies of the public plan.
pub fn share_model(
    model: &Model,
    rng: &mut impl RngCore,
) -> (SecureModelShares, SecureModelShares) {
    let mut w1 = Vec::with_capacity(model.layers.len());
    let mut w2 = Vec::with_capacity(model.layers.len());
    for (stored, ternary) in model.weights_stored.iter().zip(&model.weights_ternary) {
        match (stored, ternary) {
            (Some(s), Some(t)) => {
                let (s1, s2) = share_arith(&tensor_values(s), SHARE_RING, rng);
                let (t1, t2) = decompose_ternary(t, rng);
                w1.push(Some(LayerShares { stored: s1, ternary: t1 }));
                w2.push(Some(LayerShares { stored: s2, ternary: t2 }));
            }
            _ => {
                w1.push(None);
                w2.push(None);
            }
        }
    }
    let plan = |weights| SecureModelShares {
        input_len: model.input_len,
        layers: model.layers.clone(),
        config: model.config.clone(),
        weights,
    };
    (plan(w1), plan(w2))
}

/// Reconstructs a plaintext model from both parties' shares. Evaluation and
/// test helper; a secure deployment never calls it.
pub fn reveal_model(
    a: &SecureModelShares,
    b: &SecureModelShares,
) -> Result<Model, SecureError> {
    let mut model = Model::new(a.input_len, a.layers.clone(), a.config.clone())?;
    for (i, (la, lb)) in a.weights.iter().zip(&b.weights).enumerate() {
        if let (Some(la), Some(lb)) = (la, lb) {
            let values = crate::shares::reconstruct_signed(&la.stored, &lb.stored)?;
            let w = model.weights_stored[i].as_mut().expect("plan matches shares");
            for (slot, v) in w.data.iter_mut().zip(values) {
                *slot = v as i32;
            }
        }
    }
    model.refresh_ternary();
    Ok(model)
}

/// Optimizer-moment shares, one entry per parametered layer.
#[derive(Debug, Clone)]
pub struct SecureOptimizerState {
    pub m: Vec<Option<ArithShare>>,
    pub v: Vec<Option<ArithShare>>,
    pub v_hat: Vec<Option<ArithShare>>,
}

impl SecureOptimizerState {
    /// All moments start at zero, which both parties share as zero words.
    pub fn zeros(model: &SecureModelShares, party: u8) -> Self {
        let make = || {
            model
                .weights
                .iter()
                .map(|w| {
                    w.as_ref()
                        .map(|l| ArithShare::zeros(l.stored.len(), SHARE_RING, party))
                })
                .collect::<Vec<_>>()
        };
        SecureOptimizerState { m: make(), v: make(), v_hat: make() }
    }
}

/// Secret-shared training data: flattened input and label shares.
#[derive(Debug, Clone)]
pub struct SecureDataset {
    pub inputs: ArithShare,
    pub labels: ArithShare,
    pub samples: usize,
    pub input_len: usize,
    pub label_len: usize,
}

/// Splits a plaintext dataset (inputs `[n, input_len]`, one-hot labels
/// `[n, label_len]`) into two shared halves.
pub fn share_dataset(
    inputs: &FixedTensor,
    labels: &FixedTensor,
    rng: &mut impl RngCore,
) -> Result<(SecureDataset, SecureDataset), SecureError> {
    if inputs.shape.len() != 2 || labels.shape.len() != 2 || inputs.shape[0] != labels.shape[0] {
        return Err(SecureError::Shape(String::from(
            "dataset tensors must be [samples, features] with matching sample counts",
        )));
    }
    let (i1, i2) = share_arith(&tensor_values(inputs), SHARE_RING, rng);
    let (l1, l2) = share_arith(&tensor_values(labels), SHARE_RING, rng);
    let build = |iv: ArithShare, lv: ArithShare| SecureDataset {
        inputs: iv,
        labels: lv,
        samples: inputs.shape[0],
        input_len: inputs.shape[1],
        label_len: labels.shape[1],
    };
    Ok((build(i1, l1), build(i2, l2)))
}

/// Per-layer records the backward pass needs: derivative-mask shares for
/// activation layers, winner-flag shares for pooling layers.
#[derive(Debug, Clone, Default)]
pub struct SecureTape {
    pub d: Option<BoolShare>,
    pub flags: Option<BoolShare>,
}

/// Activation shares and tape from one secure forward pass.
#[derive(Debug, Clone)]
pub struct SecureForwardPass {
    /// `activations[0]` is the input share; `activations[i+1]` is layer i's
    /// output (the raw pre-activation share for a fused linear layer).
    pub activations: Vec<ArithShare>,
    pub tape: Vec<SecureTape>,
    pub batch: usize,
}

fn layer_weights(
    model: &SecureModelShares,
    index: usize,
) -> Result<&LayerShares, SecureError> {
    model.weights[index]
        .as_ref()
        .ok_or_else(|| SecureError::Shape(format!("layer {index} has no weights")))
}

/// Shared matrix-vector product for one linear layer over the whole batch:
/// every sample (and every patch column, for convolution) rides the same
/// packed transfer batch. Returns the flattened pre-activation shares.
fn linear_z<C: Channel>(
    session: &mut SecureSession,
    layer: &LayerSpec,
    weights: &LayerShares,
    prev: &ArithShare,
    batch: usize,
    channel: &mut C,
) -> Result<ArithShare, SecureError> {
    let lanes = PackedLaneConfig::new(SHARE_RING)?;
    let party = prev.party;
    match &layer.kind {
        LayerKind::FullyConnected { input, output } => {
            let vecs: Vec<ArithShare> =
                (0..batch).map(|b| sample_slice(prev, b, *input)).collect();
            let job = MatVecJob { matrix: &weights.ternary, batch: &vecs, lanes };
            let out = packed_matvec(&job, &mut session.proto, channel)?;
            let mut flat = Vec::with_capacity(batch * output);
            for sample in out {
                flat.extend(sample.values);
            }
            Ok(arith_from(flat, party))
        }
        LayerKind::Conv { geom, out_c } => {
            let map = nn::im2col_map(geom);
            let rows = geom.patch_rows();
            let cols = geom.patch_cols();
            let in_len = layer.kind.in_len();
            let mut vecs = Vec::with_capacity(batch * cols);
            for b in 0..batch {
                let sample = &prev.values[b * in_len..(b + 1) * in_len];
                for col in 0..cols {
                    let column: Vec<u64> = (0..rows)
                        .map(|r| map[r * cols + col].map_or(0, |s| sample[s]))
                        .collect();
                    vecs.push(arith_from(column, party));
                }
            }
            let job = MatVecJob { matrix: &weights.ternary, batch: &vecs, lanes };
            let out = packed_matvec(&job, &mut session.proto, channel)?;
            let mut flat = vec![0u64; batch * out_c * cols];
            for b in 0..batch {
                for col in 0..cols {
                    let col_share = &out[b * cols + col];
                    for oc in 0..*out_c {
                        flat[(b * out_c + oc) * cols + col] = col_share.values[oc];
                    }
                }
            }
            Ok(arith_from(flat, party))
        }
        _ => Err(SecureError::Shape(String::from(
            "matrix product requested for a weightless layer",
        ))),
    }
}

/// Activation block over a pre-activation share vector: returns activation
/// shares in the full ring and Boolean shares of the derivative mask.
fn activation_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    z: &ArithShare,
    alpha: u8,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, BoolShare), SecureError> {
    let n = z.len();
    let p_a = session.config.p_a;
    let circuit = blocks::build_forward_block(
        n,
        SHARE_RING as usize,
        SHARE_RING as usize,
        u32::from(alpha),
        u32::from(p_a),
        true,
    );
    let party = z.party;
    let (words, bits) = run_masked_block(
        session,
        &circuit,
        &[(&z.values, SHARE_RING as usize)],
        n,
        SHARE_RING as usize,
        n,
        channel,
        rng,
    )?;
    Ok((arith_from(words, party), BoolShare { bits, party }))
}

/// One linear layer of the secure forward pass: the shared matrix product
/// followed by the activation block. Returns the activation shares, the
/// derivative-mask shares, and the raw pre-activation shares.
pub fn secure_forward_layer<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &SecureModelShares,
    index: usize,
    a_prev: &ArithShare,
    batch: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, BoolShare, ArithShare), SecureError> {
    let layer = &model.layers[index];
    if !matches!(
        layer.kind,
        LayerKind::FullyConnected { .. } | LayerKind::Conv { .. }
    ) {
        return Err(SecureError::Shape(String::from(
            "forward layer call expects a linear layer",
        )));
    }
    check_ring(a_prev, "activation")?;
    let weights = layer_weights(model, index)?;
    let z = linear_z(session, layer, weights, a_prev, batch, channel)?;
    let (a, d) = activation_gc(session, &z, layer.alpha, channel, rng)?;
    Ok((a, d, z))
}

/// Runs the model forward over a shared batch, producing all activation
/// shares and the tape the backward pass consumes.
pub fn secure_forward<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &SecureModelShares,
    a0: &ArithShare,
    batch: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<SecureForwardPass, SecureError> {
    check_ring(a0, "input")?;
    if batch == 0 || a0.len() != batch * model.input_len {
        return Err(SecureError::Shape(format!(
            "input share holds {} values, expected {} x {}",
            a0.len(),
            batch,
            model.input_len
        )));
    }
    let p_a = model.config.p_a;
    let mut activations = vec![a0.clone()];
    let mut tape: Vec<SecureTape> = Vec::with_capacity(model.layers.len());

    for (i, layer) in model.layers.iter().enumerate() {
        let prev = &activations[i];
        match &layer.kind {
            LayerKind::FullyConnected { .. } | LayerKind::Conv { .. } => {
                let weights = layer_weights(model, i)?;
                let z = linear_z(session, layer, weights, prev, batch, channel)?;
                if model.fused_with_marker(i) {
                    tape.push(SecureTape::default());
                    activations.push(z);
                } else {
                    let (a, d) = activation_gc(session, &z, layer.alpha, channel, rng)?;
                    tape.push(SecureTape { d: Some(d), flags: None });
                    activations.push(a);
                }
            }
            LayerKind::MaxPool { in_h, in_w, c, k, stride } => {
                let windows = nn::pool_windows(*in_h, *in_w, *c, *k, *stride);
                let win_len = k * k;
                let in_len = layer.kind.in_len();
                let total = batch * windows.len();
                let mut slots = Vec::with_capacity(total * win_len);
                for b in 0..batch {
                    let sample = &prev.values[b * in_len..(b + 1) * in_len];
                    for win in &windows {
                        slots.extend(win.iter().map(|&idx| sample[idx]));
                    }
                }
                let circuit = blocks::build_window_max_block(
                    total,
                    win_len,
                    SHARE_RING as usize,
                    usize::from(p_a),
                );
                let (words, bits) = run_masked_block(
                    session,
                    &circuit,
                    &[(&slots, SHARE_RING as usize)],
                    total,
                    SHARE_RING as usize,
                    total * win_len,
                    channel,
                    rng,
                )?;
                tape.push(SecureTape {
                    d: None,
                    flags: Some(BoolShare { bits, party: prev.party }),
                });
                activations.push(arith_from(words, prev.party));
            }
            LayerKind::ResidualAdd { from } => {
                let z = local_add(&activations[i], &activations[*from])?;
                let (a, d) = activation_gc(session, &z, layer.alpha, channel, rng)?;
                tape.push(SecureTape { d: Some(d), flags: None });
                activations.push(a);
            }
        }
    }
    Ok(SecureForwardPass { activations, tape, batch })
}

/// Where reconstructed values go when a protocol output is revealed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevealTo {
    Party1,
    Party2,
    Both,
    Neither,
}

/// Exchanges share blobs so the designated parties reconstruct the vector.
/// Returns the signed values when this party is a recipient.
pub fn reveal_arith<C: Channel>(
    share: &ArithShare,
    to: RevealTo,
    channel: &mut C,
) -> Result<Option<Vec<i64>>, SecureError> {
    let me = share.party;
    let i_send = match to {
        RevealTo::Both => true,
        RevealTo::Party1 => me == 2,
        RevealTo::Party2 => me == 1,
        RevealTo::Neither => false,
    };
    let i_recv = match to {
        RevealTo::Both => true,
        RevealTo::Party1 => me == 1,
        RevealTo::Party2 => me == 2,
        RevealTo::Neither => false,
    };
    let blob: Vec<u8> = share.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut peer_values = None;
    let recv_values = |payload: Vec<u8>| -> Result<Vec<u64>, SecureError> {
        if payload.len() != share.values.len() * 8 {
            return Err(SecureError::Protocol(format!(
                "peer revealed {} bytes, expected {}",
                payload.len(),
                share.values.len() * 8
            )));
        }
        Ok(payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect())
    };
    if me == 1 {
        if i_send {
            channel.send(msg::SHARE_BLOB, &blob)?;
        }
        if i_recv {
            peer_values = Some(recv_values(channel.recv(msg::SHARE_BLOB)?)?);
        }
    } else {
        if i_recv {
            peer_values = Some(recv_values(channel.recv(msg::SHARE_BLOB)?)?);
        }
        if i_send {
            channel.send(msg::SHARE_BLOB, &blob)?;
        }
    }
    Ok(peer_values.map(|peer| {
        let mask = ring_mask(share.sigma);
        share
            .values
            .iter()
            .zip(peer)
            .map(|(&a, b)| crate::shares::from_ring(a.wrapping_add(b) & mask, share.sigma))
            .collect()
    }))
}

/// Secure prediction: the forward pass over all layers, with the final
/// scores optionally revealed to one or both parties.
pub fn secure_predict<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &SecureModelShares,
    a0: &ArithShare,
    batch: usize,
    reveal: RevealTo,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, Option<Vec<i64>>), SecureError> {
    let pass = secure_forward(session, model, a0, batch, channel, rng)?;
    let scores = pass.activations.last().expect("forward output").clone();
    let revealed = reveal_arith(&scores, reveal, channel)?;
    Ok((scores, revealed))
}

/// Output-layer error signal: a local share subtraction.
pub fn secure_loss_grad(
    a_last: &ArithShare,
    y: &ArithShare,
) -> Result<ArithShare, SecureError> {
    Ok(local_sub(a_last, y)?)
}

/// Gradient-normalization block: shares of `round(g / npow(max |g|))` at
/// `p_out`, optionally clamped, optionally with magnitude shares.
fn grad_norm_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    g: &ArithShare,
    p_out: u8,
    clamp_to: Option<u64>,
    emit_abs: bool,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, Option<ArithShare>), SecureError> {
    let n = g.len();
    let circuit = blocks::build_backward_norm_block(
        n,
        SHARE_RING as usize,
        u32::from(SHARE_RING),
        u32::from(p_out),
        clamp_to,
        emit_abs,
    );
    let arith_out = if emit_abs { 2 * n } else { n };
    let (words, _) = run_masked_block(
        session,
        &circuit,
        &[(&g.values, SHARE_RING as usize)],
        arith_out,
        SHARE_RING as usize,
        0,
        channel,
        rng,
    )?;
    let party = g.party;
    if emit_abs {
        let (vals, abs) = words.split_at(n);
        Ok((
            arith_from(vals.to_vec(), party),
            Some(arith_from(abs.to_vec(), party)),
        ))
    } else {
        Ok((arith_from(words, party), None))
    }
}

/// Rounding right shift by a public amount as a masked block; `t == 0` is a
/// local no-op.
fn requant_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    x: &ArithShare,
    t: u32,
    channel: &mut C,
    rng: &mut R,
) -> Result<ArithShare, SecureError> {
    if t == 0 {
        return Ok(x.clone());
    }
    let n = x.len();
    let circuit = blocks::build_requant_block(n, SHARE_RING as usize, t);
    let (words, _) = run_masked_block(
        session,
        &circuit,
        &[(&x.values, SHARE_RING as usize)],
        n,
        SHARE_RING as usize,
        0,
        channel,
        rng,
    )?;
    Ok(arith_from(words, x.party))
}

fn max_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    a: &ArithShare,
    b: &ArithShare,
    channel: &mut C,
    rng: &mut R,
) -> Result<ArithShare, SecureError> {
    let n = a.len();
    let circuit = blocks::build_elementwise_max_block(n, SHARE_RING as usize);
    let (words, _) = run_masked_block(
        session,
        &circuit,
        &[
            (&a.values, SHARE_RING as usize),
            (&b.values, SHARE_RING as usize),
        ],
        n,
        SHARE_RING as usize,
        0,
        channel,
        rng,
    )?;
    Ok(arith_from(words, a.party))
}

#[allow(clippy::too_many_arguments)]
fn private_shift_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    m: &ArithShare,
    v: &ArithShare,
    up: u32,
    eps: u64,
    exp_bits: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<ArithShare, SecureError> {
    let n = m.len();
    let circuit =
        blocks::build_private_shift_block(n, SHARE_RING as usize, up, eps, exp_bits);
    let (words, _) = run_masked_block(
        session,
        &circuit,
        &[
            (&m.values, SHARE_RING as usize),
            (&v.values, SHARE_RING as usize),
        ],
        n,
        SHARE_RING as usize,
        0,
        channel,
        rng,
    )?;
    Ok(arith_from(words, m.party))
}

fn saturate_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    x: &ArithShare,
    q: u32,
    channel: &mut C,
    rng: &mut R,
) -> Result<ArithShare, SecureError> {
    let n = x.len();
    let circuit = blocks::build_saturate_block(n, SHARE_RING as usize, q);
    let (words, _) = run_masked_block(
        session,
        &circuit,
        &[(&x.values, SHARE_RING as usize)],
        n,
        SHARE_RING as usize,
        0,
        channel,
        rng,
    )?;
    Ok(arith_from(words, x.party))
}

fn ternarize_gc<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    stored: &ArithShare,
    rows: usize,
    cols: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<SharedTernaryMatrix, SecureError> {
    let n = stored.len();
    let pbar_w = session.config.p_w_bar;
    let circuit =
        blocks::build_ternarize_block(n, SHARE_RING as usize, u32::from(pbar_w));
    let (_, bits) = run_masked_block(
        session,
        &circuit,
        &[(&stored.values, SHARE_RING as usize)],
        0,
        SHARE_RING as usize,
        2 * n,
        channel,
        rng,
    )?;
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for pair in bits.chunks_exact(2) {
        plus.push(pair[0]);
        minus.push(pair[1]);
    }
    Ok(SharedTernaryMatrix {
        plus: BoolShare { bits: plus, party: stored.party },
        minus: BoolShare { bits: minus, party: stored.party },
        rows,
        cols,
    })
}

/// Intermediates of one backward layer, for exactness checks.
#[derive(Debug, Clone, Default)]
pub struct LayerGradTrace {
    pub e_q: Option<ArithShare>,
    pub u: Option<ArithShare>,
    pub e_prev: Option<ArithShare>,
}

/// Weight-gradient shares per parametered layer plus per-layer traces.
#[derive(Debug, Clone)]
pub struct SecureGradients {
    pub grads: Vec<Option<ArithShare>>,
    pub trace: Vec<LayerGradTrace>,
}

fn add_into(slot: &mut Option<ArithShare>, delta: &ArithShare) -> Result<(), SecureError> {
    match slot {
        Some(acc) => {
            *acc = local_add(acc, delta)?;
        }
        None => *slot = Some(delta.clone()),
    }
    Ok(())
}

/// Error quantization and masking for one activation layer: the
/// normalization block for `Q(e, p_e)` followed by the component product
/// with the derivative mask.
fn quantize_and_mask<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    e_in: &ArithShare,
    d: &BoolShare,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, ArithShare), SecureError> {
    let p_e = session.config.p_e;
    let clamp = (1u64 << p_e) - 1;
    let (e_q, _) = grad_norm_gc(session, e_in, p_e, Some(clamp), false, channel, rng)?;
    let u = componentwise_mult_cot(d, &e_q, &mut session.proto, channel)?;
    Ok((e_q, u))
}

/// Weight gradient for one linear layer: per-sample outer products of the
/// quantized error and the previous activations (patch columns for
/// convolution), summed locally over the batch.
fn weight_grad_shares<C: Channel>(
    session: &mut SecureSession,
    layer: &LayerSpec,
    a_prev: &ArithShare,
    e_q: &ArithShare,
    batch: usize,
    channel: &mut C,
) -> Result<ArithShare, SecureError> {
    let (out_dim, in_dim) = layer
        .kind
        .weight_shape()
        .ok_or_else(|| SecureError::Shape(String::from("gradient for weightless layer")))?;
    let party = a_prev.party;
    let mut total: Option<ArithShare> = None;
    match &layer.kind {
        LayerKind::FullyConnected { input, output } => {
            for b in 0..batch {
                let e_b = sample_slice(e_q, b, *output);
                let a_b = sample_slice(a_prev, b, *input);
                let g_b = outer_product(&e_b, &a_b, &mut session.proto, channel)?;
                add_into(&mut total, &g_b)?;
            }
        }
        LayerKind::Conv { geom, out_c } => {
            let map = nn::im2col_map(geom);
            let rows = geom.patch_rows();
            let cols = geom.patch_cols();
            let in_len = layer.kind.in_len();
            for b in 0..batch {
                let sample = &a_prev.values[b * in_len..(b + 1) * in_len];
                for col in 0..cols {
                    let e_col: Vec<u64> = (0..*out_c)
                        .map(|oc| e_q.values[(b * out_c + oc) * cols + col])
                        .collect();
                    let patch_col: Vec<u64> = (0..rows)
                        .map(|r| map[r * cols + col].map_or(0, |s| sample[s]))
                        .collect();
                    let g_bc = outer_product(
                        &arith_from(e_col, party),
                        &arith_from(patch_col, party),
                        &mut session.proto,
                        channel,
                    )?;
                    add_into(&mut total, &g_bc)?;
                }
            }
        }
        _ => unreachable!("weight shape filtered above"),
    }
    Ok(total.unwrap_or_else(|| ArithShare::zeros(out_dim * in_dim, SHARE_RING, party)))
}

/// Error propagation through one linear layer: the transposed shared matrix
/// applied to the masked quantized error.
fn error_back_shares<C: Channel>(
    session: &mut SecureSession,
    layer: &LayerSpec,
    weights: &LayerShares,
    u: &ArithShare,
    batch: usize,
    channel: &mut C,
) -> Result<ArithShare, SecureError> {
    let lanes = PackedLaneConfig::new(SHARE_RING)?;
    let party = u.party;
    let transposed = weights.ternary.transpose();
    match &layer.kind {
        LayerKind::FullyConnected { input, output } => {
            let vecs: Vec<ArithShare> =
                (0..batch).map(|b| sample_slice(u, b, *output)).collect();
            let job = MatVecJob { matrix: &transposed, batch: &vecs, lanes };
            let out = packed_matvec(&job, &mut session.proto, channel)?;
            let mut flat = Vec::with_capacity(batch * input);
            for sample in out {
                flat.extend(sample.values);
            }
            Ok(arith_from(flat, party))
        }
        LayerKind::Conv { geom, out_c } => {
            let map = nn::im2col_map(geom);
            let rows = geom.patch_rows();
            let cols = geom.patch_cols();
            let in_len = layer.kind.in_len();
            let mut vecs = Vec::with_capacity(batch * cols);
            for b in 0..batch {
                for col in 0..cols {
                    let u_col: Vec<u64> = (0..*out_c)
                        .map(|oc| u.values[(b * out_c + oc) * cols + col])
                        .collect();
                    vecs.push(arith_from(u_col, party));
                }
            }
            let job = MatVecJob { matrix: &transposed, batch: &vecs, lanes };
            let out = packed_matvec(&job, &mut session.proto, channel)?;
            let mask = ring_mask(SHARE_RING);
            let mut flat = vec![0u64; batch * in_len];
            for b in 0..batch {
                for col in 0..cols {
                    let col_share = &out[b * cols + col];
                    for r in 0..rows {
                        let Some(src) = map[r * cols + col] else { continue };
                        let slot = &mut flat[b * in_len + src];
                        *slot = slot.wrapping_add(col_share.values[r]) & mask;
                    }
                }
            }
            Ok(arith_from(flat, party))
        }
        _ => Err(SecureError::Shape(String::from(
            "error propagation requested for a weightless layer",
        ))),
    }
}

/// One linear layer of the secure backward pass: quantizes and masks the
/// incoming error, then produces the propagated error and weight-gradient
/// shares.
#[allow(clippy::too_many_arguments)]
pub fn secure_backward_layer<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &SecureModelShares,
    index: usize,
    e_in: &ArithShare,
    d: &BoolShare,
    a_prev: &ArithShare,
    batch: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<(ArithShare, ArithShare), SecureError> {
    let layer = &model.layers[index];
    let weights = layer_weights(model, index)?;
    let (e_q, u) = quantize_and_mask(session, e_in, d, channel, rng)?;
    let g = weight_grad_shares(session, layer, a_prev, &e_q, batch, channel)?;
    let e_prev = error_back_shares(session, layer, weights, &u, batch, channel)?;
    Ok((e_prev, g))
}

/// Runs the backward pass over a secure forward tape, returning weight
/// gradient shares per parametered layer along with the per-layer
/// intermediates.
pub fn secure_backward<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &SecureModelShares,
    pass: &SecureForwardPass,
    e_last: &ArithShare,
    channel: &mut C,
    rng: &mut R,
) -> Result<SecureGradients, SecureError> {
    let n_layers = model.layers.len();
    let batch = pass.batch;
    let lens = model.activation_lens();
    check_ring(e_last, "error")?;
    if e_last.len() != batch * lens[n_layers] {
        return Err(SecureError::Shape(format!(
            "error share holds {} values, expected {} x {}",
            e_last.len(),
            batch,
            lens[n_layers]
        )));
    }

    let mut err: Vec<Option<ArithShare>> = vec![None; n_layers + 1];
    err[n_layers] = Some(e_last.clone());
    let mut grads: Vec<Option<ArithShare>> = vec![None; n_layers];
    let mut trace: Vec<LayerGradTrace> = vec![LayerGradTrace::default(); n_layers];
    let mut carried: Option<(ArithShare, ArithShare)> = None;

    for i in (0..n_layers).rev() {
        let layer = &model.layers[i];
        match &layer.kind {
            LayerKind::FullyConnected { .. } | LayerKind::Conv { .. } => {
                let weights = layer_weights(model, i)?;
                let (e_q, u) = if let Some(pair) = carried.take() {
                    pair
                } else {
                    let e_in = err[i + 1].take().ok_or_else(|| {
                        SecureError::Protocol(String::from("missing error accumulator"))
                    })?;
                    let d = pass.tape[i].d.as_ref().ok_or_else(|| {
                        SecureError::Protocol(String::from("missing derivative mask"))
                    })?;
                    quantize_and_mask(session, &e_in, d, channel, rng)?
                };
                let a_prev = &pass.activations[i];
                grads[i] =
                    Some(weight_grad_shares(session, layer, a_prev, &e_q, batch, channel)?);
                let e_prev = error_back_shares(session, layer, weights, &u, batch, channel)?;
                add_into(&mut err[i], &e_prev)?;
                trace[i] = LayerGradTrace {
                    e_q: Some(e_q),
                    u: Some(u),
                    e_prev: Some(e_prev),
                };
            }
            LayerKind::MaxPool { .. } => {
                let e_in = err[i + 1].take().ok_or_else(|| {
                    SecureError::Protocol(String::from("missing error accumulator"))
                })?;
                let flags = pass.tape[i].flags.as_ref().ok_or_else(|| {
                    SecureError::Protocol(String::from("missing pool winner flags"))
                })?;
                let LayerKind::MaxPool { in_h, in_w, c, k, stride } = &layer.kind else {
                    unreachable!()
                };
                let windows = nn::pool_windows(*in_h, *in_w, *c, *k, *stride);
                let win_len = k * k;
                let in_len = lens[i];
                let out_len = lens[i + 1];
                let mut replicated = Vec::with_capacity(batch * out_len * win_len);
                for b in 0..batch {
                    for o in 0..out_len {
                        let v = e_in.values[b * out_len + o];
                        replicated.extend(core::iter::repeat_n(v, win_len));
                    }
                }
                let routed_slots = componentwise_mult_cot(
                    flags,
                    &arith_from(replicated, e_in.party),
                    &mut session.proto,
                    channel,
                )?;
                let mask = ring_mask(SHARE_RING);
                let mut flat = vec![0u64; batch * in_len];
                for b in 0..batch {
                    for (o, win) in windows.iter().enumerate() {
                        for (j, &src) in win.iter().enumerate() {
                            let v = routed_slots.values[(b * out_len + o) * win_len + j];
                            let slot = &mut flat[b * in_len + src];
                            *slot = slot.wrapping_add(v) & mask;
                        }
                    }
                }
                let e_prev = arith_from(flat, e_in.party);
                add_into(&mut err[i], &e_prev)?;
                trace[i] = LayerGradTrace {
                    e_q: None,
                    u: None,
                    e_prev: Some(e_prev),
                };
            }
            LayerKind::ResidualAdd { from } => {
                let e_in = err[i + 1].take().ok_or_else(|| {
                    SecureError::Protocol(String::from("missing error accumulator"))
                })?;
                let d = pass.tape[i].d.as_ref().ok_or_else(|| {
                    SecureError::Protocol(String::from("missing derivative mask"))
                })?;
                let (e_q, u) = quantize_and_mask(session, &e_in, d, channel, rng)?;
                add_into(&mut err[*from], &u)?;
                trace[i] = LayerGradTrace {
                    e_q: Some(e_q.clone()),
                    u: Some(u.clone()),
                    e_prev: None,
                };
                carried = Some((e_q, u));
            }
        }
    }
    Ok(SecureGradients { grads, trace })
}

/// Saturating weight step shared by both optimizers: scales the quantized
/// gradient by the public learning-rate shift, subtracts locally, clamps
/// with the saturation block, and re-ternarizes.
fn weight_step<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    stored: &ArithShare,
    g_q: &ArithShare,
    rows: usize,
    cols: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<LayerShares, SecureError> {
    let cfg = session.config.clone();
    let shift = i32::from(cfg.eta) + i32::from(cfg.p_w_bar) - i32::from(cfg.p_g);
    let step = if shift >= 0 {
        local_const_mul(g_q, 1i64 << shift)
    } else {
        requant_gc(session, g_q, (-shift) as u32, channel, rng)?
    };
    let raw = local_sub(stored, &step)?;
    let clamped = saturate_gc(session, &raw, u32::from(cfg.p_w_bar), channel, rng)?;
    let ternary = ternarize_gc(session, &clamped, rows, cols, channel, rng)?;
    Ok(LayerShares { stored: clamped, ternary })
}

/// Fixed-point SGD over shares: normalizes each gradient with the
/// weight-gradient quantizer block and takes the saturating step.
pub fn secure_sgd_step<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &mut SecureModelShares,
    grads: &[Option<ArithShare>],
    channel: &mut C,
    rng: &mut R,
) -> Result<(), SecureError> {
    let p_g = session.config.p_g;
    for i in 0..model.layers.len() {
        let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else { continue };
        let Some(layer) = model.weights[i].as_ref() else { continue };
        let (rows, cols) = (layer.ternary.rows, layer.ternary.cols);
        let (g_q, _) = grad_norm_gc(session, g, p_g, None, false, channel, rng)?;
        let stored = layer.stored.clone();
        model.weights[i] =
            Some(weight_step(session, &stored, &g_q, rows, cols, channel, rng)?);
    }
    Ok(())
}

/// Fixed-point AMSgrad over shares, mirroring the plaintext step: gradient
/// normalization with magnitudes, public-constant moment decays with one
/// requantization each, the running maximum block, the hidden-exponent
/// scaling block, and the shared saturating weight step.
pub fn secure_amsgrad_step<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &mut SecureModelShares,
    state: &mut SecureOptimizerState,
    grads: &[Option<ArithShare>],
    channel: &mut C,
    rng: &mut R,
) -> Result<(), SecureError> {
    let cfg = session.config.clone();
    if cfg.p_m < cfg.p_g || cfg.p_v < cfg.p_g {
        return Err(SecureError::Shape(String::from(
            "secure optimizer requires moment precisions at or above the gradient precision",
        )));
    }
    let up = i32::from(cfg.p_g) + i32::from(cfg.p_v) - i32::from(cfg.p_m);
    if up < 0 {
        return Err(SecureError::Shape(String::from(
            "gradient and second-moment precisions must reach the first-moment precision",
        )));
    }
    let eps = cfg.eps_int();
    if eps < 1 {
        return Err(SecureError::Shape(String::from(
            "optimizer epsilon must be a positive integer",
        )));
    }

    for i in 0..model.layers.len() {
        let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else { continue };
        let Some(layer) = model.weights[i].as_ref() else {
            return Err(SecureError::Shape(String::from(
                "gradient for a weightless layer",
            )));
        };
        let (rows, cols) = (layer.ternary.rows, layer.ternary.cols);
        let stored = layer.stored.clone();
        let m = state.m[i].clone().expect("moment shares exist");
        let v = state.v[i].clone().expect("moment shares exist");
        let v_hat = state.v_hat[i].clone().expect("moment shares exist");

        let (g1, g1_abs) =
            grad_norm_gc(session, g, cfg.p_g, None, true, channel, rng)?;
        let g1_abs = g1_abs.expect("magnitudes requested");

        let g_pm = local_const_mul(&g1, 1i64 << (cfg.p_m - cfg.p_g));
        let m_combo = local_add(&local_const_mul(&m, 115), &local_const_mul(&g_pm, 13))?;
        let m_new = requant_gc(session, &m_combo, 7, channel, rng)?;

        let g_pv = local_const_mul(&g1_abs, 1i64 << (cfg.p_v - cfg.p_g));
        let v_combo = local_add(&local_const_mul(&v, 127), &g_pv)?;
        let v_new = requant_gc(session, &v_combo, 7, channel, rng)?;

        let vh_new = max_gc(session, &v_hat, &v_new, channel, rng)?;

        let g2 = private_shift_gc(
            session,
            &m_new,
            &vh_new,
            up as u32,
            eps as u64,
            16,
            channel,
            rng,
        )?;

        model.weights[i] =
            Some(weight_step(session, &stored, &g2, rows, cols, channel, rng)?);
        state.m[i] = Some(m_new);
        state.v[i] = Some(v_new);
        state.v_hat[i] = Some(vh_new);
    }
    Ok(())
}

/// Which optimizer a training run applies each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AmsGrad,
}

/// Per-iteration traffic counters reported through the training callback.
#[derive(Debug, Clone, Copy)]
pub struct IterationStats {
    pub epoch: usize,
    pub iteration: usize,
    pub global_iteration: usize,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub round_trips: u64,
}

/// Batch schedule for one epoch: a seeded shuffle of the sample indices
/// chunked into batches, identical on both parties. The final batch keeps
/// the remainder.
pub fn batch_indices(seed: u64, epoch: u64, samples: usize, batch_size: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples).collect();
    for i in (1..samples).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn gather_rows(share: &ArithShare, indices: &[usize], row_len: usize) -> ArithShare {
    let mut values = Vec::with_capacity(indices.len() * row_len);
    for &idx in indices {
        values.extend_from_slice(&share.values[idx * row_len..(idx + 1) * row_len]);
    }
    ArithShare { values, sigma: share.sigma, party: share.party }
}

/// One training iteration: forward, local loss gradient, backward, and the
/// optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn secure_train_step<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &mut SecureModelShares,
    state: &mut SecureOptimizerState,
    a0: &ArithShare,
    y: &ArithShare,
    batch: usize,
    optimizer: OptimizerKind,
    channel: &mut C,
    rng: &mut R,
) -> Result<(), SecureError> {
    let pass = secure_forward(session, model, a0, batch, channel, rng)?;
    let e_last = secure_loss_grad(pass.activations.last().expect("forward output"), y)?;
    let grads = secure_backward(session, model, &pass, &e_last, channel, rng)?;
    match optimizer {
        OptimizerKind::Sgd => secure_sgd_step(session, model, &grads.grads, channel, rng),
        OptimizerKind::AmsGrad => {
            secure_amsgrad_step(session, model, state, &grads.grads, channel, rng)
        }
    }
}

/// Trains over synchronized batches for `epochs` passes. Both parties draw
/// the same schedule from the session seed; `skip_iterations` fast-forwards
/// the schedule without touching the channel, so a run resumed from
/// checkpointed shares continues the interrupted trajectory. Returns the
/// number of iterations executed.
#[allow(clippy::too_many_arguments)]
pub fn secure_train<C: Channel, R: RngCore + CryptoRng>(
    session: &mut SecureSession,
    model: &mut SecureModelShares,
    state: &mut SecureOptimizerState,
    data: &SecureDataset,
    epochs: usize,
    batch_size: usize,
    optimizer: OptimizerKind,
    skip_iterations: usize,
    mut on_iteration: impl FnMut(&IterationStats),
    channel: &mut C,
    rng: &mut R,
) -> Result<usize, SecureError> {
    if data.input_len != model.input_len {
        return Err(SecureError::Shape(format!(
            "dataset rows of {} values feed a model expecting {}",
            data.input_len, model.input_len
        )));
    }
    let mut global = 0usize;
    let mut executed = 0usize;
    for epoch in 0..epochs {
        let schedule = batch_indices(session.batch_seed, epoch as u64, data.samples, batch_size);
        for (iteration, indices) in schedule.iter().enumerate() {
            if global < skip_iterations {
                global += 1;
                continue;
            }
            let a0 = gather_rows(&data.inputs, indices, data.input_len);
            let y = gather_rows(&data.labels, indices, data.label_len);
            let sent0 = channel.bytes_sent();
            let recv0 = channel.bytes_received();
            let rt0 = channel.round_trips();
            secure_train_step(
                session,
                model,
                state,
                &a0,
                &y,
                indices.len(),
                optimizer,
                channel,
                rng,
            )?;
            on_iteration(&IterationStats {
                epoch,
                iteration,
                global_iteration: global,
                bytes_sent: channel.bytes_sent() - sent0,
                bytes_received: channel.bytes_received() - recv0,
                round_trips: channel.round_trips() - rt0,
            });
            global += 1;
            executed += 1;
        }
    }
    Ok(executed)
}
