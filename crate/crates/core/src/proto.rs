//! Share-computation protocols built on oblivious transfer.
//!
//! The building block is a Boolean-integer inner product: one party's bits
//! select which ring elements enter a sum, with both bits and elements
//! additively or XOR shared. Two constructions are provided: a general-OT
//! form where each party masks and sends both candidate messages, and a
//! correlated-OT form where the transfer itself supplies the randomness and
//! each transfer costs one 16-byte correction instead of two messages.
//!
//! On top of these sit component-wise products, the ternary matrix-vector
//! product (one selected sum per row for the positive bits minus one for the
//! negative bits), lane packing that evaluates up to 16 vectors per transfer
//! block against the same matrix, bitwise multiplication of two shared
//! integers, and the outer product used for weight gradients.
//!
//! Every protocol runs the same code on both sides, differing only in the
//! message order fixed by the party role, and returns this party's share of
//! the result. Reconstruction of the outputs always equals the plaintext
//! computation in the declared ring.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::{CryptoRng, RngCore};

use crate::channel::{msg, Channel, ChannelError};
use crate::ot::{
    CorrelationFn, CorrelationKind, ExtReceiver, ExtSender, OtError, SecurityParams,
};
use crate::shares::{ring_mask, ArithShare, BoolShare, SharedTernaryMatrix, SharesError};

/// Errors raised by the share-computation protocols.
#[derive(Debug)]
pub enum ProtoError {
    Channel(ChannelError),
    Ot(OtError),
    Shares(SharesError),
    /// Inputs disagree in shape, ring, or batch size.
    Shape(String),
    /// The peer announced a different job than this party is running.
    Protocol(String),
}

impl fmt::Display for ProtoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtoError::Channel(e) => write!(f, "channel error: {e}"),
            ProtoError::Ot(e) => write!(f, "oblivious transfer error: {e}"),
            ProtoError::Shares(e) => write!(f, "share error: {e}"),
            ProtoError::Shape(m) => write!(f, "shape mismatch: {m}"),
            ProtoError::Protocol(m) => write!(f, "protocol violation: {m}"),
        }
    }
}

impl core::error::Error for ProtoError {}

impl From<ChannelError> for ProtoError {
    fn from(e: ChannelError) -> Self {
        ProtoError::Channel(e)
    }
}

impl From<OtError> for ProtoError {
    fn from(e: OtError) -> Self {
        ProtoError::Ot(e)
    }
}

impl From<SharesError> for ProtoError {
    fn from(e: SharesError) -> Self {
        ProtoError::Shares(e)
    }
}

/// Which of the two parties this endpoint plays. Party 1 speaks first in
/// every exchange, so both sides agree on message order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Party1,
    Party2,
}

impl Role {
    pub fn party_index(self) -> u8 {
        match self {
            Role::Party1 => 1,
            Role::Party2 => 2,
        }
    }

    pub fn peer(self) -> Role {
        match self {
            Role::Party1 => Role::Party2,
            Role::Party2 => Role::Party1,
        }
    }
}

/// Lane layout for packing several ring elements into one 16-byte transfer
/// block: `lanes_per_block * lane_bits = 128`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedLaneConfig {
    lane_bits: u8,
}

impl PackedLaneConfig {
    pub fn new(lane_bits: u8) -> Result<Self, ProtoError> {
        if !matches!(lane_bits, 8 | 16 | 32) {
            return Err(ProtoError::Shape(format!(
                "unsupported lane width {lane_bits}"
            )));
        }
        Ok(PackedLaneConfig { lane_bits })
    }

    pub fn lane_bits(self) -> u8 {
        self.lane_bits
    }

    pub fn lanes_per_block(self) -> usize {
        128 / self.lane_bits as usize
    }
}

impl Default for PackedLaneConfig {
    /// 16-bit lanes: eight vectors per block, with enough headroom that
    /// sums of 8-bit values do not wrap for fan-in up to 512.
    fn default() -> Self {
        PackedLaneConfig { lane_bits: 16 }
    }
}

/// A matrix-vector job: a ternary matrix in Boolean shares and a batch of
/// arithmetic vector shares evaluated against it in packed lanes.
#[derive(Debug)]
pub struct MatVecJob<'a> {
    pub matrix: &'a SharedTernaryMatrix,
    pub batch: &'a [ArithShare],
    pub lanes: PackedLaneConfig,
}

impl MatVecJob<'_> {
    fn validate(&self) -> Result<(), ProtoError> {
        if self.batch.is_empty() {
            return Err(ProtoError::Shape("empty vector batch".into()));
        }
        for v in self.batch {
            if v.len() != self.matrix.cols {
                return Err(ProtoError::Shape(format!(
                    "vector length {} does not match {} matrix columns",
                    v.len(),
                    self.matrix.cols
                )));
            }
            if v.sigma != self.lanes.lane_bits() {
                return Err(ProtoError::Shape(format!(
                    "vector ring width {} does not match lane width {}",
                    v.sigma,
                    self.lanes.lane_bits()
                )));
            }
        }
        let bits = self.matrix.rows * self.matrix.cols;
        if self.matrix.plus.len() != bits || self.matrix.minus.len() != bits {
            return Err(ProtoError::Shape("matrix share size mismatch".into()));
        }
        Ok(())
    }
}

/// Job announcements checked before each protocol run.
pub mod op {
    pub const INNER_PRODUCT_OT: u8 = 1;
    pub const INNER_PRODUCT_COT: u8 = 2;
    pub const COMPONENTWISE_MULT: u8 = 3;
    pub const MATVEC: u8 = 4;
    pub const GILBOA_MULT: u8 = 5;
    pub const OUTER_PRODUCT: u8 = 6;
}

/// Sender-side randoms and chooser-side outputs of one dual exchange.
type DualTransfer = (Vec<[u8; 16]>, Vec<[u8; 16]>);

/// One party's protocol endpoint: its role plus a transfer session in each
/// direction (this party as correlation sender and as chooser).
pub struct ProtoSession {
    role: Role,
    ot_send: ExtSender,
    ot_recv: ExtReceiver,
}

impl ProtoSession {
    /// Runs the base-transfer setup for both directions. Party 1 initializes
    /// its sender endpoint first and party 2 its receiver endpoint, so the
    /// two sides pair up without further coordination.
    pub fn establish<C: Channel, R: RngCore + CryptoRng>(
        role: Role,
        params: SecurityParams,
        channel: &mut C,
        rng: &mut R,
    ) -> Result<Self, ProtoError> {
        let (ot_send, ot_recv) = match role {
            Role::Party1 => {
                let s = ExtSender::setup(params, channel, rng)?;
                let r = ExtReceiver::setup(params, channel, rng)?;
                (s, r)
            }
            Role::Party2 => {
                let r = ExtReceiver::setup(params, channel, rng)?;
                let s = ExtSender::setup(params, channel, rng)?;
                (s, r)
            }
        };
        Ok(ProtoSession { role, ot_send, ot_recv })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn party_index(&self) -> u8 {
        self.role.party_index()
    }

    /// Transfer endpoints for layers that drive their own exchanges, with
    /// this party as garbling sender first.
    pub fn transfer_endpoints(&mut self) -> (&mut ExtSender, &mut ExtReceiver) {
        (&mut self.ot_send, &mut self.ot_recv)
    }

    /// Announces a job from party 1 and checks it on party 2, so both sides
    /// fail loudly when their call sites disagree.
    fn sync_job<C: Channel>(
        &self,
        channel: &mut C,
        op_code: u8,
        n: u32,
        m: u32,
        lane_bits: u8,
    ) -> Result<(), ProtoError> {
        let mut header = [0u8; 10];
        header[0] = op_code;
        header[1..5].copy_from_slice(&n.to_be_bytes());
        header[5..9].copy_from_slice(&m.to_be_bytes());
        header[9] = lane_bits;
        match self.role {
            Role::Party1 => {
                channel.send(msg::COT_JOB_HEADER, &header)?;
                Ok(())
            }
            Role::Party2 => {
                let peer = channel.recv(msg::COT_JOB_HEADER)?;
                if peer != header {
                    return Err(ProtoError::Protocol(format!(
                        "peer announced job {peer:02x?}, expected {header:02x?}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// One correlated-transfer exchange in each direction: this party sends
    /// its correlations and chooses with its own bits against the peer's.
    /// Returns the sender-side randoms `x` and the chooser-side outputs `y`.
    fn dual_cot<C: Channel>(
        &mut self,
        correlations: &[CorrelationFn],
        choices: &[bool],
        kind: CorrelationKind,
        channel: &mut C,
    ) -> Result<DualTransfer, ProtoError> {
        let kinds = vec![kind; choices.len()];
        match self.role {
            Role::Party1 => {
                let x = self.ot_send.send_cot(correlations, channel)?;
                let y = self.ot_recv.recv_cot(choices, &kinds, channel)?;
                Ok((x, y))
            }
            Role::Party2 => {
                let y = self.ot_recv.recv_cot(choices, &kinds, channel)?;
                let x = self.ot_send.send_cot(correlations, channel)?;
                Ok((x, y))
            }
        }
    }

    /// One general-transfer exchange in each direction: this party offers
    /// message pairs and receives the peer's messages chosen by its bits.
    fn dual_ot<C: Channel>(
        &mut self,
        msgs: &[([u8; 16], [u8; 16])],
        choices: &[bool],
        channel: &mut C,
    ) -> Result<Vec<[u8; 16]>, ProtoError> {
        match self.role {
            Role::Party1 => {
                self.ot_send.send_ot(msgs, channel)?;
                Ok(self.ot_recv.recv_ot(choices, channel)?)
            }
            Role::Party2 => {
                let got = self.ot_recv.recv_ot(choices, channel)?;
                self.ot_send.send_ot(msgs, channel)?;
                Ok(got)
            }
        }
    }
}

fn lane_get(block: &[u8; 16], lane: usize, lane_bits: u8) -> u64 {
    let bytes = lane_bits as usize / 8;
    let start = lane * bytes;
    let mut v = 0u64;
    for (i, &b) in block[start..start + bytes].iter().enumerate() {
        v |= u64::from(b) << (8 * i);
    }
    v
}

fn lane_set(block: &mut [u8; 16], lane: usize, lane_bits: u8, value: u64) {
    let bytes = lane_bits as usize / 8;
    let start = lane * bytes;
    for i in 0..bytes {
        block[start + i] = (value >> (8 * i)) as u8;
    }
}

fn neg_ring(v: u64, mask: u64) -> u64 {
    0u64.wrapping_sub(v) & mask
}

fn check_pair(w: &BoolShare, a: &ArithShare) -> Result<(), ProtoError> {
    if w.len() != a.len() {
        return Err(ProtoError::Shape(format!(
            "{} selection bits against {} elements",
            w.len(),
            a.len()
        )));
    }
    if !matches!(a.sigma, 8 | 16 | 32) {
        return Err(ProtoError::Shape(format!(
            "unsupported ring width {}",
            a.sigma
        )));
    }
    Ok(())
}

/// Per-element contributions of the correlated-transfer inner product: this
/// party's share of `w_j * a_j` for each `j`.
///
/// Each party's correlation adds its own element when its selection share is
/// clear and subtracts it when set; choosing with the other share completes
/// `w_j = b_1 XOR b_2` times the element. The transfer randoms double as the
/// output masks, so each transfer moves a single correction word.
fn cot_products<C: Channel>(
    w: &BoolShare,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<Vec<u64>, ProtoError> {
    let mask = ring_mask(a.sigma);
    let kind = CorrelationKind::Add { lane_bits: a.sigma };
    let correlations: Vec<CorrelationFn> = w
        .bits
        .iter()
        .zip(&a.values)
        .map(|(&bit, &v)| {
            let addend = if bit { neg_ring(v, mask) } else { v & mask };
            let mut block = [0u8; 16];
            lane_set(&mut block, 0, a.sigma, addend);
            CorrelationFn::add(block, a.sigma)
        })
        .collect();
    let (x, y) = session.dual_cot(&correlations, &w.bits, kind, channel)?;
    Ok((0..w.len())
        .map(|j| {
            let local = if w.bits[j] { a.values[j] & mask } else { 0 };
            local
                .wrapping_sub(lane_get(&x[j], 0, a.sigma))
                .wrapping_add(lane_get(&y[j], 0, a.sigma))
                & mask
        })
        .collect())
}

/// Boolean-integer inner product over general transfers: for each element,
/// both parties offer their masked contribution under both values of the
/// reconstructed bit, and each chooses with its own share. Costs two
/// transfers per element and returns a scalar share of `w . a`.
pub fn inner_product_ot<C: Channel, R: RngCore + CryptoRng>(
    w: &BoolShare,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
    rng: &mut R,
) -> Result<ArithShare, ProtoError> {
    check_pair(w, a)?;
    let m = w.len();
    session.sync_job(channel, op::INNER_PRODUCT_OT, 1, m as u32, a.sigma)?;
    let mask = ring_mask(a.sigma);

    let keep: Vec<u64> = (0..m).map(|_| rng.next_u64() & mask).collect();
    let msgs: Vec<([u8; 16], [u8; 16])> = (0..m)
        .map(|j| {
            let own = a.values[j] & mask;
            let if_clear = if w.bits[j] { own } else { 0 };
            let if_set = if w.bits[j] { 0 } else { own };
            let mut m0 = [0u8; 16];
            let mut m1 = [0u8; 16];
            lane_set(&mut m0, 0, a.sigma, if_clear.wrapping_sub(keep[j]) & mask);
            lane_set(&mut m1, 0, a.sigma, if_set.wrapping_sub(keep[j]) & mask);
            (m0, m1)
        })
        .collect();
    let got = session.dual_ot(&msgs, &w.bits, channel)?;

    let total = (0..m).fold(0u64, |acc, j| {
        acc.wrapping_add(keep[j])
            .wrapping_add(lane_get(&got[j], 0, a.sigma))
            & mask
    });
    Ok(ArithShare { values: vec![total], sigma: a.sigma, party: session.party_index() })
}

/// Boolean-integer inner product over correlated transfers: two batched
/// transfer executions and local additions. Same contract as the general
/// form at roughly half the payload.
pub fn inner_product_cot<C: Channel>(
    w: &BoolShare,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<ArithShare, ProtoError> {
    check_pair(w, a)?;
    session.sync_job(channel, op::INNER_PRODUCT_COT, 1, w.len() as u32, a.sigma)?;
    let mask = ring_mask(a.sigma);
    let parts = cot_products(w, a, session, channel)?;
    let total = parts.iter().fold(0u64, |acc, &p| acc.wrapping_add(p) & mask);
    Ok(ArithShare { values: vec![total], sigma: a.sigma, party: session.party_index() })
}

/// Component-wise product of a shared bit vector and a shared integer
/// vector: the inner-product exchange without the final aggregation.
pub fn componentwise_mult_cot<C: Channel>(
    w: &BoolShare,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<ArithShare, ProtoError> {
    check_pair(w, a)?;
    session.sync_job(channel, op::COMPONENTWISE_MULT, 1, w.len() as u32, a.sigma)?;
    let values = cot_products(w, a, session, channel)?;
    Ok(ArithShare { values, sigma: a.sigma, party: session.party_index() })
}

/// Ternary matrix-vector product `z = W+ a - W- a` for one vector; the
/// single-lane specialization of [`packed_matvec`].
pub fn ternary_matvec<C: Channel>(
    matrix: &SharedTernaryMatrix,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<ArithShare, ProtoError> {
    let lanes = PackedLaneConfig::new(a.sigma)?;
    let batch = [a.clone()];
    let job = MatVecJob { matrix, batch: &batch, lanes };
    let mut out = packed_matvec(&job, session, channel)?;
    Ok(out.swap_remove(0))
}

/// Batched ternary matrix-vector product with lane packing.
///
/// Vectors are grouped `lanes_per_block` at a time; within a group, all
/// vectors ride the same transfer batch, one lane each, so a full group
/// costs the same payload as a single vector. Per row the positive and
/// negative selected sums are taken separately and subtracted locally.
/// Returns one output share vector per input vector, mod `2^lane_bits`.
pub fn packed_matvec<C: Channel>(
    job: &MatVecJob<'_>,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<Vec<ArithShare>, ProtoError> {
    job.validate()?;
    let n = job.matrix.rows;
    let m = job.matrix.cols;
    let lane_bits = job.lanes.lane_bits();
    let lanes = job.lanes.lanes_per_block();
    let batch = job.batch.len();
    let groups = batch.div_ceil(lanes);
    let mask = ring_mask(lane_bits);
    session.sync_job(channel, op::MATVEC, n as u32, m as u32, lane_bits)?;

    let signs: [&BoolShare; 2] = [&job.matrix.plus, &job.matrix.minus];
    let total = groups * 2 * n * m;
    let mut correlations = Vec::with_capacity(total);
    let mut choices = Vec::with_capacity(total);
    for g in 0..groups {
        for w_bits in signs {
            for i in 0..n {
                for j in 0..m {
                    let bit = w_bits.bits[i * m + j];
                    let mut block = [0u8; 16];
                    for t in 0..lanes {
                        let v = g * lanes + t;
                        if v < batch {
                            let own = job.batch[v].values[j] & mask;
                            let addend = if bit { neg_ring(own, mask) } else { own };
                            lane_set(&mut block, t, lane_bits, addend);
                        }
                    }
                    correlations.push(CorrelationFn::add(block, lane_bits));
                    choices.push(bit);
                }
            }
        }
    }
    let kind = CorrelationKind::Add { lane_bits };
    let (x, y) = session.dual_cot(&correlations, &choices, kind, channel)?;

    let mut out: Vec<ArithShare> = (0..batch)
        .map(|_| ArithShare::zeros(n, lane_bits, session.party_index()))
        .collect();
    for (v, share) in out.iter_mut().enumerate() {
        let g = v / lanes;
        let t = v % lanes;
        for i in 0..n {
            let mut acc = 0u64;
            for (sign, w_bits) in signs.iter().enumerate() {
                let base = ((g * 2 + sign) * n + i) * m;
                let mut part = 0u64;
                for j in 0..m {
                    let local = if w_bits.bits[i * m + j] {
                        job.batch[v].values[j] & mask
                    } else {
                        0
                    };
                    part = part
                        .wrapping_add(local)
                        .wrapping_sub(lane_get(&x[base + j], t, lane_bits))
                        .wrapping_add(lane_get(&y[base + j], t, lane_bits));
                }
                if sign == 0 {
                    acc = acc.wrapping_add(part);
                } else {
                    acc = acc.wrapping_sub(part);
                }
            }
            share.values[i] = acc & mask;
        }
    }
    Ok(out)
}

/// Bit-decomposed multiplication contributions for the cross term
/// `u * v` where this party holds `v` (as correlation sender, addends
/// `v * 2^k`) and chooses with the bits of its own `u`.
struct CrossMult {
    /// Sum of sender randoms, to subtract from this party's share.
    sent: Vec<u64>,
    /// Sum of chosen outputs, to add to this party's share.
    got: Vec<u64>,
}

fn gilboa_cross<C: Channel>(
    u_own: &[u64],
    v_own: &[u64],
    sigma: u8,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<CrossMult, ProtoError> {
    let mask = ring_mask(sigma);
    let bits = sigma as usize;
    let len = u_own.len();
    let mut correlations = Vec::with_capacity(len * bits);
    let mut choices = Vec::with_capacity(len * bits);
    for i in 0..len {
        for k in 0..bits {
            let mut block = [0u8; 16];
            lane_set(&mut block, 0, sigma, (v_own[i] << k) & mask);
            correlations.push(CorrelationFn::add(block, sigma));
            choices.push((u_own[i] >> k) & 1 == 1);
        }
    }
    let kind = CorrelationKind::Add { lane_bits: sigma };
    let (x, y) = session.dual_cot(&correlations, &choices, kind, channel)?;
    let mut sent = vec![0u64; len];
    let mut got = vec![0u64; len];
    for i in 0..len {
        for k in 0..bits {
            let idx = i * bits + k;
            sent[i] = sent[i].wrapping_add(lane_get(&x[idx], 0, sigma)) & mask;
            got[i] = got[i].wrapping_add(lane_get(&y[idx], 0, sigma)) & mask;
        }
    }
    Ok(CrossMult { sent, got })
}

/// Element-wise product of two shared integer vectors by bit-decomposed
/// transfers: one correlated transfer per bit of each share of `x`. The
/// decomposition must cover the whole share ring, so `bit_width` equals the
/// ring width.
pub fn gilboa_mult<C: Channel>(
    x: &ArithShare,
    y: &ArithShare,
    bit_width: u8,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<ArithShare, ProtoError> {
    if x.sigma != y.sigma || x.len() != y.len() {
        return Err(ProtoError::Shape("operand shares disagree".into()));
    }
    if bit_width != x.sigma {
        return Err(ProtoError::Shape(format!(
            "decomposing {bit_width} bits cannot cover a {}-bit share ring",
            x.sigma
        )));
    }
    if !matches!(x.sigma, 8 | 16 | 32) {
        return Err(ProtoError::Shape(format!("unsupported ring width {}", x.sigma)));
    }
    session.sync_job(channel, op::GILBOA_MULT, 1, x.len() as u32, x.sigma)?;
    let mask = ring_mask(x.sigma);
    let cross = gilboa_cross(&x.values, &y.values, x.sigma, session, channel)?;
    let values = (0..x.len())
        .map(|i| {
            (x.values[i] & mask)
                .wrapping_mul(y.values[i] & mask)
                .wrapping_add(cross.got[i])
                .wrapping_sub(cross.sent[i])
                & mask
        })
        .collect();
    Ok(ArithShare { values, sigma: x.sigma, party: session.party_index() })
}

/// Outer product `G[i][j] = a[i] * e[j]` of two shared vectors, flattened
/// row-major. Cross terms decompose the bits of `a`'s shares; the addends
/// for a whole group of `e`-columns ride one transfer block, lane-packed.
pub fn outer_product<C: Channel>(
    a: &ArithShare,
    e: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
) -> Result<ArithShare, ProtoError> {
    if a.sigma != e.sigma {
        return Err(ProtoError::Shape("operand rings disagree".into()));
    }
    if !matches!(a.sigma, 8 | 16 | 32) {
        return Err(ProtoError::Shape(format!("unsupported ring width {}", a.sigma)));
    }
    let sigma = a.sigma;
    let mask = ring_mask(sigma);
    let m = a.len();
    let n = e.len();
    session.sync_job(channel, op::OUTER_PRODUCT, m as u32, n as u32, sigma)?;

    let lanes = 128 / sigma as usize;
    let groups = n.div_ceil(lanes);
    let bits = sigma as usize;
    let mut correlations = Vec::with_capacity(m * bits * groups);
    let mut choices = Vec::with_capacity(m * bits * groups);
    for &av in &a.values {
        for k in 0..bits {
            let chosen = (av >> k) & 1 == 1;
            for g in 0..groups {
                let mut block = [0u8; 16];
                for t in 0..lanes {
                    let j = g * lanes + t;
                    if j < n {
                        lane_set(&mut block, t, sigma, (e.values[j] << k) & mask);
                    }
                }
                correlations.push(CorrelationFn::add(block, sigma));
                choices.push(chosen);
            }
        }
    }
    let kind = CorrelationKind::Add { lane_bits: sigma };
    let (x, y) = session.dual_cot(&correlations, &choices, kind, channel)?;

    let mut values = vec![0u64; m * n];
    for i in 0..m {
        for j in 0..n {
            let g = j / lanes;
            let t = j % lanes;
            let mut acc = (a.values[i] & mask).wrapping_mul(e.values[j] & mask);
            for k in 0..bits {
                let idx = (i * bits + k) * groups + g;
                acc = acc
                    .wrapping_add(lane_get(&y[idx], t, sigma))
                    .wrapping_sub(lane_get(&x[idx], t, sigma));
            }
            values[i * n + j] = acc & mask;
        }
    }
    Ok(ArithShare { values, sigma, party: session.party_index() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MemChannel;
    use crate::shares::{reconstruct_arith, share_arith, share_bool, to_ring};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Runs a protocol closure on each side of an in-memory channel pair and
    /// returns both results along with each party's bytes sent.
    fn run_pair<T1, T2>(
        seed: u64,
        f1: impl FnOnce(&mut ProtoSession, &mut MemChannel, &mut ChaCha20Rng) -> T1 + Send,
        f2: impl FnOnce(&mut ProtoSession, &mut MemChannel, &mut ChaCha20Rng) -> T2 + Send,
    ) -> ((T1, u64), (T2, u64))
    where
        T1: Send,
        T2: Send,
    {
        let (mut ch1, mut ch2) = MemChannel::pair();
        std::thread::scope(|s| {
            let handle = s.spawn(move || {
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xbeef);
                let mut session = ProtoSession::establish(
                    Role::Party2,
                    SecurityParams::default(),
                    &mut ch2,
                    &mut rng,
                )
                .expect("party 2 session");
                let before = ch2.bytes_sent();
                let out = f2(&mut session, &mut ch2, &mut rng);
                (out, ch2.bytes_sent() - before)
            });
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut session = ProtoSession::establish(
                Role::Party1,
                SecurityParams::default(),
                &mut ch1,
                &mut rng,
            )
            .expect("party 1 session");
            let before = ch1.bytes_sent();
            let out = f1(&mut session, &mut ch1, &mut rng);
            ((out, ch1.bytes_sent() - before), handle.join().expect("party 2"))
        })
    }

    fn oracle_inner(w: &[bool], a: &[i64], sigma: u8) -> u64 {
        let mask = ring_mask(sigma);
        w.iter()
            .zip(a)
            .filter(|(&bit, _)| bit)
            .fold(0u64, |acc, (_, &v)| acc.wrapping_add(to_ring(v, sigma)) & mask)
    }

    #[test]
    fn boolean_integer_inner_products_match_the_plaintext_oracle() {
        let sigma = 16;
        let m = 32;
        let mut data_rng = StdRng::seed_from_u64(0x100);
        let mut cases = Vec::new();
        for _ in 0..400 {
            let w: Vec<bool> = (0..m).map(|_| data_rng.gen()).collect();
            let a: Vec<i64> = (0..m).map(|_| i64::from(data_rng.gen::<i8>())).collect();
            cases.push((w, a));
        }
        cases.push((vec![true], vec![5]));
        cases.push((vec![false; m], (0..m as i64).collect()));

        let mut share_rng = StdRng::seed_from_u64(0x101);
        let mut inputs1 = Vec::new();
        let mut inputs2 = Vec::new();
        let mut expected = Vec::new();
        for (w, a) in &cases {
            let (w1, w2) = share_bool(w, &mut share_rng);
            let (a1, a2) = share_arith(a, sigma, &mut share_rng);
            expected.push(oracle_inner(w, a, sigma));
            inputs1.push((w1, a1));
            inputs2.push((w2, a2));
        }

        let ((r1, _), (r2, _)) = run_pair(
            0x102,
            move |session, ch, rng| {
                inputs1
                    .iter()
                    .map(|(w, a)| {
                        let ot = inner_product_ot(w, a, session, ch, rng).expect("ot form");
                        let cot = inner_product_cot(w, a, session, ch).expect("cot form");
                        (ot, cot)
                    })
                    .collect::<Vec<_>>()
            },
            move |session, ch, rng| {
                inputs2
                    .iter()
                    .map(|(w, a)| {
                        let ot = inner_product_ot(w, a, session, ch, rng).expect("ot form");
                        let cot = inner_product_cot(w, a, session, ch).expect("cot form");
                        (ot, cot)
                    })
                    .collect::<Vec<_>>()
            },
        );
        for (i, ((ot1, cot1), (ot2, cot2))) in r1.iter().zip(&r2).enumerate() {
            let via_ot = reconstruct_arith(ot1, ot2).expect("compatible")[0];
            let via_cot = reconstruct_arith(cot1, cot2).expect("compatible")[0];
            assert_eq!(via_ot, expected[i], "general form, case {i}");
            assert_eq!(via_cot, expected[i], "correlated form, case {i}");
        }
    }

    #[test]
    fn correlated_inner_products_cover_all_share_cases() {
        // One element, value 9 shared as 4 + 5; the four Boolean share
        // assignments reconstruct the two values of the selection bit.
        let cases = [
            (true, true, 0u64),
            (false, false, 0),
            (false, true, 9),
            (true, false, 9),
        ];
        for (case, &(b1, b2, expect)) in cases.iter().enumerate() {
            let w1 = BoolShare { bits: vec![b1], party: 1 };
            let w2 = BoolShare { bits: vec![b2], party: 2 };
            let a1 = ArithShare { values: vec![4], sigma: 16, party: 1 };
            let a2 = ArithShare { values: vec![5], sigma: 16, party: 2 };
            let ((r1, _), (r2, _)) = run_pair(
                0x110 + case as u64,
                move |session, ch, _| {
                    inner_product_cot(&w1, &a1, session, ch).expect("party 1")
                },
                move |session, ch, _| {
                    inner_product_cot(&w2, &a2, session, ch).expect("party 2")
                },
            );
            let got = reconstruct_arith(&r1, &r2).expect("compatible")[0];
            assert_eq!(got, expect, "share assignment case {case}");
        }
    }

    #[test]
    fn componentwise_products_select_elements() {
        let sigma = 16;
        let mut rng = StdRng::seed_from_u64(0x120);
        let mut cases = vec![
            (vec![true, false], vec![7i64, 9]),
            (vec![true; 5], vec![1, -2, 3, -4, 5]),
        ];
        for _ in 0..200 {
            let m = 64;
            cases.push((
                (0..m).map(|_| rng.gen()).collect(),
                (0..m).map(|_| i64::from(rng.gen::<i8>())).collect(),
            ));
        }
        let mut inputs1 = Vec::new();
        let mut inputs2 = Vec::new();
        let mut expected = Vec::new();
        for (w, a) in &cases {
            let (w1, w2) = share_bool(w, &mut rng);
            let (a1, a2) = share_arith(a, sigma, &mut rng);
            expected.push(
                w.iter()
                    .zip(a)
                    .map(|(&bit, &v)| if bit { to_ring(v, sigma) } else { 0 })
                    .collect::<Vec<u64>>(),
            );
            inputs1.push((w1, a1));
            inputs2.push((w2, a2));
        }
        let ((r1, _), (r2, _)) = run_pair(
            0x121,
            move |session, ch, _| {
                inputs1
                    .iter()
                    .map(|(w, a)| componentwise_mult_cot(w, a, session, ch).expect("party 1"))
                    .collect::<Vec<_>>()
            },
            move |session, ch, _| {
                inputs2
                    .iter()
                    .map(|(w, a)| componentwise_mult_cot(w, a, session, ch).expect("party 2"))
                    .collect::<Vec<_>>()
            },
        );
        for (i, (s1, s2)) in r1.iter().zip(&r2).enumerate() {
            let got = reconstruct_arith(s1, s2).expect("compatible");
            assert_eq!(got, expected[i], "case {i}");
        }
    }

    fn oracle_matvec(w: &[i32], rows: usize, cols: usize, a: &[i64], sigma: u8) -> Vec<u64> {
        let mask = ring_mask(sigma);
        (0..rows)
            .map(|i| {
                let mut acc = 0i64;
                for j in 0..cols {
                    acc = acc.wrapping_add(i64::from(w[i * cols + j]) * a[j]);
                }
                (acc as u64) & mask
            })
            .collect()
    }

    fn share_ternary_from(
        w: &[i32],
        rows: usize,
        cols: usize,
        rng: &mut StdRng,
    ) -> (SharedTernaryMatrix, SharedTernaryMatrix) {
        let t = crate::fxp::FixedTensor::new(w.to_vec(), vec![rows, cols], 8, 0)
            .expect("ternary tensor");
        crate::shares::decompose_ternary(&t, rng)
    }

    #[test]
    fn ternary_matvec_matches_the_plaintext_matvec() {
        let sigma = 16;
        let mut rng = StdRng::seed_from_u64(0x130);

        let mut cases: Vec<(Vec<i32>, usize, usize, Vec<i64>)> = vec![
            (vec![1, -1, 0, 1], 2, 2, vec![2, 3]),
            (vec![0; 6], 2, 3, vec![4, -5, 6]),
        ];
        for _ in 0..20 {
            let (rows, cols) = (64, 64);
            let w: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
            let a: Vec<i64> = (0..cols).map(|_| i64::from(rng.gen::<i8>())).collect();
            cases.push((w, rows, cols, a));
        }

        let mut inputs1 = Vec::new();
        let mut inputs2 = Vec::new();
        let mut expected = Vec::new();
        for (w, rows, cols, a) in &cases {
            let (m1, m2) = share_ternary_from(w, *rows, *cols, &mut rng);
            let (a1, a2) = share_arith(a, sigma, &mut rng);
            expected.push(oracle_matvec(w, *rows, *cols, a, sigma));
            inputs1.push((m1, a1));
            inputs2.push((m2, a2));
        }
        let ((r1, _), (r2, _)) = run_pair(
            0x131,
            move |session, ch, _| {
                inputs1
                    .iter()
                    .map(|(m, a)| ternary_matvec(m, a, session, ch).expect("party 1"))
                    .collect::<Vec<_>>()
            },
            move |session, ch, _| {
                inputs2
                    .iter()
                    .map(|(m, a)| ternary_matvec(m, a, session, ch).expect("party 2"))
                    .collect::<Vec<_>>()
            },
        );
        for (i, (s1, s2)) in r1.iter().zip(&r2).enumerate() {
            let got = reconstruct_arith(s1, s2).expect("compatible");
            assert_eq!(got, expected[i], "case {i}");
        }
    }

    #[test]
    fn ternary_matvec_oracle_equivalence_holds_across_batches() {
        // Loop count tuned so the oracle comparison covers over a thousand
        // random instances across this and the sibling matvec tests.
        let sigma = 16;
        let mut rng = StdRng::seed_from_u64(0x132);
        let mut inputs1 = Vec::new();
        let mut inputs2 = Vec::new();
        let mut expected = Vec::new();
        for _ in 0..1000 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..10);
            let w: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
            let a: Vec<i64> = (0..cols).map(|_| i64::from(rng.gen::<i8>())).collect();
            let (m1, m2) = share_ternary_from(&w, rows, cols, &mut rng);
            let (a1, a2) = share_arith(&a, sigma, &mut rng);
            expected.push(oracle_matvec(&w, rows, cols, &a, sigma));
            inputs1.push((m1, a1));
            inputs2.push((m2, a2));
        }
        let ((r1, _), (r2, _)) = run_pair(
            0x133,
            move |session, ch, _| {
                inputs1
                    .iter()
                    .map(|(m, a)| ternary_matvec(m, a, session, ch).expect("party 1"))
                    .collect::<Vec<_>>()
            },
            move |session, ch, _| {
                inputs2
                    .iter()
                    .map(|(m, a)| ternary_matvec(m, a, session, ch).expect("party 2"))
                    .collect::<Vec<_>>()
            },
        );
        for (i, (s1, s2)) in r1.iter().zip(&r2).enumerate() {
            let got = reconstruct_arith(s1, s2).expect("compatible");
            assert_eq!(got, expected[i], "instance {i}");
        }
    }

    #[test]
    fn packed_batches_share_one_transfer_payload() {
        let lane_bits = 8;
        let (rows, cols, batch) = (8usize, 32usize, 16usize);
        let mut rng = StdRng::seed_from_u64(0x140);
        let w: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
        let vectors: Vec<Vec<i64>> = (0..batch)
            .map(|_| (0..cols).map(|_| i64::from(rng.gen::<i8>())).collect())
            .collect();
        let (m1, m2) = share_ternary_from(&w, rows, cols, &mut rng);
        let mut shares1 = Vec::new();
        let mut shares2 = Vec::new();
        for v in &vectors {
            let (a1, a2) = share_arith(v, lane_bits, &mut rng);
            shares1.push(a1);
            shares2.push(a2);
        }

        // Full batch of 16 vectors in 8-bit lanes.
        let m1b = m1.clone();
        let m2b = m2.clone();
        let s1b = shares1.clone();
        let s2b = shares2.clone();
        let ((r1, sent1_batch), (r2, _)) = run_pair(
            0x141,
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let job = MatVecJob { matrix: &m1b, batch: &s1b, lanes };
                packed_matvec(&job, session, ch).expect("party 1")
            },
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let job = MatVecJob { matrix: &m2b, batch: &s2b, lanes };
                packed_matvec(&job, session, ch).expect("party 2")
            },
        );
        for (v, vec_vals) in vectors.iter().enumerate() {
            let got = reconstruct_arith(&r1[v], &r2[v]).expect("compatible");
            let expect = oracle_matvec(&w, rows, cols, vec_vals, lane_bits);
            assert_eq!(got, expect, "vector {v}");
        }

        // One vector, same lanes: the batch must not cost more transfers.
        let m1s = m1.clone();
        let m2s = m2.clone();
        let s1s = vec![shares1[0].clone()];
        let s2s = vec![shares2[0].clone()];
        let ((_, sent1_single), _) = run_pair(
            0x142,
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let job = MatVecJob { matrix: &m1s, batch: &s1s, lanes };
                packed_matvec(&job, session, ch).expect("party 1")
            },
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let job = MatVecJob { matrix: &m2s, batch: &s2s, lanes };
                packed_matvec(&job, session, ch).expect("party 2")
            },
        );
        let ratio = sent1_batch as f64 / sent1_single as f64;
        assert!(
            ratio <= 1.05,
            "16-vector batch should ride the single-vector payload, ratio {ratio:.3}"
        );
    }

    #[test]
    fn single_vector_batches_reproduce_the_unbatched_transcript() {
        let mut rng = StdRng::seed_from_u64(0x150);
        let (rows, cols) = (4, 6);
        let w: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
        let a: Vec<i64> = (0..cols).map(|_| i64::from(rng.gen::<i8>())).collect();
        let (m1, m2) = share_ternary_from(&w, rows, cols, &mut rng);
        let (a1, a2) = share_arith(&a, 8, &mut rng);

        let (m1a, m2a, a1a, a2a) = (m1.clone(), m2.clone(), a1.clone(), a2.clone());
        let ((direct1, _), (direct2, _)) = run_pair(
            0x151,
            move |session, ch, _| ternary_matvec(&m1a, &a1a, session, ch).expect("party 1"),
            move |session, ch, _| ternary_matvec(&m2a, &a2a, session, ch).expect("party 2"),
        );
        // Same session seeds: a one-vector packed job must produce the very
        // same share words, not merely the same reconstruction.
        let ((packed1, _), (packed2, _)) = run_pair(
            0x151,
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let batch = [a1.clone()];
                let job = MatVecJob { matrix: &m1, batch: &batch, lanes };
                packed_matvec(&job, session, ch).expect("party 1").swap_remove(0)
            },
            move |session, ch, _| {
                let lanes = PackedLaneConfig::new(8).expect("lanes");
                let batch = [a2.clone()];
                let job = MatVecJob { matrix: &m2, batch: &batch, lanes };
                packed_matvec(&job, session, ch).expect("party 2").swap_remove(0)
            },
        );
        assert_eq!(direct1.values, packed1.values);
        assert_eq!(direct2.values, packed2.values);
    }

    #[test]
    fn correlated_form_halves_the_inner_product_payload() {
        let sigma = 16;
        let m = 1000;
        let mut rng = StdRng::seed_from_u64(0x160);
        let w: Vec<bool> = (0..m).map(|_| rng.gen()).collect();
        let a: Vec<i64> = (0..m).map(|_| i64::from(rng.gen::<i8>())).collect();
        let (w1, w2) = share_bool(&w, &mut rng);
        let (a1, a2) = share_arith(&a, sigma, &mut rng);

        let (w1c, a1c, w2c, a2c) = (w1.clone(), a1.clone(), w2.clone(), a2.clone());
        let ((_, sent_cot), (_, sent_cot2)) = run_pair(
            0x161,
            move |session, ch, _| inner_product_cot(&w1c, &a1c, session, ch).expect("party 1"),
            move |session, ch, _| inner_product_cot(&w2c, &a2c, session, ch).expect("party 2"),
        );
        let ((_, sent_ot), _) = run_pair(
            0x162,
            move |session, ch, rng| {
                inner_product_ot(&w1, &a1, session, ch, rng).expect("party 1")
            },
            move |session, ch, rng| {
                inner_product_ot(&w2, &a2, session, ch, rng).expect("party 2")
            },
        );

        // Per party: m transfer columns plus one 16-byte correction per
        // element, i.e. m(tau + 128) bits, plus padding and framing.
        let budget = (m as u64) * (128 + 128) / 8 + 2048;
        assert!(
            sent_cot <= budget,
            "correlated payload {sent_cot} exceeds budget {budget}"
        );
        assert!(sent_cot2 <= budget);
        assert!(
            sent_ot > sent_cot,
            "general transfers ({sent_ot}) should outweigh correlated ones ({sent_cot})"
        );
    }

    #[test]
    fn parallel_jobs_reproduce_sequential_results() {
        let sigma = 16;
        let mut rng = StdRng::seed_from_u64(0x170);
        let (rows, cols) = (6, 9);
        let mut jobs = Vec::new();
        for _ in 0..2 {
            let w: Vec<i32> = (0..rows * cols).map(|_| rng.gen_range(-1..=1)).collect();
            let a: Vec<i64> = (0..cols).map(|_| i64::from(rng.gen::<i8>())).collect();
            let (m1, m2) = share_ternary_from(&w, rows, cols, &mut rng);
            let (a1, a2) = share_arith(&a, sigma, &mut rng);
            jobs.push((m1, m2, a1, a2));
        }

        let mut sequential = Vec::new();
        for (i, (m1, m2, a1, a2)) in jobs.iter().enumerate() {
            let ((r1, _), (r2, _)) = run_pair(
                0x171 + i as u64,
                move |session, ch, _| ternary_matvec(m1, a1, session, ch).expect("party 1"),
                move |session, ch, _| ternary_matvec(m2, a2, session, ch).expect("party 2"),
            );
            sequential.push(reconstruct_arith(&r1, &r2).expect("compatible"));
        }

        let mut handles = Vec::new();
        for (i, (m1, m2, a1, a2)) in jobs.iter().enumerate() {
            handles.push(std::thread::spawn({
                let (m1, m2, a1, a2) = (m1.clone(), m2.clone(), a1.clone(), a2.clone());
                move || {
                    let ((r1, _), (r2, _)) = run_pair(
                        0x171 + i as u64,
                        move |session, ch, _| {
                            ternary_matvec(&m1, &a1, session, ch).expect("party 1")
                        },
                        move |session, ch, _| {
                            ternary_matvec(&m2, &a2, session, ch).expect("party 2")
                        },
                    );
                    reconstruct_arith(&r1, &r2).expect("compatible")
                }
            }));
        }
        for (i, handle) in handles.into_iter().enumerate() {
            let parallel = handle.join().expect("job thread");
            assert_eq!(parallel, sequential[i], "job {i}");
        }
    }

    #[test]
    fn gilboa_products_match_integer_multiplication() {
        // Scalar cases first, then the full 8-bit square in chunked batches.
        let cases = [(0i64, 11i64), (3, 5)];
        for (i, &(x, y)) in cases.iter().enumerate() {
            let x1 = ArithShare { values: vec![to_ring(x, 16).wrapping_sub(77) & 0xffff], sigma: 16, party: 1 };
            let x2 = ArithShare { values: vec![77], sigma: 16, party: 2 };
            let y1 = ArithShare { values: vec![to_ring(y, 16).wrapping_sub(1000) & 0xffff], sigma: 16, party: 1 };
            let y2 = ArithShare { values: vec![1000], sigma: 16, party: 2 };
            let ((r1, _), (r2, _)) = run_pair(
                0x180 + i as u64,
                move |session, ch, _| gilboa_mult(&x1, &y1, 16, session, ch).expect("party 1"),
                move |session, ch, _| gilboa_mult(&x2, &y2, 16, session, ch).expect("party 2"),
            );
            let got = reconstruct_arith(&r1, &r2).expect("compatible")[0];
            assert_eq!(got, to_ring(x.wrapping_mul(y), 16), "{x} * {y}");
        }

        for chunk in 0..8u64 {
            let mut xs = Vec::with_capacity(8192);
            let mut ys = Vec::with_capacity(8192);
            for xi in (chunk * 32)..(chunk * 32 + 32) {
                for yi in 0..256u64 {
                    xs.push(xi as i64);
                    ys.push(yi as i64);
                }
            }
            let x1 = ArithShare {
                values: xs.iter().map(|&v| to_ring(v, 16).wrapping_sub(0x4d2) & 0xffff).collect(),
                sigma: 16,
                party: 1,
            };
            let x2 = ArithShare { values: vec![0x4d2; xs.len()], sigma: 16, party: 2 };
            let y1 = ArithShare {
                values: ys.iter().map(|&v| to_ring(v, 16).wrapping_sub(0x10b1) & 0xffff).collect(),
                sigma: 16,
                party: 1,
            };
            let y2 = ArithShare { values: vec![0x10b1; ys.len()], sigma: 16, party: 2 };
            let ((r1, _), (r2, _)) = run_pair(
                0x190 + chunk,
                move |session, ch, _| gilboa_mult(&x1, &y1, 16, session, ch).expect("party 1"),
                move |session, ch, _| gilboa_mult(&x2, &y2, 16, session, ch).expect("party 2"),
            );
            let got = reconstruct_arith(&r1, &r2).expect("compatible");
            for i in 0..xs.len() {
                assert_eq!(
                    got[i],
                    to_ring(xs[i] * ys[i], 16),
                    "{} * {}",
                    xs[i],
                    ys[i]
                );
            }
        }
    }

    #[test]
    fn outer_products_reconstruct_every_entry() {
        // Hand case: a = [2, 3], e = [5, -1].
        let mut rng = StdRng::seed_from_u64(0x1a0);
        let (a1, a2) = share_arith(&[2, 3], 16, &mut rng);
        let (e1, e2) = share_arith(&[5, -1], 16, &mut rng);
        let ((r1, _), (r2, _)) = run_pair(
            0x1a1,
            move |session, ch, _| outer_product(&a1, &e1, session, ch).expect("party 1"),
            move |session, ch, _| outer_product(&a2, &e2, session, ch).expect("party 2"),
        );
        let got = reconstruct_arith(&r1, &r2).expect("compatible");
        let expect: Vec<u64> = [10i64, -2, 15, -3].iter().map(|&v| to_ring(v, 16)).collect();
        assert_eq!(got, expect);

        // Zero right operand gives the zero matrix.
        let (a1, a2) = share_arith(&[9, -7, 3], 16, &mut rng);
        let (e1, e2) = share_arith(&[0, 0], 16, &mut rng);
        let ((r1, _), (r2, _)) = run_pair(
            0x1a2,
            move |session, ch, _| outer_product(&a1, &e1, session, ch).expect("party 1"),
            move |session, ch, _| outer_product(&a2, &e2, session, ch).expect("party 2"),
        );
        let got = reconstruct_arith(&r1, &r2).expect("compatible");
        assert!(got.iter().all(|&v| v == 0));

        // Random instances in the 32-bit ring.
        let mut inputs1 = Vec::new();
        let mut inputs2 = Vec::new();
        let mut expected = Vec::new();
        for _ in 0..50 {
            let m = rng.gen_range(1..8);
            let n = rng.gen_range(1..6);
            let a: Vec<i64> = (0..m).map(|_| i64::from(rng.gen::<i8>())).collect();
            let e: Vec<i64> = (0..n).map(|_| i64::from(rng.gen::<i16>())).collect();
            let (a1, a2) = share_arith(&a, 32, &mut rng);
            let (e1, e2) = share_arith(&e, 32, &mut rng);
            let mut g = Vec::with_capacity(m * n);
            for &av in &a {
                for &ev in &e {
                    g.push(to_ring(av * ev, 32));
                }
            }
            expected.push(g);
            inputs1.push((a1, e1));
            inputs2.push((a2, e2));
        }
        let ((r1, _), (r2, _)) = run_pair(
            0x1a3,
            move |session, ch, _| {
                inputs1
                    .iter()
                    .map(|(a, e)| outer_product(a, e, session, ch).expect("party 1"))
                    .collect::<Vec<_>>()
            },
            move |session, ch, _| {
                inputs2
                    .iter()
                    .map(|(a, e)| outer_product(a, e, session, ch).expect("party 2"))
                    .collect::<Vec<_>>()
            },
        );
        for (i, (s1, s2)) in r1.iter().zip(&r2).enumerate() {
            let got = reconstruct_arith(s1, s2).expect("compatible");
            assert_eq!(got, expected[i], "instance {i}");
        }
    }

    #[test]
    fn mismatched_jobs_are_rejected() {
        // Ring width disagrees: party 2 rejects the job announcement and
        // hangs up, and party 1 fails on the closed channel.
        let w1 = BoolShare { bits: vec![true, false], party: 1 };
        let w2 = BoolShare { bits: vec![false, true], party: 2 };
        let a1 = ArithShare { values: vec![1, 2], sigma: 16, party: 1 };
        let a2 = ArithShare { values: vec![3, 4], sigma: 8, party: 2 };
        let ((r1, _), (r2, _)) = run_pair(
            0x1b0,
            move |session, ch, _| inner_product_cot(&w1, &a1, session, ch),
            move |session, ch, _| inner_product_cot(&w2, &a2, session, ch),
        );
        assert!(matches!(r2, Err(ProtoError::Protocol(_))), "{r2:?}");
        assert!(r1.is_err());

        // Length disagreement between bits and elements fails on both sides
        // before any traffic.
        let w1 = BoolShare { bits: vec![true], party: 1 };
        let w2 = BoolShare { bits: vec![false], party: 2 };
        let a1 = ArithShare { values: vec![1, 2], sigma: 16, party: 1 };
        let a2 = ArithShare { values: vec![3, 4], sigma: 16, party: 2 };
        let ((r1, _), (r2, _)) = run_pair(
            0x1b1,
            move |session, ch, _| inner_product_cot(&w1, &a1, session, ch),
            move |session, ch, _| inner_product_cot(&w2, &a2, session, ch),
        );
        assert!(matches!(r1, Err(ProtoError::Shape(_))), "{r1:?}");
        assert!(matches!(r2, Err(ProtoError::Shape(_))), "{r2:?}");
    }
}
