//! Oblivious-transfer stack: base transfers built from group operations, a
//! seed-expansion extension for large batches, and a correlated variant in
//! which the sender's messages are pseudorandom and tied together by a
//! declared per-transfer correlation function.
//!
//! Roles follow the transfer direction. The *sender* contributes message
//! pairs (or correlation functions); the *receiver* contributes choice bits
//! and learns exactly one message per pair, while the sender learns nothing
//! about the choices. Extension bootstraps from 128 base transfers run in
//! the opposite direction, after which batches of any size cost only
//! symmetric-key work and one message each way.
//!
//! For a correlated batch of m transfers the receiver sends m blocks of 128
//! masked matrix bits and the sender answers with m 128-bit corrections, so
//! per-party traffic is m(128 + 128) bits plus fixed setup and framing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand_core::{CryptoRng, RngCore};

use crate::channel::{msg, Channel, ChannelError};
use crate::rng::{derive_seed, AesPrg, MmoHash};

/// Errors from the transfer protocols.
#[derive(Debug)]
pub enum OtError {
    /// The underlying channel failed.
    Channel(ChannelError),
    /// Received bytes do not decode to a group point.
    MalformedPoint,
    /// A payload had the wrong size or the peers disagreed on batch shape.
    BadInput(String),
}

impl fmt::Display for OtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OtError::Channel(err) => write!(f, "channel failure during transfer: {err}"),
            OtError::MalformedPoint => write!(f, "received bytes do not decode to a group point"),
            OtError::BadInput(what) => write!(f, "{what}"),
        }
    }
}

impl core::error::Error for OtError {}

impl From<ChannelError> for OtError {
    fn from(err: ChannelError) -> Self {
        OtError::Channel(err)
    }
}

/// Security sizes shared by both parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityParams {
    /// Computational security parameter in bits; the number of base
    /// transfers and the extension matrix width.
    pub tau: u16,
    /// Correlated-transfer message length in bits, one cipher block.
    pub cot_block: u16,
}

impl Default for SecurityParams {
    fn default() -> Self {
        SecurityParams {
            tau: 128,
            cot_block: 128,
        }
    }
}

impl SecurityParams {
    /// The implementation hardwires 128-bit blocks end to end; anything else
    /// is a configuration error.
    pub fn validate(&self) -> Result<(), OtError> {
        if self.tau != 128 || self.cot_block != 128 {
            return Err(OtError::BadInput(format!(
                "unsupported security sizes tau={} block={}, both must be 128",
                self.tau, self.cot_block
            )));
        }
        Ok(())
    }
}

/// Shape of a correlation, known to both parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    /// Lane-wise wrapping addition of a fixed addend. `lane_bits` splits the
    /// 128-bit block into equal lanes of 8, 16, 32, 64, or 128 bits.
    Add { lane_bits: u8 },
    /// Bitwise XOR with a fixed offset.
    Xor,
}

impl CorrelationKind {
    fn assert_valid(&self) {
        if let CorrelationKind::Add { lane_bits } = *self {
            assert!(
                matches!(lane_bits, 8 | 16 | 32 | 64 | 128),
                "unsupported lane width {lane_bits}"
            );
        }
    }

    /// Receiver-side recombination of a correction with its hash mask.
    fn combine(&self, correction: [u8; 16], mask: [u8; 16]) -> [u8; 16] {
        match *self {
            CorrelationKind::Add { lane_bits } => lane_add(correction, mask, lane_bits),
            CorrelationKind::Xor => xor_block(correction, mask),
        }
    }
}

/// One transfer's correlation function f(x), held by the sender. The addend
/// doubles as the XOR offset for the [`CorrelationKind::Xor`] variant.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationFn {
    pub kind: CorrelationKind,
    pub addend: [u8; 16],
}

impl CorrelationFn {
    pub fn add(addend: [u8; 16], lane_bits: u8) -> Self {
        let kind = CorrelationKind::Add { lane_bits };
        kind.assert_valid();
        CorrelationFn { kind, addend }
    }

    pub fn xor(delta: [u8; 16]) -> Self {
        CorrelationFn {
            kind: CorrelationKind::Xor,
            addend: delta,
        }
    }

    /// Evaluates f(x).
    pub fn apply(&self, x: [u8; 16]) -> [u8; 16] {
        match self.kind {
            CorrelationKind::Add { lane_bits } => lane_add(x, self.addend, lane_bits),
            CorrelationKind::Xor => xor_block(x, self.addend),
        }
    }

    /// Sender-side correction: f(x) with the receiver's chosen-branch hash
    /// mask removed under the kind's group operation.
    fn correction(&self, x: [u8; 16], mask: [u8; 16]) -> [u8; 16] {
        match self.kind {
            CorrelationKind::Add { lane_bits } => lane_sub(self.apply(x), mask, lane_bits),
            CorrelationKind::Xor => xor_block(self.apply(x), mask),
        }
    }
}

/// Joint outcome of a correlated batch, assembled by tests and diagnostics
/// from both endpoints' views.
#[derive(Debug, Clone)]
pub struct CotBatchResult {
    pub sender_x: Vec<[u8; 16]>,
    pub chooser_y: Vec<[u8; 16]>,
    pub choices: Vec<bool>,
}

impl CotBatchResult {
    /// Checks y_i = x_i for choice 0 and y_i = f_i(x_i) for choice 1.
    pub fn verify(&self, correlations: &[CorrelationFn]) -> bool {
        self.sender_x.len() == self.chooser_y.len()
            && self.choices.len() == self.sender_x.len()
            && correlations.len() == self.sender_x.len()
            && (0..self.sender_x.len()).all(|i| {
                let expected = if self.choices[i] {
                    correlations[i].apply(self.sender_x[i])
                } else {
                    self.sender_x[i]
                };
                self.chooser_y[i] == expected
            })
    }
}

fn xor_block(a: [u8; 16], b: [u8; 16]) -> [u8; 16] {
    let mut out = [0u8; 16];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b.iter())) {
        *o = x ^ y;
    }
    out
}

fn lane_add(a: [u8; 16], b: [u8; 16], lane_bits: u8) -> [u8; 16] {
    lane_op(a, b, lane_bits, false)
}

fn lane_sub(a: [u8; 16], b: [u8; 16], lane_bits: u8) -> [u8; 16] {
    lane_op(a, b, lane_bits, true)
}

fn lane_op(a: [u8; 16], b: [u8; 16], lane_bits: u8, subtract: bool) -> [u8; 16] {
    let width = match lane_bits {
        8 => 1,
        16 => 2,
        32 => 4,
        64 => 8,
        128 => 16,
        other => panic!("unsupported lane width {other}"),
    };
    let mut out = [0u8; 16];
    for lane in 0..16 / width {
        let base = lane * width;
        let x = read_lane(&a[base..base + width]);
        let y = read_lane(&b[base..base + width]);
        let z = if subtract {
            x.wrapping_sub(y)
        } else {
            x.wrapping_add(y)
        };
        write_lane(&mut out[base..base + width], z);
    }
    out
}

fn read_lane(bytes: &[u8]) -> u128 {
    let mut buf = [0u8; 16];
    buf[..bytes.len()].copy_from_slice(bytes);
    u128::from_le_bytes(buf)
}

fn write_lane(dest: &mut [u8], value: u128) {
    let bytes = value.to_le_bytes();
    dest.copy_from_slice(&bytes[..dest.len()]);
}

fn seed_label(index: usize) -> [u8; 11] {
    let mut label = [0u8; 11];
    label[..7].copy_from_slice(b"base-ot");
    label[7..].copy_from_slice(&(index as u32).to_be_bytes());
    label
}

fn decompress_point(bytes: &[u8]) -> Result<RistrettoPoint, OtError> {
    CompressedRistretto::from_slice(bytes)
        .map_err(|_| OtError::MalformedPoint)?
        .decompress()
        .ok_or(OtError::MalformedPoint)
}

/// Base-transfer sender. Publishes one blinding point, then derives a seed
/// pair per transfer from the receiver's response points. The receiver can
/// compute exactly the seed matching its choice bit.
pub fn base_ot_send<C: Channel, R: RngCore + CryptoRng>(
    count: usize,
    channel: &mut C,
    rng: &mut R,
) -> Result<Vec<([u8; 16], [u8; 16])>, OtError> {
    let a = Scalar::random(rng);
    let big_a = RistrettoPoint::mul_base(&a);
    channel.send(msg::BASE_OT_A, big_a.compress().as_bytes())?;
    let response = channel.recv(msg::BASE_OT_B)?;
    if response.len() != count * 32 {
        return Err(OtError::BadInput(format!(
            "expected {} response bytes for {count} base transfers, got {}",
            count * 32,
            response.len()
        )));
    }
    let a_big_a = big_a * a;
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let b_point = decompress_point(&response[i * 32..(i + 1) * 32])?;
        let k0_point = b_point * a;
        let k1_point = k0_point - a_big_a;
        let label = seed_label(i);
        pairs.push((
            derive_seed(k0_point.compress().as_bytes(), &label),
            derive_seed(k1_point.compress().as_bytes(), &label),
        ));
    }
    Ok(pairs)
}

/// Base-transfer receiver. For choice bit 0 its response point is a plain
/// blinded generator and it ends up with the sender's first seed; for choice
/// bit 1 the response absorbs the sender's point and it ends up with the
/// second seed.
pub fn base_ot_receive<C: Channel, R: RngCore + CryptoRng>(
    choices: &[bool],
    channel: &mut C,
    rng: &mut R,
) -> Result<Vec<[u8; 16]>, OtError> {
    let payload = channel.recv(msg::BASE_OT_A)?;
    if payload.len() != 32 {
        return Err(OtError::BadInput(format!(
            "expected one 32-byte point, got {} bytes",
            payload.len()
        )));
    }
    let big_a = decompress_point(&payload)?;
    let mut blinds = Vec::with_capacity(choices.len());
    let mut response = Vec::with_capacity(choices.len() * 32);
    for &choice in choices {
        let b = Scalar::random(rng);
        let mut point = RistrettoPoint::mul_base(&b);
        if choice {
            point += big_a;
        }
        response.extend_from_slice(point.compress().as_bytes());
        blinds.push(b);
    }
    channel.send(msg::BASE_OT_B, &response)?;
    Ok(blinds
        .iter()
        .enumerate()
        .map(|(i, b)| derive_seed((big_a * b).compress().as_bytes(), &seed_label(i)))
        .collect())
}

/// In-place 128x128 bit-matrix transpose via recursive block swaps. Entry
/// (row r, column c) lives at bit c of word r; the call moves it to bit r of
/// word c.
fn transpose128(m: &mut [u128; 128]) {
    let mut j: u32 = 64;
    let mut mask: u128 = u128::MAX >> 64;
    while j != 0 {
        let jj = j as usize;
        let mut k: usize = 0;
        while k < 128 {
            let t = ((m[k] >> j) ^ m[k + jj]) & mask;
            m[k] ^= t << j;
            m[k + jj] ^= t;
            k = (k + jj + 1) & !jj;
        }
        j >>= 1;
        mask ^= mask << j;
    }
}

fn next_word(prg: &mut AesPrg) -> u128 {
    let mut buf = [0u8; 16];
    prg.fill_bytes(&mut buf);
    u128::from_le_bytes(buf)
}

fn padded_rows(m: usize) -> usize {
    m.div_ceil(128) * 128
}

/// Extension sender. Holds the secret column-choice word from setup and one
/// expansion generator per matrix column.
pub struct ExtSender {
    params: SecurityParams,
    s_word: u128,
    column_prgs: Vec<AesPrg>,
    hash: MmoHash,
    tweak: u128,
}

/// Extension receiver. Holds both expansion generators per matrix column and
/// masks its choice bits into the column matrix it sends.
pub struct ExtReceiver {
    params: SecurityParams,
    prgs0: Vec<AesPrg>,
    prgs1: Vec<AesPrg>,
    hash: MmoHash,
    tweak: u128,
}

impl ExtSender {
    pub fn params(&self) -> SecurityParams {
        self.params
    }

    /// Bootstraps the sender role by running the base transfers in the
    /// opposite direction with a random secret choice vector.
    pub fn setup<C: Channel, R: RngCore + CryptoRng>(
        params: SecurityParams,
        channel: &mut C,
        rng: &mut R,
    ) -> Result<Self, OtError> {
        params.validate()?;
        let mut s_bytes = [0u8; 16];
        rng.fill_bytes(&mut s_bytes);
        let s_word = u128::from_le_bytes(s_bytes);
        let choices: Vec<bool> = (0..params.tau as usize)
            .map(|i| (s_word >> i) & 1 == 1)
            .collect();
        let seeds = base_ot_receive(&choices, channel, rng)?;
        Ok(ExtSender {
            params,
            s_word,
            column_prgs: seeds.into_iter().map(AesPrg::new).collect(),
            hash: MmoHash::new(),
            tweak: 0,
        })
    }

    /// Receives the masked column matrix for a batch of `m` rows and returns
    /// the per-row key words q_j.
    fn receive_columns<C: Channel>(
        &mut self,
        m: usize,
        channel: &mut C,
    ) -> Result<Vec<u128>, OtError> {
        let payload = channel.recv(msg::EXT_MATRIX)?;
        if payload.len() < 4 {
            return Err(OtError::BadInput(String::from(
                "column matrix payload too short for its header",
            )));
        }
        let advertised = u32::from_be_bytes(payload[..4].try_into().unwrap()) as usize;
        if advertised != m {
            return Err(OtError::BadInput(format!(
                "batch size mismatch: peer sent {advertised} rows, this side expected {m}"
            )));
        }
        let blocks = m.div_ceil(128);
        if payload.len() != 4 + blocks * 2048 {
            return Err(OtError::BadInput(format!(
                "column matrix payload is {} bytes, expected {}",
                payload.len(),
                4 + blocks * 2048
            )));
        }
        let mut rows = Vec::with_capacity(blocks * 128);
        for b in 0..blocks {
            let base = 4 + b * 2048;
            let mut q_cols = [0u128; 128];
            for (i, col) in q_cols.iter_mut().enumerate() {
                let masked = u128::from_le_bytes(
                    payload[base + i * 16..base + (i + 1) * 16].try_into().unwrap(),
                );
                let expanded = next_word(&mut self.column_prgs[i]);
                *col = if (self.s_word >> i) & 1 == 1 {
                    expanded ^ masked
                } else {
                    expanded
                };
            }
            transpose128(&mut q_cols);
            rows.extend_from_slice(&q_cols);
        }
        rows.truncate(m);
        Ok(rows)
    }

    /// Delivers one of each 16-byte message pair according to the receiver's
    /// choice bits.
    pub fn send_ot<C: Channel>(
        &mut self,
        msgs: &[([u8; 16], [u8; 16])],
        channel: &mut C,
    ) -> Result<(), OtError> {
        if msgs.is_empty() {
            return Ok(());
        }
        let rows = self.receive_columns(msgs.len(), channel)?;
        let mut payload = Vec::with_capacity(msgs.len() * 32);
        for (j, ((v0, v1), q)) in msgs.iter().zip(&rows).enumerate() {
            let tweak = self.tweak + j as u128;
            let mask0 = self.hash.hash(tweak, *q).to_le_bytes();
            let mask1 = self.hash.hash(tweak, *q ^ self.s_word).to_le_bytes();
            payload.extend_from_slice(&xor_block(*v0, mask0));
            payload.extend_from_slice(&xor_block(*v1, mask1));
        }
        self.tweak += padded_rows(msgs.len()) as u128;
        channel.send(msg::EXT_CORRECTION, &payload)?;
        Ok(())
    }

    /// Runs a correlated batch. The sender's message x_j comes out of the
    /// row hash rather than being chosen; the receiver ends up with x_j or
    /// f_j(x_j) per its choice bit. Returns the x_j.
    pub fn send_cot<C: Channel>(
        &mut self,
        correlations: &[CorrelationFn],
        channel: &mut C,
    ) -> Result<Vec<[u8; 16]>, OtError> {
        if correlations.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.receive_columns(correlations.len(), channel)?;
        let mut xs = Vec::with_capacity(correlations.len());
        let mut payload = Vec::with_capacity(correlations.len() * 16);
        for (j, (corr, q)) in correlations.iter().zip(&rows).enumerate() {
            let tweak = self.tweak + j as u128;
            let x = self.hash.hash(tweak, *q).to_le_bytes();
            let mask = self.hash.hash(tweak, *q ^ self.s_word).to_le_bytes();
            payload.extend_from_slice(&corr.correction(x, mask));
            xs.push(x);
        }
        self.tweak += padded_rows(correlations.len()) as u128;
        channel.send(msg::EXT_CORRECTION, &payload)?;
        Ok(xs)
    }
}

impl ExtReceiver {
    pub fn params(&self) -> SecurityParams {
        self.params
    }

    /// Bootstraps the receiver role by acting as the base-transfer sender.
    pub fn setup<C: Channel, R: RngCore + CryptoRng>(
        params: SecurityParams,
        channel: &mut C,
        rng: &mut R,
    ) -> Result<Self, OtError> {
        params.validate()?;
        let pairs = base_ot_send(params.tau as usize, channel, rng)?;
        let mut prgs0 = Vec::with_capacity(pairs.len());
        let mut prgs1 = Vec::with_capacity(pairs.len());
        for (k0, k1) in pairs {
            prgs0.push(AesPrg::new(k0));
            prgs1.push(AesPrg::new(k1));
        }
        Ok(ExtReceiver {
            params,
            prgs0,
            prgs1,
            hash: MmoHash::new(),
            tweak: 0,
        })
    }

    /// Sends the masked column matrix for `choices` and returns the per-row
    /// key words t_j.
    fn send_columns<C: Channel>(
        &mut self,
        choices: &[bool],
        channel: &mut C,
    ) -> Result<Vec<u128>, OtError> {
        let m = choices.len();
        let blocks = m.div_ceil(128);
        let mut payload = Vec::with_capacity(4 + blocks * 2048);
        payload.extend_from_slice(&(m as u32).to_be_bytes());
        let mut rows = Vec::with_capacity(blocks * 128);
        for b in 0..blocks {
            let mut w_word = 0u128;
            for (offset, &c) in choices[b * 128..].iter().take(128).enumerate() {
                if c {
                    w_word |= 1u128 << offset;
                }
            }
            let mut t_cols = [0u128; 128];
            for (i, col) in t_cols.iter_mut().enumerate() {
                let t0 = next_word(&mut self.prgs0[i]);
                let t1 = next_word(&mut self.prgs1[i]);
                *col = t0;
                payload.extend_from_slice(&(t0 ^ t1 ^ w_word).to_le_bytes());
            }
            transpose128(&mut t_cols);
            rows.extend_from_slice(&t_cols);
        }
        channel.send(msg::EXT_MATRIX, &payload)?;
        rows.truncate(m);
        Ok(rows)
    }

    /// Receives one of each 16-byte message pair according to `choices`.
    pub fn recv_ot<C: Channel>(
        &mut self,
        choices: &[bool],
        channel: &mut C,
    ) -> Result<Vec<[u8; 16]>, OtError> {
        if choices.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.send_columns(choices, channel)?;
        let payload = channel.recv(msg::EXT_CORRECTION)?;
        if payload.len() != choices.len() * 32 {
            return Err(OtError::BadInput(format!(
                "message payload is {} bytes, expected {}",
                payload.len(),
                choices.len() * 32
            )));
        }
        let mut out = Vec::with_capacity(choices.len());
        for (j, (&choice, t)) in choices.iter().zip(&rows).enumerate() {
            let mask = self.hash.hash(self.tweak + j as u128, *t).to_le_bytes();
            let base = j * 32 + if choice { 16 } else { 0 };
            let boxed: [u8; 16] = payload[base..base + 16].try_into().unwrap();
            out.push(xor_block(boxed, mask));
        }
        self.tweak += padded_rows(choices.len()) as u128;
        Ok(out)
    }

    /// Receives a correlated batch. `kinds[j]` must match the shape the
    /// sender declared for transfer j; the addends stay secret.
    pub fn recv_cot<C: Channel>(
        &mut self,
        choices: &[bool],
        kinds: &[CorrelationKind],
        channel: &mut C,
    ) -> Result<Vec<[u8; 16]>, OtError> {
        if choices.len() != kinds.len() {
            return Err(OtError::BadInput(format!(
                "{} choices but {} correlation kinds",
                choices.len(),
                kinds.len()
            )));
        }
        if choices.is_empty() {
            return Ok(Vec::new());
        }
        let rows = self.send_columns(choices, channel)?;
        let payload = channel.recv(msg::EXT_CORRECTION)?;
        if payload.len() != choices.len() * 16 {
            return Err(OtError::BadInput(format!(
                "correction payload is {} bytes, expected {}",
                payload.len(),
                choices.len() * 16
            )));
        }
        let mut out = Vec::with_capacity(choices.len());
        for (j, ((&choice, kind), t)) in choices.iter().zip(kinds).zip(&rows).enumerate() {
            let mask = self.hash.hash(self.tweak + j as u128, *t).to_le_bytes();
            if choice {
                let correction: [u8; 16] = payload[j * 16..j * 16 + 16].try_into().unwrap();
                out.push(kind.combine(correction, mask));
            } else {
                out.push(mask);
            }
        }
        self.tweak += padded_rows(choices.len()) as u128;
        Ok(out)
    }
}
