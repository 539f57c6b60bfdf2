//! Two-party garbled-circuit engine.
//!
//! Circuits are built from XOR, AND, and NOT gates over single-bit wires.
//! Garbling uses free XOR with half-gate AND tables, so only AND gates cost
//! communication: exactly two 16-byte ciphertexts each. NOT gates are free as
//! well (the garbler offsets the wire label, the evaluator copies).
//!
//! A session runs over a [`Channel`]: the garbler sends the gate tables, its
//! own active input labels, the evaluator's input labels by oblivious
//! transfer, and finally the output decoding bits. Only the evaluator learns
//! the decoded outputs; circuits that must hide outputs from the evaluator
//! mask them inside the circuit with garbler-supplied random values.
//!
//! [`blocks`] packages the circuit fragments used by the secure training
//! protocol: activation, gradient normalization, optimizer requantization,
//! and weight ternarization, each emitting masked shares.

pub mod blocks;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_core::{CryptoRng, RngCore};

use crate::channel::{msg, Channel, ChannelError};
use crate::ot::{ExtReceiver, ExtSender, OtError};
use crate::rng::MmoHash;

/// Errors raised while building, garbling, or executing a circuit session.
#[derive(Debug)]
pub enum GcError {
    /// Transport failure on the underlying channel.
    Channel(ChannelError),
    /// Failure in the oblivious transfer used for evaluator input labels.
    Ot(OtError),
    /// The peer sent a message inconsistent with the agreed circuit.
    Protocol(String),
}

impl fmt::Display for GcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GcError::Channel(e) => write!(f, "channel error: {e}"),
            GcError::Ot(e) => write!(f, "oblivious transfer error: {e}"),
            GcError::Protocol(m) => write!(f, "protocol violation: {m}"),
        }
    }
}

impl core::error::Error for GcError {}

impl From<ChannelError> for GcError {
    fn from(e: ChannelError) -> Self {
        GcError::Channel(e)
    }
}

impl From<OtError> for GcError {
    fn from(e: OtError) -> Self {
        GcError::Ot(e)
    }
}

/// A single-bit value inside a circuit: a known constant or a wire.
///
/// Builder methods fold constants eagerly, so constants never reach gates.
/// They may still appear among circuit outputs, where the decoding
/// information carries them verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bit {
    /// A public constant known to both parties.
    Const(bool),
    /// A circuit wire, identified by index.
    W(u32),
}

/// One gate. Output wires are distinct from all input wires and each wire is
/// driven exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Xor { a: u32, b: u32, out: u32 },
    And { a: u32, b: u32, out: u32 },
    Not { a: u32, out: u32 },
}

/// Gate tallies for one labelled span of the circuit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageStats {
    pub label: String,
    pub and_gates: u64,
    pub xor_gates: u64,
    pub not_gates: u64,
}

/// A finished Boolean circuit with declared input ownership.
///
/// `p1_wires` are the garbler's inputs, `p2_wires` the evaluator's, in the
/// order both parties supply their bits. Outputs may reference wires or
/// constants.
#[derive(Debug, Clone)]
pub struct Circuit {
    gates: Vec<Gate>,
    wire_count: u32,
    p1_wires: Vec<u32>,
    p2_wires: Vec<u32>,
    outputs: Vec<Bit>,
    stages: Vec<StageStats>,
}

impl Circuit {
    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn wire_count(&self) -> u32 {
        self.wire_count
    }

    pub fn p1_wires(&self) -> &[u32] {
        &self.p1_wires
    }

    pub fn p2_wires(&self) -> &[u32] {
        &self.p2_wires
    }

    pub fn outputs(&self) -> &[Bit] {
        &self.outputs
    }

    pub fn stages(&self) -> &[StageStats] {
        &self.stages
    }

    /// Total number of AND gates, the only gates that cost table bytes.
    pub fn and_count(&self) -> u64 {
        self.stages.iter().map(|s| s.and_gates).sum()
    }

    /// AND gates inside the stage with the given label, summed over repeats.
    pub fn stage_and_count(&self, label: &str) -> u64 {
        self.stages
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.and_gates)
            .sum()
    }

    /// Evaluates the circuit on cleartext bits, for testing and cost probes.
    pub fn eval_plain(&self, p1_bits: &[bool], p2_bits: &[bool]) -> Vec<bool> {
        assert_eq!(p1_bits.len(), self.p1_wires.len(), "garbler input width");
        assert_eq!(p2_bits.len(), self.p2_wires.len(), "evaluator input width");
        let mut wires = vec![false; self.wire_count as usize];
        for (w, bit) in self.p1_wires.iter().zip(p1_bits) {
            wires[*w as usize] = *bit;
        }
        for (w, bit) in self.p2_wires.iter().zip(p2_bits) {
            wires[*w as usize] = *bit;
        }
        for gate in &self.gates {
            match *gate {
                Gate::Xor { a, b, out } => {
                    wires[out as usize] = wires[a as usize] ^ wires[b as usize];
                }
                Gate::And { a, b, out } => {
                    wires[out as usize] = wires[a as usize] & wires[b as usize];
                }
                Gate::Not { a, out } => {
                    wires[out as usize] = !wires[a as usize];
                }
            }
        }
        self.outputs
            .iter()
            .map(|bit| match *bit {
                Bit::Const(v) => v,
                Bit::W(w) => wires[w as usize],
            })
            .collect()
    }
}

/// Incremental circuit constructor with eager constant folding.
#[derive(Debug, Default)]
pub struct CircuitBuilder {
    gates: Vec<Gate>,
    wire_count: u32,
    p1_wires: Vec<u32>,
    p2_wires: Vec<u32>,
    stages: Vec<StageStats>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a new labelled stage; subsequent gates are tallied under it.
    pub fn stage(&mut self, label: &str) {
        self.stages.push(StageStats {
            label: label.to_string(),
            and_gates: 0,
            xor_gates: 0,
            not_gates: 0,
        });
    }

    fn fresh_wire(&mut self) -> u32 {
        let w = self.wire_count;
        self.wire_count = self
            .wire_count
            .checked_add(1)
            .expect("circuit exceeds wire id space");
        w
    }

    fn current_stage(&mut self) -> &mut StageStats {
        if self.stages.is_empty() {
            self.stage("main");
        }
        self.stages.last_mut().expect("stage list non-empty")
    }

    /// Allocates input wires owned by the garbler.
    pub fn input_p1(&mut self, count: usize) -> Vec<Bit> {
        (0..count)
            .map(|_| {
                let w = self.fresh_wire();
                self.p1_wires.push(w);
                Bit::W(w)
            })
            .collect()
    }

    /// Allocates input wires owned by the evaluator.
    pub fn input_p2(&mut self, count: usize) -> Vec<Bit> {
        (0..count)
            .map(|_| {
                let w = self.fresh_wire();
                self.p2_wires.push(w);
                Bit::W(w)
            })
            .collect()
    }

    pub fn xor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x ^ y),
            (Bit::Const(false), w) | (w, Bit::Const(false)) => w,
            (Bit::Const(true), w) | (w, Bit::Const(true)) => self.not(w),
            (Bit::W(x), Bit::W(y)) if x == y => Bit::Const(false),
            (Bit::W(x), Bit::W(y)) => {
                let out = self.fresh_wire();
                self.gates.push(Gate::Xor { a: x, b: y, out });
                self.current_stage().xor_gates += 1;
                Bit::W(out)
            }
        }
    }

    pub fn and(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(false), _) | (_, Bit::Const(false)) => Bit::Const(false),
            (Bit::Const(true), w) | (w, Bit::Const(true)) => w,
            (Bit::W(x), Bit::W(y)) if x == y => Bit::W(x),
            (Bit::W(x), Bit::W(y)) => {
                let out = self.fresh_wire();
                self.gates.push(Gate::And { a: x, b: y, out });
                self.current_stage().and_gates += 1;
                Bit::W(out)
            }
        }
    }

    pub fn not(&mut self, a: Bit) -> Bit {
        match a {
            Bit::Const(x) => Bit::Const(!x),
            Bit::W(x) => {
                let out = self.fresh_wire();
                self.gates.push(Gate::Not { a: x, out });
                self.current_stage().not_gates += 1;
                Bit::W(out)
            }
        }
    }

    pub fn or(&mut self, a: Bit, b: Bit) -> Bit {
        let na = self.not(a);
        let nb = self.not(b);
        let both = self.and(na, nb);
        self.not(both)
    }

    /// Two-way select: returns `t` when `sel` is set, `f` otherwise.
    pub fn mux(&mut self, sel: Bit, t: Bit, f: Bit) -> Bit {
        let diff = self.xor(t, f);
        let gated = self.and(sel, diff);
        self.xor(f, gated)
    }

    /// Seals the builder into a circuit with the given outputs.
    pub fn finish(self, outputs: Vec<Bit>) -> Circuit {
        for bit in &outputs {
            if let Bit::W(w) = bit {
                assert!(*w < self.wire_count, "output references unknown wire");
            }
        }
        Circuit {
            gates: self.gates,
            wire_count: self.wire_count,
            p1_wires: self.p1_wires,
            p2_wires: self.p2_wires,
            outputs,
            stages: self.stages,
        }
    }

    // Word-level gadgets. Words are little-endian bit vectors; signed values
    // use two's complement with the top bit as sign.

    /// Ripple-carry sum of two equal-width words, truncated to that width.
    pub fn add_words(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        self.add_with_carry(a, b, Bit::Const(false))
    }

    /// Ripple-carry sum with an explicit carry-in, one AND per bit.
    pub fn add_with_carry(&mut self, a: &[Bit], b: &[Bit], carry_in: Bit) -> Vec<Bit> {
        assert_eq!(a.len(), b.len(), "adder operand widths differ");
        let mut carry = carry_in;
        let mut out = Vec::with_capacity(a.len());
        for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
            let axc = self.xor(ai, carry);
            let sum = self.xor(axc, bi);
            out.push(sum);
            if i + 1 < a.len() {
                let bxc = self.xor(bi, carry);
                let maj = self.and(axc, bxc);
                carry = self.xor(carry, maj);
            }
        }
        out
    }

    /// Difference `a - b` of equal-width words, truncated to that width.
    pub fn sub_words(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        let nb: Vec<Bit> = b.iter().map(|&bit| self.not(bit)).collect();
        self.add_with_carry(a, &nb, Bit::Const(true))
    }

    /// Selects between two equal-width words, one AND per bit.
    pub fn mux_words(&mut self, sel: Bit, t: &[Bit], f: &[Bit]) -> Vec<Bit> {
        assert_eq!(t.len(), f.len(), "mux operand widths differ");
        t.iter()
            .zip(f)
            .map(|(&ti, &fi)| self.mux(sel, ti, fi))
            .collect()
    }

    /// Bitwise OR of two equal-width words.
    pub fn or_words(&mut self, a: &[Bit], b: &[Bit]) -> Vec<Bit> {
        assert_eq!(a.len(), b.len(), "or operand widths differ");
        a.iter().zip(b).map(|(&ai, &bi)| self.or(ai, bi)).collect()
    }

    /// OR over all bits, as a balanced tree.
    pub fn or_reduce(&mut self, bits: &[Bit]) -> Bit {
        match bits.len() {
            0 => Bit::Const(false),
            1 => bits[0],
            n => {
                let (lo, hi) = bits.split_at(n / 2);
                let l = self.or_reduce(lo);
                let r = self.or_reduce(hi);
                self.or(l, r)
            }
        }
    }

    /// Two's-complement magnitude, read as an unsigned word of equal width.
    ///
    /// Flips the bits under the sign and adds the sign back in, so the most
    /// negative value maps to its own encoding, whose unsigned reading is the
    /// correct magnitude.
    pub fn abs_word(&mut self, a: &[Bit]) -> Vec<Bit> {
        let sign = *a.last().expect("abs of empty word");
        let flipped: Vec<Bit> = a.iter().map(|&bit| self.xor(bit, sign)).collect();
        let zero = vec![Bit::Const(false); a.len()];
        self.add_with_carry(&flipped, &zero, sign)
    }
}

/// Builds a constant word of the given width, least-significant bit first.
pub fn const_word(value: u64, width: usize) -> Vec<Bit> {
    (0..width)
        .map(|i| Bit::Const(i < 64 && (value >> i) & 1 == 1))
        .collect()
}

/// Sign-extends a word to `width` bits (a no-op when already that wide).
pub fn sext(word: &[Bit], width: usize) -> Vec<Bit> {
    assert!(width >= word.len(), "sign extension cannot narrow");
    let sign = *word.last().expect("extension of empty word");
    let mut out = word.to_vec();
    out.resize(width, sign);
    out
}

/// Zero-extends a word to `width` bits.
pub fn zext(word: &[Bit], width: usize) -> Vec<Bit> {
    assert!(width >= word.len(), "zero extension cannot narrow");
    let mut out = word.to_vec();
    out.resize(width, Bit::Const(false));
    out
}

/// Arithmetic right shift by a public amount, keeping the width.
pub fn sra(word: &[Bit], shift: usize) -> Vec<Bit> {
    let sign = *word.last().expect("shift of empty word");
    let mut out: Vec<Bit> = word.iter().skip(shift).copied().collect();
    out.resize(word.len(), sign);
    out
}

/// Logical right shift by a public amount, keeping the width.
pub fn srl(word: &[Bit], shift: usize) -> Vec<Bit> {
    let mut out: Vec<Bit> = word.iter().skip(shift).copied().collect();
    out.resize(word.len(), Bit::Const(false));
    out
}

/// Left shift by a public amount, keeping the width.
pub fn sll(word: &[Bit], shift: usize) -> Vec<Bit> {
    let mut out = vec![Bit::Const(false); shift.min(word.len())];
    out.extend(word.iter().take(word.len() - out.len()));
    out
}

/// Unpacks the low `width` bits of a value, least-significant first.
pub fn value_to_bits(value: u64, width: usize) -> Vec<bool> {
    (0..width).map(|i| i < 64 && (value >> i) & 1 == 1).collect()
}

/// Packs bits (least-significant first) back into a value.
pub fn bits_to_value(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .take(64)
        .fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i))
}

/// Garbling output: the global offset, one zero-label per wire, and the
/// half-gate tables in gate order.
pub struct Garbled {
    delta: u128,
    label0: Vec<u128>,
    tables: Vec<[u8; 32]>,
}

impl Garbled {
    pub fn tables(&self) -> &[[u8; 32]] {
        &self.tables
    }

    /// The label encoding `bit` on the given wire.
    pub fn active_label(&self, wire: u32, bit: bool) -> u128 {
        let base = self.label0[wire as usize];
        if bit {
            base ^ self.delta
        } else {
            base
        }
    }

    /// Both labels for a wire, as the message pair fed to oblivious transfer.
    pub fn label_pair(&self, wire: u32) -> ([u8; 16], [u8; 16]) {
        let zero = self.label0[wire as usize];
        (zero.to_le_bytes(), (zero ^ self.delta).to_le_bytes())
    }

    /// Per-output decoding byte: 0 or 1 carry the permute bit of a wire
    /// output, 2 and 3 denote the constants false and true.
    pub fn decode_byte(&self, output: Bit) -> u8 {
        match output {
            Bit::Const(false) => 2,
            Bit::Const(true) => 3,
            Bit::W(w) => (self.label0[w as usize] & 1) as u8,
        }
    }
}

fn half_gate_tweaks(and_index: u64) -> (u128, u128) {
    let base = u128::from(and_index) * 2;
    (base, base + 1)
}

/// Garbles a circuit with fresh random labels.
///
/// The global offset has its low bit set so that label pairs differ in their
/// permute bit, XOR gates combine labels directly, and NOT gates offset the
/// zero-label without any table.
pub fn garble<R: RngCore + CryptoRng>(circuit: &Circuit, rng: &mut R) -> Garbled {
    let hash = MmoHash::new();
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    let delta = u128::from_le_bytes(bytes) | 1;

    let mut label0 = vec![0u128; circuit.wire_count as usize];
    for &w in circuit.p1_wires.iter().chain(&circuit.p2_wires) {
        rng.fill_bytes(&mut bytes);
        label0[w as usize] = u128::from_le_bytes(bytes);
    }

    let mut tables = Vec::with_capacity(circuit.and_count() as usize);
    let mut and_index = 0u64;
    for gate in &circuit.gates {
        match *gate {
            Gate::Xor { a, b, out } => {
                label0[out as usize] = label0[a as usize] ^ label0[b as usize];
            }
            Gate::Not { a, out } => {
                label0[out as usize] = label0[a as usize] ^ delta;
            }
            Gate::And { a, b, out } => {
                let a0 = label0[a as usize];
                let b0 = label0[b as usize];
                let pa = a0 & 1 == 1;
                let pb = b0 & 1 == 1;
                let (t_gen, t_eval) = half_gate_tweaks(and_index);
                and_index += 1;

                let hg0 = hash.hash(t_gen, a0);
                let hg1 = hash.hash(t_gen, a0 ^ delta);
                let table_g = hg0 ^ hg1 ^ if pb { delta } else { 0 };
                let w_g = hg0 ^ if pa { table_g } else { 0 };

                let he0 = hash.hash(t_eval, b0);
                let he1 = hash.hash(t_eval, b0 ^ delta);
                let table_e = he0 ^ he1 ^ a0;
                let w_e = he0 ^ if pb { table_e ^ a0 } else { 0 };

                label0[out as usize] = w_g ^ w_e;
                let mut row = [0u8; 32];
                row[..16].copy_from_slice(&table_g.to_le_bytes());
                row[16..].copy_from_slice(&table_e.to_le_bytes());
                tables.push(row);
            }
        }
    }
    Garbled {
        delta,
        label0,
        tables,
    }
}

/// Reusable evaluator state for a fixed circuit.
pub struct Evaluator<'a> {
    circuit: &'a Circuit,
    hash: MmoHash,
    active: Vec<u128>,
}

impl<'a> Evaluator<'a> {
    pub fn new(circuit: &'a Circuit) -> Self {
        Self {
            circuit,
            hash: MmoHash::new(),
            active: vec![0u128; circuit.wire_count as usize],
        }
    }

    /// Runs the garbled circuit on active input labels and returns active
    /// output labels, `None` for constant outputs.
    pub fn run(
        &mut self,
        tables: &[[u8; 32]],
        p1_labels: &[u128],
        p2_labels: &[u128],
    ) -> Result<Vec<Option<u128>>, GcError> {
        let c = self.circuit;
        if tables.len() as u64 != c.and_count() {
            return Err(GcError::Protocol(format!(
                "expected {} gate tables, got {}",
                c.and_count(),
                tables.len()
            )));
        }
        if p1_labels.len() != c.p1_wires.len() || p2_labels.len() != c.p2_wires.len() {
            return Err(GcError::Protocol("input label count mismatch".into()));
        }
        for (w, label) in c.p1_wires.iter().zip(p1_labels) {
            self.active[*w as usize] = *label;
        }
        for (w, label) in c.p2_wires.iter().zip(p2_labels) {
            self.active[*w as usize] = *label;
        }
        let mut and_index = 0u64;
        for gate in &c.gates {
            match *gate {
                Gate::Xor { a, b, out } => {
                    self.active[out as usize] =
                        self.active[a as usize] ^ self.active[b as usize];
                }
                Gate::Not { a, out } => {
                    self.active[out as usize] = self.active[a as usize];
                }
                Gate::And { a, b, out } => {
                    let label_a = self.active[a as usize];
                    let label_b = self.active[b as usize];
                    let sa = label_a & 1 == 1;
                    let sb = label_b & 1 == 1;
                    let row = &tables[and_index as usize];
                    let table_g = u128::from_le_bytes(row[..16].try_into().expect("16 bytes"));
                    let table_e = u128::from_le_bytes(row[16..].try_into().expect("16 bytes"));
                    let (t_gen, t_eval) = half_gate_tweaks(and_index);
                    and_index += 1;

                    let w_g = self.hash.hash(t_gen, label_a) ^ if sa { table_g } else { 0 };
                    let w_e = self.hash.hash(t_eval, label_b)
                        ^ if sb { table_e ^ label_a } else { 0 };
                    self.active[out as usize] = w_g ^ w_e;
                }
            }
        }
        Ok(c.outputs
            .iter()
            .map(|bit| match *bit {
                Bit::Const(_) => None,
                Bit::W(w) => Some(self.active[w as usize]),
            })
            .collect())
    }
}

/// Decodes active output labels into cleartext bits using the per-output
/// decode bytes published by the garbler.
pub fn decode_outputs(
    decode: &[u8],
    active: &[Option<u128>],
) -> Result<Vec<bool>, GcError> {
    if decode.len() != active.len() {
        return Err(GcError::Protocol("output decode length mismatch".into()));
    }
    decode
        .iter()
        .zip(active)
        .map(|(&d, label)| match (d, label) {
            (2, None) => Ok(false),
            (3, None) => Ok(true),
            (0 | 1, Some(l)) => Ok((*l & 1) as u8 != d & 1),
            _ => Err(GcError::Protocol("inconsistent output decode byte".into())),
        })
        .collect()
}

fn parse_tables(payload: &[u8], expected: u64) -> Result<Vec<[u8; 32]>, GcError> {
    if payload.len() < 4 {
        return Err(GcError::Protocol("gate table message too short".into()));
    }
    let count = u32::from_be_bytes(payload[..4].try_into().expect("4 bytes")) as u64;
    if count != expected || payload.len() as u64 != 4 + count * 32 {
        return Err(GcError::Protocol(format!(
            "expected {expected} gate tables, peer sent {count}"
        )));
    }
    Ok(payload[4..]
        .chunks_exact(32)
        .map(|c| c.try_into().expect("32-byte table"))
        .collect())
}

/// Garbler side of one circuit execution.
///
/// Sends tables, the garbler's active input labels, the evaluator's labels
/// via oblivious transfer, and the output decode bytes. The garbler learns
/// nothing; outputs are revealed only to the evaluator.
pub fn run_garbler<C: Channel, R: RngCore + CryptoRng>(
    circuit: &Circuit,
    p1_bits: &[bool],
    ot: &mut ExtSender,
    channel: &mut C,
    rng: &mut R,
) -> Result<(), GcError> {
    if p1_bits.len() != circuit.p1_wires.len() {
        return Err(GcError::Protocol(format!(
            "garbler holds {} input bits, circuit expects {}",
            p1_bits.len(),
            circuit.p1_wires.len()
        )));
    }
    let garbled = garble(circuit, rng);

    let mut payload = Vec::with_capacity(4 + garbled.tables.len() * 32);
    payload.extend_from_slice(&(garbled.tables.len() as u32).to_be_bytes());
    for row in &garbled.tables {
        payload.extend_from_slice(row);
    }
    channel.send(msg::GC_TABLES, &payload)?;

    let mut labels = Vec::with_capacity(circuit.p1_wires.len() * 16);
    for (&w, &bit) in circuit.p1_wires.iter().zip(p1_bits) {
        labels.extend_from_slice(&garbled.active_label(w, bit).to_le_bytes());
    }
    channel.send(msg::GC_INPUT_LABELS, &labels)?;

    let pairs: Vec<([u8; 16], [u8; 16])> = circuit
        .p2_wires
        .iter()
        .map(|&w| garbled.label_pair(w))
        .collect();
    ot.send_ot(&pairs, channel)?;

    let decode: Vec<u8> = circuit
        .outputs
        .iter()
        .map(|&bit| garbled.decode_byte(bit))
        .collect();
    channel.send(msg::GC_OUTPUT_DECODE, &decode)?;
    Ok(())
}

/// Evaluator side of one circuit execution; returns the decoded output bits.
pub fn run_evaluator<C: Channel>(
    circuit: &Circuit,
    p2_bits: &[bool],
    ot: &mut ExtReceiver,
    channel: &mut C,
) -> Result<Vec<bool>, GcError> {
    if p2_bits.len() != circuit.p2_wires.len() {
        return Err(GcError::Protocol(format!(
            "evaluator holds {} input bits, circuit expects {}",
            p2_bits.len(),
            circuit.p2_wires.len()
        )));
    }
    let tables = parse_tables(&channel.recv(msg::GC_TABLES)?, circuit.and_count())?;

    let label_payload = channel.recv(msg::GC_INPUT_LABELS)?;
    if label_payload.len() != circuit.p1_wires.len() * 16 {
        return Err(GcError::Protocol("garbler input label size mismatch".into()));
    }
    let p1_labels: Vec<u128> = label_payload
        .chunks_exact(16)
        .map(|c| u128::from_le_bytes(c.try_into().expect("16-byte label")))
        .collect();

    let p2_labels: Vec<u128> = ot
        .recv_ot(p2_bits, channel)?
        .into_iter()
        .map(u128::from_le_bytes)
        .collect();

    let decode = channel.recv(msg::GC_OUTPUT_DECODE)?;
    if decode.len() != circuit.outputs.len() {
        return Err(GcError::Protocol("output decode size mismatch".into()));
    }

    let active = Evaluator::new(circuit).run(&tables, &p1_labels, &p2_labels)?;
    decode_outputs(&decode, &active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn garbled_outputs(
        circuit: &Circuit,
        garbled: &Garbled,
        evaluator: &mut Evaluator<'_>,
        p1_bits: &[bool],
        p2_bits: &[bool],
    ) -> Vec<bool> {
        let p1: Vec<u128> = circuit
            .p1_wires()
            .iter()
            .zip(p1_bits)
            .map(|(&w, &b)| garbled.active_label(w, b))
            .collect();
        let p2: Vec<u128> = circuit
            .p2_wires()
            .iter()
            .zip(p2_bits)
            .map(|(&w, &b)| garbled.active_label(w, b))
            .collect();
        let active = evaluator
            .run(garbled.tables(), &p1, &p2)
            .expect("evaluation succeeds");
        let decode: Vec<u8> = circuit
            .outputs()
            .iter()
            .map(|&bit| garbled.decode_byte(bit))
            .collect();
        decode_outputs(&decode, &active).expect("decode succeeds")
    }

    #[test]
    fn builder_folds_constants_away() {
        let mut b = CircuitBuilder::new();
        let x = b.input_p1(1)[0];
        assert_eq!(b.xor(Bit::Const(true), Bit::Const(true)), Bit::Const(false));
        assert_eq!(b.and(Bit::Const(false), x), Bit::Const(false));
        assert_eq!(b.and(Bit::Const(true), x), x);
        assert_eq!(b.xor(Bit::Const(false), x), x);
        assert_eq!(b.xor(x, x), Bit::Const(false));
        assert_eq!(b.and(x, x), x);
        let folded = b.mux(Bit::Const(true), x, Bit::Const(false));
        assert_eq!(folded, x);
        let c = b.finish(vec![x]);
        assert_eq!(c.and_count(), 0);
        assert_eq!(c.gates().len(), 0);
    }

    #[test]
    fn single_and_gate_garbles_all_four_inputs() {
        let mut b = CircuitBuilder::new();
        let x = b.input_p1(1)[0];
        let y = b.input_p2(1)[0];
        let z = b.and(x, y);
        let c = b.finish(vec![z]);
        assert_eq!(c.and_count(), 1);

        let mut rng = StdRng::seed_from_u64(11);
        let garbled = garble(&c, &mut rng);
        assert_eq!(garbled.tables().len(), 1);
        let mut ev = Evaluator::new(&c);
        for (a, b_in) in [(false, false), (false, true), (true, false), (true, true)] {
            let out = garbled_outputs(&c, &garbled, &mut ev, &[a], &[b_in]);
            assert_eq!(out, vec![a && b_in], "AND({a}, {b_in})");
        }
    }

    #[test]
    fn mixed_gate_circuit_matches_plain_evaluation() {
        let mut b = CircuitBuilder::new();
        let xs = b.input_p1(4);
        let ys = b.input_p2(4);
        let mut acc = Bit::Const(false);
        for (&x, &y) in xs.iter().zip(&ys) {
            let t = b.and(x, y);
            let nt = b.not(t);
            let o = b.or(nt, x);
            let m = b.mux(y, o, t);
            acc = b.xor(acc, m);
        }
        let c = b.finish(vec![acc]);

        let mut rng = StdRng::seed_from_u64(12);
        let garbled = garble(&c, &mut rng);
        let mut ev = Evaluator::new(&c);
        for case in 0u32..256 {
            let p1: Vec<bool> = (0..4).map(|i| case >> i & 1 == 1).collect();
            let p2: Vec<bool> = (0..4).map(|i| case >> (4 + i) & 1 == 1).collect();
            let plain = c.eval_plain(&p1, &p2);
            let garbled_out = garbled_outputs(&c, &garbled, &mut ev, &p1, &p2);
            assert_eq!(garbled_out, plain, "case {case}");
        }
    }

    #[test]
    fn eight_bit_adder_is_exhaustively_correct_when_garbled() {
        let mut b = CircuitBuilder::new();
        let xs = b.input_p1(8);
        let ys = b.input_p2(8);
        let sum = b.add_words(&xs, &ys);
        let c = b.finish(sum);
        assert_eq!(c.and_count(), 7);

        let mut rng = StdRng::seed_from_u64(13);
        let garbled = garble(&c, &mut rng);
        let mut ev = Evaluator::new(&c);
        for x in 0u64..256 {
            for y in 0u64..256 {
                let out = garbled_outputs(
                    &c,
                    &garbled,
                    &mut ev,
                    &value_to_bits(x, 8),
                    &value_to_bits(y, 8),
                );
                assert_eq!(bits_to_value(&out), (x + y) & 0xff, "{x} + {y}");
            }
        }
    }

    #[test]
    fn word_gadgets_match_integer_arithmetic() {
        let mut rng = StdRng::seed_from_u64(14);
        for _ in 0..200 {
            let x = rng.gen::<i32>();
            let y = rng.gen::<i32>();
            let mut b = CircuitBuilder::new();
            let xs = b.input_p1(32);
            let ys = b.input_p2(32);
            let diff = b.sub_words(&xs, &ys);
            let mag = b.abs_word(&xs);
            let ext = sext(&xs, 40);
            let shifted = sra(&ext, 3);
            let mut outs = diff;
            outs.extend(mag);
            outs.extend(shifted);
            let c = b.finish(outs);
            let out = c.eval_plain(
                &value_to_bits(x as u32 as u64, 32),
                &value_to_bits(y as u32 as u64, 32),
            );
            assert_eq!(
                bits_to_value(&out[..32]) as u32,
                (x.wrapping_sub(y)) as u32,
                "sub {x} {y}"
            );
            assert_eq!(
                bits_to_value(&out[32..64]) as u32,
                (i64::from(x)).unsigned_abs() as u32,
                "abs {x}"
            );
            assert_eq!(
                bits_to_value(&out[64..104]),
                ((i64::from(x) >> 3) as u64) & ((1u64 << 40) - 1),
                "sra {x}"
            );
        }
    }

    #[test]
    fn xor_only_circuits_produce_no_tables() {
        let mut b = CircuitBuilder::new();
        let xs = b.input_p1(16);
        let ys = b.input_p2(16);
        let outs: Vec<Bit> = {
            let mut acc = Vec::new();
            for (&x, &y) in xs.iter().zip(&ys) {
                acc.push(b.xor(x, y));
            }
            acc
        };
        let c = b.finish(outs);
        assert_eq!(c.and_count(), 0);

        let mut rng = StdRng::seed_from_u64(15);
        let garbled = garble(&c, &mut rng);
        assert!(garbled.tables().is_empty());
        let mut ev = Evaluator::new(&c);
        let x = 0xA5C3u64;
        let y = 0x0F77u64;
        let out = garbled_outputs(
            &c,
            &garbled,
            &mut ev,
            &value_to_bits(x, 16),
            &value_to_bits(y, 16),
        );
        assert_eq!(bits_to_value(&out), x ^ y);
    }

    #[test]
    fn constant_outputs_decode_without_labels() {
        let mut b = CircuitBuilder::new();
        let x = b.input_p1(1)[0];
        let y = b.input_p2(1)[0];
        let z = b.xor(x, y);
        let c = b.finish(vec![Bit::Const(true), z, Bit::Const(false)]);

        let mut rng = StdRng::seed_from_u64(16);
        let garbled = garble(&c, &mut rng);
        let mut ev = Evaluator::new(&c);
        let out = garbled_outputs(&c, &garbled, &mut ev, &[true], &[false]);
        assert_eq!(out, vec![true, true, false]);
    }

    #[test]
    fn stage_stats_partition_the_gate_counts() {
        let mut b = CircuitBuilder::new();
        let xs = b.input_p1(8);
        let ys = b.input_p2(8);
        b.stage("sum");
        let sum = b.add_words(&xs, &ys);
        b.stage("fold");
        let any = b.or_reduce(&sum);
        let c = b.finish(vec![any]);

        assert_eq!(c.stage_and_count("sum"), 7);
        assert_eq!(c.stage_and_count("fold"), 7);
        assert_eq!(c.and_count(), 14);
        let total_gates: u64 = c
            .stages()
            .iter()
            .map(|s| s.and_gates + s.xor_gates + s.not_gates)
            .sum();
        assert_eq!(total_gates, c.gates().len() as u64);
    }

    #[test]
    fn channel_session_transfers_tables_labels_and_decode() {
        use crate::channel::MemChannel;
        use crate::ot::{ExtReceiver, ExtSender, SecurityParams};
        use rand_chacha::ChaCha20Rng;

        let mut b = CircuitBuilder::new();
        let xs = b.input_p1(8);
        let ys = b.input_p2(8);
        let sum = b.add_words(&xs, &ys);
        let c = b.finish(sum);
        let and_count = c.and_count();

        let (mut ch1, mut ch2) = MemChannel::pair();
        let c2 = c.clone();
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha20Rng::seed_from_u64(77);
            let mut ot =
                ExtReceiver::setup(SecurityParams::default(), &mut ch2, &mut rng).expect("setup");
            run_evaluator(&c2, &value_to_bits(200, 8), &mut ot, &mut ch2).expect("evaluate")
        });
        let mut rng = ChaCha20Rng::seed_from_u64(78);
        let mut ot =
            ExtSender::setup(SecurityParams::default(), &mut ch1, &mut rng).expect("setup");
        let sent_before = ch1.bytes_sent();
        run_garbler(&c, &value_to_bits(57, 8), &mut ot, &mut ch1, &mut rng).expect("garble");
        let out = handle.join().expect("evaluator thread");
        assert_eq!(bits_to_value(&out), (57 + 200) & 0xff);

        // Table message: 4-byte count plus exactly two ciphertexts per AND.
        let gc_payload = 4 + 32 * and_count;
        let labels_payload = 8 * 16;
        let decode_payload = 8;
        let framed = ch1.bytes_sent() - sent_before;
        assert!(framed >= gc_payload + labels_payload + decode_payload);
    }

    #[test]
    fn session_rejects_mismatched_table_counts() {
        use crate::channel::MemChannel;
        use crate::ot::{ExtReceiver, ExtSender, SecurityParams};
        use rand_chacha::ChaCha20Rng;

        // Garbler garbles an AND circuit, evaluator expects XOR only.
        let mut b = CircuitBuilder::new();
        let x = b.input_p1(1)[0];
        let y = b.input_p2(1)[0];
        let z = b.and(x, y);
        let with_and = b.finish(vec![z]);

        let mut b = CircuitBuilder::new();
        let x = b.input_p1(1)[0];
        let y = b.input_p2(1)[0];
        let z = b.xor(x, y);
        let xor_only = b.finish(vec![z]);

        let (mut ch1, mut ch2) = MemChannel::pair();
        let handle = std::thread::spawn(move || {
            let mut rng = ChaCha20Rng::seed_from_u64(79);
            let mut ot =
                ExtReceiver::setup(SecurityParams::default(), &mut ch2, &mut rng).expect("setup");
            run_evaluator(&xor_only, &[true], &mut ot, &mut ch2)
        });
        let mut rng = ChaCha20Rng::seed_from_u64(80);
        let mut ot =
            ExtSender::setup(SecurityParams::default(), &mut ch1, &mut rng).expect("setup");
        let _ = run_garbler(&with_and, &[true], &mut ot, &mut ch1, &mut rng);
        let res = handle.join().expect("evaluator thread");
        assert!(matches!(res, Err(GcError::Protocol(_))));
    }
}
