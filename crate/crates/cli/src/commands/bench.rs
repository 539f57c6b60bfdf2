//! Micro-benchmarks over a loopback TCP pair.
//!
//! Both parties run in this process on separate threads, so one command
//! measures a full two-party exchange. The timed window covers only the
//! operation: session setup and one warmup run happen first. Reported
//! traffic is party 1's, averaged per iteration.

use super::common::{resolve_seed, seeded_rng, trivial_model_shares};
use crate::error::CliError;
use crate::metrics::{write_bench_csv, BenchRow};
use crate::net::{ChannelConfig, NetMode, TcpChannel};
use quotient_core::channel::Channel;
use quotient_core::fxp::PrecisionConfig;
use quotient_core::gc::{self, blocks::pack_words, blocks::unpack_words, CircuitBuilder};
use quotient_core::nn::{default_alpha, LayerKind, LayerSpec, Model};
use quotient_core::ot::SecurityParams;
use quotient_core::proto::{
    componentwise_mult_cot, inner_product_cot, ternary_matvec, ProtoSession, Role,
};
use quotient_core::rng::AesPrg;
use quotient_core::secure::{
    secure_backward, secure_forward, secure_forward_layer, secure_loss_grad, SecureSession,
    SHARE_RING,
};
use quotient_core::shares::{ring_mask, ArithShare, BoolShare, SharedTernaryMatrix};
use clap::Args;
use rand::RngCore;
use std::net::TcpListener;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

/// Benchmarked operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOp {
    /// Component-wise product of a shared bit vector and a shared integer
    /// vector over correlated transfers.
    Cmul,
    /// The same product evaluated inside a garbled circuit, the baseline
    /// the transfer-based form is compared against.
    CmulGc,
    /// Ternary matrix-vector product, 128 rows by `size` columns.
    Matvec,
    /// One fully connected layer forward, `size` inputs to 128 outputs.
    Forward,
    /// One fully connected layer backward under the same shape.
    Backward,
    /// Correlated-transfer inner product, the raw payload reference.
    Cot,
}

impl BenchOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Cmul => "cmul",
            BenchOp::CmulGc => "cmul-gc",
            BenchOp::Matvec => "matvec",
            BenchOp::Forward => "forward",
            BenchOp::Backward => "backward",
            BenchOp::Cot => "cot",
        }
    }
}

impl FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmul" => Ok(BenchOp::Cmul),
            "cmul-gc" => Ok(BenchOp::CmulGc),
            "matvec" => Ok(BenchOp::Matvec),
            "forward" => Ok(BenchOp::Forward),
            "backward" => Ok(BenchOp::Backward),
            "cot" => Ok(BenchOp::Cot),
            other => Err(format!(
                "unknown op {other:?}, expected cmul, cmul-gc, matvec, forward, backward, or cot"
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Operation: cmul, cmul-gc, matvec, forward, backward, or cot.
    #[arg(long)]
    pub op: BenchOp,

    /// Problem size: vector length (cmul, cot, matvec) or layer input
    /// width (forward, backward).
    #[arg(long)]
    pub size: usize,

    /// Link emulation: real, lan-sim, or wan-sim.
    #[arg(long, default_value = "real")]
    pub mode: NetMode,

    /// Timed repetitions after one warmup run.
    #[arg(long, default_value_t = 3)]
    pub iters: usize,

    /// Seed for the benchmark inputs.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Append-style metrics CSV (one row per invocation).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

fn rand_bits(n: usize, rng: &mut impl RngCore) -> Vec<bool> {
    (0..n).map(|_| rng.next_u32() & 1 == 1).collect()
}

fn rand_words(n: usize, rng: &mut impl RngCore) -> Vec<u64> {
    let mask = ring_mask(SHARE_RING);
    (0..n).map(|_| rng.next_u64() & mask).collect()
}

/// Component-wise product of shared `w` bits and shared `a` words inside
/// one garbled circuit: reconstruct, gate, and re-share under fresh masks.
/// Same share contract as the transfer-based form; the benchmark baseline.
pub fn gc_componentwise_mult<C: Channel>(
    w: &BoolShare,
    a: &ArithShare,
    session: &mut ProtoSession,
    channel: &mut C,
    rng: &mut (impl RngCore + rand::CryptoRng),
) -> Result<ArithShare, CliError> {
    let n = w.len();
    let sigma = usize::from(a.sigma);
    let mask = ring_mask(a.sigma);
    let party = session.party_index();

    let mut b = CircuitBuilder::new();
    b.stage("reconstruct");
    let a_own = b.input_p1(n * sigma);
    let w_own = b.input_p1(n);
    let masks = b.input_p1(n * sigma);
    let a_peer = b.input_p2(n * sigma);
    let w_peer = b.input_p2(n);
    let mut outputs = Vec::with_capacity(n * sigma);
    for i in 0..n {
        let lhs = &a_own[i * sigma..(i + 1) * sigma];
        let rhs = &a_peer[i * sigma..(i + 1) * sigma];
        let value = b.add_words(lhs, rhs);
        let bit = b.xor(w_own[i], w_peer[i]);
        b.stage("gate");
        let gated: Vec<gc::Bit> = value.iter().map(|&v| b.and(bit, v)).collect();
        b.stage("mask");
        let shared = b.sub_words(&gated, &masks[i * sigma..(i + 1) * sigma]);
        outputs.extend(shared);
        b.stage("reconstruct");
    }
    let circuit = b.finish(outputs);

    let (ot_send, ot_recv) = session.transfer_endpoints();
    if party == 1 {
        let mask_words = rand_words(n, rng);
        let mut bits = pack_words(&a.values, sigma);
        bits.extend(w.bits.iter().copied());
        bits.extend(pack_words(&mask_words, sigma));
        gc::run_garbler(&circuit, &bits, ot_send, channel, rng)
            .map_err(|e| CliError::protocol(e.to_string()))?;
        Ok(ArithShare { values: mask_words, sigma: a.sigma, party })
    } else {
        let mut bits = pack_words(&a.values, sigma);
        bits.extend(w.bits.iter().copied());
        let out = gc::run_evaluator(&circuit, &bits, ot_recv, channel)
            .map_err(|e| CliError::protocol(e.to_string()))?;
        let values: Vec<u64> = unpack_words(&out, sigma)
            .into_iter()
            .map(|v| v & mask)
            .collect();
        Ok(ArithShare { values, sigma: a.sigma, party })
    }
}

/// Per-party result of one benchmark run.
#[derive(Debug, Clone, Copy)]
pub struct OpStats {
    pub wall_ms: f64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub rounds: u64,
}

type TimedOp = Box<dyn FnMut(&mut TcpChannel, &mut AesPrg) -> Result<(), CliError>>;

fn fc_bench_model(size: usize, seed: u64) -> Result<Model, CliError> {
    let kind = LayerKind::FullyConnected { input: size, output: 128 };
    let spec = LayerSpec { alpha: default_alpha(kind.fan_in()), kind };
    let mut model = Model::new(size, vec![spec], PrecisionConfig::default())?;
    let mut rng = seeded_rng(seed, b"bench-weights");
    model.init_random(&mut rng);
    Ok(model)
}

/// Runs `iters` timed repetitions of the op on one party's endpoint.
pub fn run_party(
    role: Role,
    op: BenchOp,
    size: usize,
    iters: usize,
    seed: u64,
    channel: &mut TcpChannel,
) -> Result<OpStats, CliError> {
    let party = role.party_index();
    let params = SecurityParams::default();
    let mut rng = seeded_rng(seed, &[b'b', b'e', b'n', b'c', b'h', b'0' + party]);
    let mut input_rng = AesPrg::new([party + 11; 16]);

    let mut timed: TimedOp = match op {
        BenchOp::Cot | BenchOp::Cmul | BenchOp::CmulGc | BenchOp::Matvec => {
            let mut session = ProtoSession::establish(role, params, channel, &mut rng)?;
            let w = BoolShare { bits: rand_bits(size, &mut input_rng), party };
            let a = ArithShare { values: rand_words(size, &mut input_rng), sigma: SHARE_RING, party };
            match op {
                BenchOp::Cot => Box::new(move |ch, _| {
                    inner_product_cot(&w, &a, &mut session, ch)?;
                    Ok(())
                }),
                BenchOp::Cmul => Box::new(move |ch, _| {
                    componentwise_mult_cot(&w, &a, &mut session, ch)?;
                    Ok(())
                }),
                BenchOp::CmulGc => Box::new(move |ch, rng| {
                    gc_componentwise_mult(&w, &a, &mut session, ch, rng)?;
                    Ok(())
                }),
                BenchOp::Matvec => {
                    let matrix = SharedTernaryMatrix {
                        plus: BoolShare { bits: rand_bits(128 * size, &mut input_rng), party },
                        minus: BoolShare { bits: rand_bits(128 * size, &mut input_rng), party },
                        rows: 128,
                        cols: size,
                    };
                    Box::new(move |ch, _| {
                        ternary_matvec(&matrix, &a, &mut session, ch)?;
                        Ok(())
                    })
                }
                _ => unreachable!("outer match covers the proto ops"),
            }
        }
        BenchOp::Forward | BenchOp::Backward => {
            let config = PrecisionConfig::default();
            let mut session =
                SecureSession::establish(role, params, config, seed, channel, &mut rng)?;
            let model = trivial_model_shares(&fc_bench_model(size, seed)?, party);
            let a0 = ArithShare { values: rand_words(size, &mut input_rng), sigma: SHARE_RING, party };
            match op {
                BenchOp::Forward => Box::new(move |ch, rng| {
                    secure_forward_layer(&mut session, &model, 0, &a0, 1, ch, rng)?;
                    Ok(())
                }),
                BenchOp::Backward => Box::new(move |ch, rng| {
                    let pass = secure_forward(&mut session, &model, &a0, 1, ch, rng)?;
                    let scores = pass.activations.last().expect("forward output");
                    let e_last = secure_loss_grad(scores, scores)?;
                    let e_last = ArithShare {
                        values: rand_words(e_last.len(), rng),
                        sigma: SHARE_RING,
                        party,
                    };
                    secure_backward(&mut session, &model, &pass, &e_last, ch, rng)?;
                    Ok(())
                }),
                _ => unreachable!("outer match covers the secure ops"),
            }
        }
    };

    timed(channel, &mut rng)?;
    let start_readings = channel.readings();
    let started = Instant::now();
    for _ in 0..iters {
        timed(channel, &mut rng)?;
    }
    let wall = started.elapsed();
    let end = channel.readings();
    let per = |v: u64| v / iters as u64;
    Ok(OpStats {
        wall_ms: wall.as_secs_f64() * 1e3 / iters as f64,
        bytes_sent: per(end.bytes_sent - start_readings.bytes_sent),
        bytes_recv: per(end.bytes_received - start_readings.bytes_received),
        rounds: per(end.round_trips - start_readings.round_trips),
    })
}

/// Runs both parties over loopback TCP and returns party 1's stats.
pub fn run_loopback(
    op: BenchOp,
    size: usize,
    mode: NetMode,
    iters: usize,
    seed: u64,
) -> Result<OpStats, CliError> {
    let listener = TcpListener::bind("127.0.0.1:0")
        .map_err(|e| CliError::protocol(format!("bind failed: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::protocol(format!("local_addr failed: {e}")))?;

    std::thread::scope(|scope| {
        let peer = scope.spawn(move || -> Result<(), CliError> {
            let mut channel = crate::net::connect(addr)?;
            channel.set_config(ChannelConfig::new(mode));
            run_party(Role::Party2, op, size, iters, seed, &mut channel)?;
            Ok(())
        });
        let (stream, _) = listener
            .accept()
            .map_err(|e| CliError::protocol(format!("accept failed: {e}")))?;
        let mut channel = TcpChannel::from_stream(stream)?;
        channel.set_config(ChannelConfig::new(mode));
        let stats = run_party(Role::Party1, op, size, iters, seed, &mut channel);
        let peer_result = peer.join().expect("benchmark peer thread");
        peer_result?;
        stats
    })
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    if args.size == 0 || args.iters == 0 {
        return Err(CliError::config("size and iters must be positive"));
    }
    let seed = resolve_seed(args.seed, 1)?;
    let stats = run_loopback(args.op, args.size, args.mode, args.iters, seed)?;
    let row = BenchRow {
        op: args.op.as_str().to_string(),
        size: args.size,
        mode: args.mode.as_str().to_string(),
        wall_ms: stats.wall_ms,
        bytes_sent: stats.bytes_sent,
        bytes_recv: stats.bytes_recv,
        rounds: stats.rounds,
    };
    println!("{}", crate::metrics::BENCH_HEADER);
    println!("{}", row.to_csv_line());
    if let Some(path) = &args.metrics {
        write_bench_csv(path, &[row])?;
    }
    Ok(())
}
