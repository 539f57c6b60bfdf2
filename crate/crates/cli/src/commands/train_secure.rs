//! Two-party secure training over TCP.
//!
//! Both parties run this command with matching public flags (model, epochs,
//! batch, optimizer, seed, evaluation cadence) and their own share files.
//! Party 1 listens, party 2 connects. The run plan is cross-checked right
//! after the transport handshake so a flag mismatch aborts before any
//! protocol bytes move.

use super::common::{
    init_model_from_seed, resolve_seed, reveal_weights, secret_rng, trivial_model_shares,
};
use crate::data::{self, Dataset};
use crate::error::CliError;
use crate::metrics::{write_train_csv, TrainRow};
use crate::model_config::load_model_config;
use crate::net::{self, ChannelConfig, NetMode, TcpChannel};
use crate::share_files::{
    load_checkpoint, optimizer_from_name, optimizer_name, read_dataset_shares, save_checkpoint,
    save_plain_weights, CheckpointMeta,
};
use clap::Args;
use quotient_core::channel::{msg, Channel};
use quotient_core::fxp::PrecisionConfig;
use quotient_core::ot::SecurityParams;
use quotient_core::proto::Role;
use quotient_core::secure::{
    batch_indices, secure_train_step, OptimizerKind, SecureSession, SHARE_RING,
};
use quotient_core::shares::ArithShare;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// This endpoint's party: 1 or 2.
    #[arg(long)]
    pub role: u8,

    /// Address party 1 listens on and party 2 connects to.
    #[arg(long, default_value = "127.0.0.1:9876")]
    pub addr: String,

    /// Model description file; must be identical on both parties.
    #[arg(long)]
    pub model: PathBuf,

    /// Directory holding this party's dataset share files.
    #[arg(long)]
    pub shares_dir: PathBuf,

    /// Share-file prefix inside the directory.
    #[arg(long, default_value = "data")]
    pub prefix: String,

    /// Passes over the training set.
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,

    /// Mini-batch size.
    #[arg(long, default_value_t = 128)]
    pub batch: usize,

    /// Optimizer: sgd or amsgrad.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,

    /// Learning-rate exponent: the step scales by 2^eta.
    #[arg(long, default_value_t = 0)]
    pub eta: i8,

    /// Public seed for weight initialization and the batch schedule;
    /// party 1's value wins.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Link emulation: real, lan-sim, or wan-sim.
    #[arg(long, default_value = "real")]
    pub mode: NetMode,

    /// Write per-iteration metrics CSV here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// Checkpoint directory for this party's shares.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,

    /// Checkpoint every N iterations (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,

    /// Resume from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Reveal the trained weights to both parties and write them here.
    #[arg(long)]
    pub reveal: Option<PathBuf>,

    /// Reveal weights for evaluation every N iterations (0 = never).
    /// Must match on both parties.
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,

    /// Worker sessions. Only 1 is supported: gradient normalization spans
    /// the whole batch, so splitting a batch across channels would change
    /// the arithmetic.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,

    #[command(flatten)]
    pub eval: EvalArgs,
}

/// Optional plaintext evaluation data for reveal-based accuracy checks.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation format: mnist-idx or csv.
    #[arg(long, value_parser = ["mnist-idx", "csv"])]
    pub eval_format: Option<String>,

    /// IDX image file to evaluate on.
    #[arg(long)]
    pub eval_images: Option<PathBuf>,

    /// IDX label file to evaluate on.
    #[arg(long)]
    pub eval_labels: Option<PathBuf>,

    /// Table file to evaluate on.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,

    /// Table file whose schema encodes the evaluation table (usually the
    /// training file the shares were made from).
    #[arg(long)]
    pub eval_schema_from: Option<PathBuf>,

    /// Table layout for evaluation data.
    #[arg(long, default_value = "generic")]
    pub eval_preset: data::TablePreset,

    /// Zero-based label column for evaluation data.
    #[arg(long)]
    pub eval_label_col: Option<usize>,
}

impl EvalArgs {
    fn load(&self, p_a: u8, classes: usize) -> Result<Option<Dataset>, CliError> {
        match self.eval_format.as_deref() {
            None => Ok(None),
            Some("mnist-idx") => {
                let (Some(images), Some(labels)) = (&self.eval_images, &self.eval_labels) else {
                    return Err(CliError::config(
                        "--eval-format mnist-idx needs --eval-images and --eval-labels",
                    ));
                };
                Ok(Some(data::ingest_idx(images, labels, p_a, Some(classes))?))
            }
            Some("csv") => {
                let Some(path) = &self.eval_data else {
                    return Err(CliError::config("--eval-format csv needs --eval-data"));
                };
                let schema_path = self.eval_schema_from.as_ref().unwrap_or(path);
                let schema = data::learn_schema(
                    schema_path,
                    self.eval_preset,
                    self.eval_label_col,
                    p_a,
                )?;
                Ok(Some(data::ingest_table_with_schema(path, &schema, Some(classes))?))
            }
            Some(other) => Err(CliError::config(format!("unknown eval format {other:?}"))),
        }
    }
}

/// Public run parameters that must match between the parties. Exchanged as
/// a fixed 18-byte frame right after the transport handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RunPlan {
    epochs: u32,
    batch: u32,
    optimizer: OptimizerKind,
    eval_every: u32,
    reveal: bool,
    resume_from: u32,
}

impl RunPlan {
    const WIRE_BYTES: usize = 18;

    fn encode(&self) -> [u8; Self::WIRE_BYTES] {
        let mut out = [0u8; Self::WIRE_BYTES];
        out[0..4].copy_from_slice(&self.epochs.to_be_bytes());
        out[4..8].copy_from_slice(&self.batch.to_be_bytes());
        out[8] = match self.optimizer {
            OptimizerKind::Sgd => 0,
            OptimizerKind::AmsGrad => 1,
        };
        out[9..13].copy_from_slice(&self.eval_every.to_be_bytes());
        out[13] = u8::from(self.reveal);
        out[14..18].copy_from_slice(&self.resume_from.to_be_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() != Self::WIRE_BYTES {
            return Err(CliError::protocol(format!(
                "run plan frame of {} bytes, expected {}",
                bytes.len(),
                Self::WIRE_BYTES
            )));
        }
        Ok(RunPlan {
            epochs: u32::from_be_bytes(bytes[0..4].try_into().expect("4-byte slice")),
            batch: u32::from_be_bytes(bytes[4..8].try_into().expect("4-byte slice")),
            optimizer: if bytes[8] == 0 { OptimizerKind::Sgd } else { OptimizerKind::AmsGrad },
            eval_every: u32::from_be_bytes(bytes[9..13].try_into().expect("4-byte slice")),
            reveal: bytes[13] != 0,
            resume_from: u32::from_be_bytes(bytes[14..18].try_into().expect("4-byte slice")),
        })
    }
}

/// Cross-checks the run plan: party 1 proposes, party 2 must hold the same
/// plan and echoes it.
fn exchange_run_plan<C: Channel>(
    channel: &mut C,
    role: Role,
    mine: &RunPlan,
) -> Result<(), CliError> {
    let peer = match role {
        Role::Party1 => {
            channel.send(msg::HANDSHAKE, &mine.encode())?;
            RunPlan::decode(&channel.recv(msg::HANDSHAKE)?)?
        }
        Role::Party2 => {
            let peer = RunPlan::decode(&channel.recv(msg::HANDSHAKE)?)?;
            channel.send(msg::HANDSHAKE, &mine.encode())?;
            peer
        }
    };
    if peer != *mine {
        return Err(CliError::protocol(format!(
            "run plans differ: peer {peer:?}, local {mine:?}; \
             epochs, batch, optimizer, eval cadence, reveal, and resume point must match"
        )));
    }
    Ok(())
}

pub fn parse_role(role: u8) -> Result<Role, CliError> {
    match role {
        1 => Ok(Role::Party1),
        2 => Ok(Role::Party2),
        other => Err(CliError::config(format!("--role must be 1 or 2, got {other}"))),
    }
}

pub fn open_channel(role: Role, addr: &str, mode: NetMode) -> Result<TcpChannel, CliError> {
    let mut channel = match role {
        Role::Party1 => net::listen(addr)?,
        Role::Party2 => net::connect(addr)?,
    };
    channel.set_config(ChannelConfig::new(mode));
    Ok(channel)
}

fn gather_share_rows(share: &ArithShare, indices: &[usize], row_len: usize) -> ArithShare {
    let mut values = Vec::with_capacity(indices.len() * row_len);
    for &idx in indices {
        values.extend_from_slice(&share.values[idx * row_len..(idx + 1) * row_len]);
    }
    ArithShare { values, sigma: share.sigma, party: share.party }
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let role = parse_role(args.role)?;
    let optimizer = optimizer_from_name(&args.optimizer)?;
    if args.batch == 0 {
        return Err(CliError::config("batch size must be positive"));
    }
    if args.workers != 1 {
        return Err(CliError::config(
            "only --workers 1 is supported: gradient normalization spans the whole \
             batch, so batch splitting would change the trained values",
        ));
    }
    let seed = resolve_seed(args.seed, 1)?;
    let plan = load_model_config(&args.model.display().to_string())?;
    let config = PrecisionConfig { eta: args.eta, ..PrecisionConfig::default() };
    let party = role.party_index();
    let dataset = read_dataset_shares(&args.shares_dir, &args.prefix, party)?;
    if dataset.input_len != plan.input_len {
        return Err(CliError::config(format!(
            "share rows carry {} features, the model expects {}",
            dataset.input_len, plan.input_len
        )));
    }
    let eval_data = args.eval.load(config.p_a, plan.classes)?;
    let params = SecurityParams::default();

    let mut channel = open_channel(role, &args.addr, args.mode)?;
    let agreed_seed =
        net::net_handshake(&mut channel, role, &params, SHARE_RING, &config, seed)?;

    // Resume state is loaded before the run-plan exchange so the resume
    // point itself is cross-checked between the parties.
    let template = {
        let mut zero = plan.build(config.clone())?;
        zero.config.eta = args.eta;
        trivial_model_shares(&zero, party)
    };
    let (mut model, mut state, skip) = match &args.resume {
        Some(dir) => {
            let (model, state, meta) = load_checkpoint(dir, &template)?;
            if meta.party != party {
                return Err(CliError::config(format!(
                    "checkpoint in {} belongs to party {}, this endpoint is party {party}",
                    dir.display(),
                    meta.party
                )));
            }
            if meta.optimizer != optimizer {
                return Err(CliError::config(format!(
                    "checkpoint was written under {}, the run requests {}",
                    optimizer_name(meta.optimizer),
                    optimizer_name(optimizer)
                )));
            }
            if meta.batch_seed != agreed_seed {
                return Err(CliError::config(format!(
                    "checkpoint batch seed {} does not match the session seed {agreed_seed}",
                    meta.batch_seed
                )));
            }
            (model, state, meta.iteration)
        }
        None => {
            let init = init_model_from_seed(&plan, config.clone(), agreed_seed)?;
            let shares = trivial_model_shares(&init, party);
            let state = quotient_core::secure::SecureOptimizerState::zeros(&shares, party);
            (shares, state, 0)
        }
    };

    let run_plan = RunPlan {
        epochs: args.epochs as u32,
        batch: args.batch as u32,
        optimizer,
        eval_every: args.eval_every as u32,
        reveal: args.reveal.is_some(),
        resume_from: skip as u32,
    };
    exchange_run_plan(&mut channel, role, &run_plan)?;

    let mut rng = secret_rng(args.seed, party)?;
    let mut session = SecureSession::establish(
        role,
        params,
        config.clone(),
        agreed_seed,
        &mut channel,
        &mut rng,
    )?;

    let total_iters: usize = (0..args.epochs)
        .map(|e| batch_indices(agreed_seed, e as u64, dataset.samples, args.batch).len())
        .sum();
    if skip > total_iters {
        return Err(CliError::config(format!(
            "checkpoint is at iteration {skip}, the requested run has only {total_iters}"
        )));
    }

    let mut rows: Vec<TrainRow> = Vec::new();
    let mut global = 0usize;
    let run_started = Instant::now();

    for epoch in 0..args.epochs {
        let schedule = batch_indices(agreed_seed, epoch as u64, dataset.samples, args.batch);
        for (iter, indices) in schedule.iter().enumerate() {
            if global < skip {
                global += 1;
                continue;
            }
            let started = Instant::now();
            let sent0 = channel.bytes_sent();
            let a0 = gather_share_rows(&dataset.inputs, indices, dataset.input_len);
            let y = gather_share_rows(&dataset.labels, indices, dataset.label_len);
            secure_train_step(
                &mut session,
                &mut model,
                &mut state,
                &a0,
                &y,
                indices.len(),
                optimizer,
                &mut channel,
                &mut rng,
            )?;
            global += 1;

            let at_eval = args.eval_every > 0 && global.is_multiple_of(args.eval_every);
            let (mut loss, mut acc) = (None, None);
            if at_eval {
                let revealed = reveal_weights(&model, &mut channel)?;
                if let Some(eval) = &eval_data {
                    loss = Some(super::common::dataset_loss(&revealed, eval)?);
                    acc = Some(super::common::model_accuracy(&revealed, eval)?);
                    println!(
                        "epoch {epoch} iter {iter} eval loss {:.6} accuracy {:.4}",
                        loss.expect("just set"),
                        acc.expect("just set")
                    );
                }
            }
            rows.push(TrainRow {
                epoch,
                iter,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                bytes: channel.bytes_sent() - sent0,
                train_loss: loss,
                test_acc: acc,
            });

            let at_checkpoint = args.checkpoint_every > 0 && global.is_multiple_of(args.checkpoint_every);
            if at_checkpoint {
                if let Some(dir) = &args.checkpoint_dir {
                    save_checkpoint(
                        dir,
                        &model,
                        &state,
                        &CheckpointMeta {
                            iteration: global,
                            optimizer,
                            batch_seed: agreed_seed,
                            party,
                        },
                    )?;
                }
            }
        }
    }

    if let Some(dir) = &args.checkpoint_dir {
        save_checkpoint(
            dir,
            &model,
            &state,
            &CheckpointMeta { iteration: global, optimizer, batch_seed: agreed_seed, party },
        )?;
    }
    if let Some(dir) = &args.reveal {
        let revealed = reveal_weights(&model, &mut channel)?;
        save_plain_weights(dir, &revealed)?;
    }
    if let Some(path) = &args.metrics {
        write_train_csv(path, &rows)?;
    }
    println!(
        "party {party}: {} iterations in {:.1}s, {} bytes sent, {} bytes received, {} round trips",
        global.saturating_sub(skip),
        run_started.elapsed().as_secs_f64(),
        channel.bytes_sent(),
        channel.bytes_received(),
        channel.round_trips()
    );
    Ok(())
}
