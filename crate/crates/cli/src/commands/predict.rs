//! Two-party secure prediction over TCP.
//!
//! Loads this party's model shares from a training checkpoint and input
//! shares from a QSHR file, runs the forward pass in batches, and reveals
//! the class scores to the configured recipients.

use super::common::{resolve_seed, secret_rng, trivial_model_shares};
use super::train_secure::{open_channel, parse_role};
use crate::error::CliError;
use crate::model_config::load_model_config;
use crate::net::{self, NetMode};
use crate::share_files::{load_checkpoint, read_share};
use clap::Args;
use quotient_core::channel::{msg, Channel};
use quotient_core::fxp::{FixedTensor, PrecisionConfig};
use quotient_core::nn::argmax_rows;
use quotient_core::ot::SecurityParams;
use quotient_core::proto::Role;
use quotient_core::secure::{secure_predict, RevealTo, SecureSession, SHARE_RING};
use quotient_core::shares::ArithShare;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

/// Reveal-target flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RevealFlag(pub RevealTo);

impl FromStr for RevealFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(RevealFlag(RevealTo::Party1)),
            "2" => Ok(RevealFlag(RevealTo::Party2)),
            "both" => Ok(RevealFlag(RevealTo::Both)),
            "none" => Ok(RevealFlag(RevealTo::Neither)),
            other => Err(format!("unknown reveal target {other:?}, expected 1, 2, both, or none")),
        }
    }
}

fn reveal_code(r: RevealTo) -> u8 {
    match r {
        RevealTo::Party1 => 1,
        RevealTo::Party2 => 2,
        RevealTo::Both => 3,
        RevealTo::Neither => 0,
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// This endpoint's party: 1 or 2.
    #[arg(long)]
    pub role: u8,

    /// Address party 1 listens on and party 2 connects to.
    #[arg(long, default_value = "127.0.0.1:9876")]
    pub addr: String,

    /// Model description file; must be identical on both parties.
    #[arg(long)]
    pub model: PathBuf,

    /// Checkpoint directory holding this party's weight shares.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// QSHR file with this party's input shares, shape [samples, features].
    #[arg(long)]
    pub input_shares: PathBuf,

    /// Who learns the scores: 1, 2, both, or none.
    #[arg(long, default_value = "both")]
    pub reveal: RevealFlag,

    /// Samples per forward pass.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,

    /// Link emulation: real, lan-sim, or wan-sim.
    #[arg(long, default_value = "real")]
    pub mode: NetMode,

    /// Public session seed; party 1's value wins.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Write predictions (index,class) here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &PredictArgs) -> Result<(), CliError> {
    let role = parse_role(args.role)?;
    if args.batch == 0 {
        return Err(CliError::config("batch size must be positive"));
    }
    let seed = resolve_seed(args.seed, 1)?;
    let plan = load_model_config(&args.model.display().to_string())?;
    let config = PrecisionConfig::default();
    let party = role.party_index();
    let params = SecurityParams::default();

    let (inputs, shape) = read_share(&args.input_shares, party)?;
    if shape.len() != 2 || shape[1] != plan.input_len {
        return Err(CliError::config(format!(
            "input shares of shape {shape:?} do not feed a model expecting {} features",
            plan.input_len
        )));
    }
    if inputs.sigma != SHARE_RING {
        return Err(CliError::config(format!(
            "input shares must live in the {SHARE_RING}-bit ring"
        )));
    }
    let samples = shape[0];

    let template = trivial_model_shares(&plan.build(config.clone())?, party);
    let (model, _state, _meta) = load_checkpoint(&args.checkpoint, &template)?;

    let mut channel = open_channel(role, &args.addr, args.mode)?;
    net::net_handshake(&mut channel, role, &params, SHARE_RING, &config, seed)?;

    // Cross-check the public prediction plan before any shares move.
    let mut plan_frame = [0u8; 9];
    plan_frame[0..4].copy_from_slice(&(samples as u32).to_be_bytes());
    plan_frame[4..8].copy_from_slice(&(args.batch as u32).to_be_bytes());
    plan_frame[8] = reveal_code(args.reveal.0);
    let peer_frame = match role {
        Role::Party1 => {
            channel.send(msg::HANDSHAKE, &plan_frame)?;
            channel.recv(msg::HANDSHAKE)?
        }
        Role::Party2 => {
            let peer = channel.recv(msg::HANDSHAKE)?;
            channel.send(msg::HANDSHAKE, &plan_frame)?;
            peer
        }
    };
    if peer_frame != plan_frame {
        return Err(CliError::protocol(
            "prediction plans differ: sample count, batch, and reveal target must match"
                .to_string(),
        ));
    }

    let mut rng = secret_rng(args.seed, party)?;
    let mut session =
        SecureSession::establish(role, params, config, seed, &mut channel, &mut rng)?;

    let i_receive = matches!(
        (args.reveal.0, party),
        (RevealTo::Both, _) | (RevealTo::Party1, 1) | (RevealTo::Party2, 2)
    );
    let mut lines = vec![String::from("index,class")];
    for start in (0..samples).step_by(args.batch) {
        let end = (start + args.batch).min(samples);
        let a0 = ArithShare {
            values: inputs.values[start * plan.input_len..end * plan.input_len].to_vec(),
            sigma: inputs.sigma,
            party,
        };
        let (_scores, revealed) = secure_predict(
            &mut session,
            &model,
            &a0,
            end - start,
            args.reveal.0,
            &mut channel,
            &mut rng,
        )?;
        if let Some(values) = revealed {
            let tensor = FixedTensor {
                data: values.iter().map(|&v| v as i32).collect(),
                shape: vec![end - start, plan.classes],
                bits: 32,
                prec: config_prec(),
            };
            for (row, class) in argmax_rows(&tensor).into_iter().enumerate() {
                lines.push(format!("{},{class}", start + row));
            }
        }
    }

    if i_receive {
        let text = lines.join("\n") + "\n";
        match &args.out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| CliError::io(path.display().to_string(), e))?,
            None => {
                std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::io("stdout", e))?;
            }
        }
    } else {
        println!("party {party}: {samples} predictions computed, scores not revealed here");
    }
    Ok(())
}

fn config_prec() -> u8 {
    PrecisionConfig::default().p_a
}
