//! Single-machine fixed-point training on plaintext data.
//!
//! Runs the same fixed-point pipeline as the secure path, including the
//! shared batch schedule, so a secure run over shares of the same data and
//! seed produces the identical weight trajectory.

use super::common::{
    self, gather_tensor_rows, load_datasets, model_accuracy, resolve_seed, DataArgs,
};
use crate::error::CliError;
use crate::metrics::{write_train_csv, TrainRow};
use crate::model_config::load_model_config;
use crate::share_files::{optimizer_from_name, save_plain_weights};
use clap::Args;
use quotient_core::fxp::PrecisionConfig;
use quotient_core::nn::{self, OptimizerState};
use quotient_core::secure::{batch_indices, OptimizerKind};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Args)]
pub struct PlaintextTrainArgs {
    /// Model description file.
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

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

    /// Public seed for weight initialization and the batch schedule.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Evaluate held-out accuracy every N iterations (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,

    /// Write per-iteration metrics CSV here.
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// Write the final stored weights into this directory.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
}

pub fn run(args: &PlaintextTrainArgs) -> Result<(), CliError> {
    let optimizer = optimizer_from_name(&args.optimizer)?;
    if args.batch == 0 {
        return Err(CliError::config("batch size must be positive"));
    }
    let seed = resolve_seed(args.seed, 1)?;
    let plan = load_model_config(&args.model.display().to_string())?;
    let config = PrecisionConfig { eta: args.eta, ..PrecisionConfig::default() };
    let (train, test) = load_datasets(&args.data, config.p_a, Some(plan.classes))?;
    if train.features() != plan.input_len {
        return Err(CliError::config(format!(
            "dataset rows carry {} features, the model expects {}",
            train.features(),
            plan.input_len
        )));
    }

    let mut model = common::init_model_from_seed(&plan, config, seed)?;
    let mut state = OptimizerState::zeros(&model);
    let mut rows: Vec<TrainRow> = Vec::new();
    let mut global = 0usize;
    let total_iters: usize = (0..args.epochs)
        .map(|e| batch_indices(seed, e as u64, train.samples(), args.batch).len())
        .sum();

    for epoch in 0..args.epochs {
        let schedule = batch_indices(seed, epoch as u64, train.samples(), args.batch);
        for (iter, indices) in schedule.iter().enumerate() {
            let started = Instant::now();
            let inputs = gather_tensor_rows(&train.inputs, indices);
            let labels = gather_tensor_rows(&train.labels, indices);
            let pass = nn::forward(&model, &inputs)?;
            let scores = pass.activations.last().expect("forward output");
            let loss = nn::mse_loss(scores, &labels);
            let e_last = nn::mse_loss_grad(scores, &labels);
            let grads = nn::backward(&model, &pass, &e_last)?;
            match optimizer {
                OptimizerKind::Sgd => nn::sgd_step(&mut model, &grads)?,
                OptimizerKind::AmsGrad => nn::amsgrad_step(&mut model, &mut state, &grads)?,
            }
            global += 1;

            let at_eval = args.eval_every > 0 && global.is_multiple_of(args.eval_every);
            let at_end = global == total_iters;
            let test_acc = match &test {
                Some(t) if at_eval || at_end => Some(model_accuracy(&model, t)?),
                _ => None,
            };
            if let Some(acc) = test_acc {
                println!(
                    "epoch {epoch} iter {iter} loss {loss:.6} test accuracy {acc:.4}"
                );
            }
            rows.push(TrainRow {
                epoch,
                iter,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
                bytes: 0,
                train_loss: Some(loss),
                test_acc,
            });
        }
    }

    if let Some(path) = &args.metrics {
        write_train_csv(path, &rows)?;
    }
    if let Some(dir) = &args.save_weights {
        save_plain_weights(dir, &model)?;
    }
    let last_loss = rows.last().and_then(|r| r.train_loss).unwrap_or(f64::NAN);
    println!("trained {global} iterations, final batch loss {last_loss:.6}");
    Ok(())
}
