//! Helpers shared by the command implementations.

use crate::data::{self, Dataset, TablePreset};
use crate::error::CliError;
use crate::model_config::ModelPlan;
use clap::Args;
use quotient_core::channel::Channel;
use quotient_core::fxp::{FixedTensor, PrecisionConfig};
use quotient_core::nn::{self, Model};
use quotient_core::rng::{derive_seed, AesPrg};
use quotient_core::secure::{reveal_arith, RevealTo, SecureModelShares, LayerShares, SHARE_RING};
use quotient_core::shares::{ring_mask, ArithShare, BoolShare, SharedTernaryMatrix};
use rand::RngCore;
use std::path::PathBuf;

/// Environment variable overriding every seed flag, for reproducible runs.
pub const SEED_ENV: &str = "QUOTIENT_SEED";

/// Resolves the effective public seed: the `QUOTIENT_SEED` environment
/// variable wins over the flag, which wins over the default.
pub fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            CliError::config(format!("{SEED_ENV}={text:?} is not an unsigned integer"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(flag.unwrap_or(default)),
        Err(e) => Err(CliError::config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Deterministic generator for a labeled purpose under a public seed.
pub fn seeded_rng(seed: u64, label: &[u8]) -> AesPrg {
    AesPrg::new(derive_seed(&seed.to_be_bytes(), label))
}

/// This party's secret randomness: seeded and per-party under
/// `QUOTIENT_SEED` or an explicit seed, otherwise from OS entropy.
pub fn secret_rng(seed: Option<u64>, party: u8) -> Result<AesPrg, CliError> {
    let label = [b"party-secrets-".as_slice(), &[b'0' + party]].concat();
    match std::env::var(SEED_ENV) {
        Ok(text) => {
            let s: u64 = text.trim().parse().map_err(|_| {
                CliError::config(format!("{SEED_ENV}={text:?} is not an unsigned integer"))
            })?;
            Ok(seeded_rng(s, &label))
        }
        Err(_) => match seed {
            Some(s) => Ok(seeded_rng(s, &label)),
            None => {
                let mut entropy = [0u8; 16];
                rand::rngs::OsRng.fill_bytes(&mut entropy);
                Ok(AesPrg::new(entropy))
            }
        },
    }
}

/// Dataset-selection flags shared by ingestion-driven commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input format: mnist-idx or csv.
    #[arg(long, value_parser = ["mnist-idx", "csv"])]
    pub format: String,

    /// IDX image file (mnist-idx).
    #[arg(long, required_if_eq("format", "mnist-idx"))]
    pub images: Option<PathBuf>,

    /// IDX label file (mnist-idx).
    #[arg(long, required_if_eq("format", "mnist-idx"))]
    pub labels: Option<PathBuf>,

    /// Held-out IDX image file (mnist-idx).
    #[arg(long)]
    pub test_images: Option<PathBuf>,

    /// Held-out IDX label file (mnist-idx).
    #[arg(long)]
    pub test_labels: Option<PathBuf>,

    /// Table file (csv).
    #[arg(long, required_if_eq("format", "csv"))]
    pub data: Option<PathBuf>,

    /// Held-out table file encoded under the training file's schema (csv).
    #[arg(long)]
    pub test_data: Option<PathBuf>,

    /// Table layout: thyroid, german, or generic (csv).
    #[arg(long, default_value = "generic")]
    pub preset: TablePreset,

    /// Zero-based label column; defaults to the last column (csv).
    #[arg(long)]
    pub label_col: Option<usize>,

    /// Split off the last N rows as the held-out set (csv, single file).
    #[arg(long)]
    pub holdout: Option<usize>,
}

/// Loads the training split and, when configured, the held-out split.
/// `classes` pins the one-hot width (usually the model's class count);
/// `None` derives it from the training labels.
pub fn load_datasets(
    args: &DataArgs,
    p_a: u8,
    classes: Option<usize>,
) -> Result<(Dataset, Option<Dataset>), CliError> {
    match args.format.as_str() {
        "mnist-idx" => {
            let images = args.images.as_ref().expect("clap enforces --images");
            let labels = args.labels.as_ref().expect("clap enforces --labels");
            let train = data::ingest_idx(images, labels, p_a, classes)?;
            let width = Some(train.classes);
            let test = match (&args.test_images, &args.test_labels) {
                (Some(ti), Some(tl)) => Some(data::ingest_idx(ti, tl, p_a, width)?),
                (None, None) => None,
                _ => {
                    return Err(CliError::config(
                        "--test-images and --test-labels must be given together",
                    ))
                }
            };
            Ok((train, test))
        }
        "csv" => {
            let path = args.data.as_ref().expect("clap enforces --data");
            let (train, schema) =
                data::ingest_table(path, args.preset, args.label_col, p_a, classes)?;
            let width = Some(train.classes);
            if let Some(test_path) = &args.test_data {
                let test = data::ingest_table_with_schema(test_path, &schema, width)?;
                return Ok((train, Some(test)));
            }
            if let Some(holdout) = args.holdout {
                let (train, test) = train.split_holdout(holdout)?;
                return Ok((train, Some(test)));
            }
            Ok((train, None))
        }
        other => Err(CliError::config(format!("unknown format {other:?}"))),
    }
}

/// Copies the selected rows of a `[n, width]` tensor into a batch tensor.
pub fn gather_tensor_rows(t: &FixedTensor, indices: &[usize]) -> FixedTensor {
    let width = t.shape[1];
    let mut data = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        data.extend_from_slice(&t.data[i * width..(i + 1) * width]);
    }
    FixedTensor { data, shape: vec![indices.len(), width], bits: t.bits, prec: t.prec }
}

const EVAL_CHUNK: usize = 512;

/// Fraction of samples whose top score lands on the labeled class.
pub fn model_accuracy(model: &Model, data: &Dataset) -> Result<f64, CliError> {
    let n = data.samples();
    let mut hits = 0usize;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let chunk = gather_tensor_rows(&data.inputs, &indices);
        let pass = nn::forward(model, &chunk)?;
        let picks = nn::argmax_rows(pass.activations.last().expect("forward output"));
        hits += picks
            .iter()
            .zip(&data.label_ids[start..end])
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(hits as f64 / n as f64)
}

/// Mean squared loss of the model over a dataset.
pub fn dataset_loss(model: &Model, data: &Dataset) -> Result<f64, CliError> {
    let n = data.samples();
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let inputs = gather_tensor_rows(&data.inputs, &indices);
        let labels = gather_tensor_rows(&data.labels, &indices);
        let pass = nn::forward(model, &inputs)?;
        let loss = nn::mse_loss(pass.activations.last().expect("forward output"), &labels);
        total += loss * (end - start) as f64;
    }
    Ok(total / n as f64)
}

/// Builds the model with weights drawn deterministically from the public
/// seed, so both parties (and the plaintext reference) start identically.
pub fn init_model_from_seed(
    plan: &ModelPlan,
    config: PrecisionConfig,
    seed: u64,
) -> Result<Model, CliError> {
    let mut model = plan.build(config)?;
    let mut rng = seeded_rng(seed, b"weight-init");
    model.init_random(&mut rng);
    Ok(model)
}

/// Canonical sharing of a public starting model: party 1 holds the values,
/// party 2 holds zeros. Valid shares; used when the initial weights are
/// public (they are drawn from the public session seed).
pub fn trivial_model_shares(model: &Model, party: u8) -> SecureModelShares {
    let mask = ring_mask(SHARE_RING);
    let weights = model
        .weights_stored
        .iter()
        .zip(&model.weights_ternary)
        .map(|(stored, ternary)| match (stored, ternary) {
            (Some(s), Some(t)) => {
                let values: Vec<u64> = if party == 1 {
                    s.data.iter().map(|&v| (v as i64 as u64) & mask).collect()
                } else {
                    vec![0u64; s.data.len()]
                };
                let bit = |want: i32, v: i32| party == 1 && v == want;
                let plus = BoolShare {
                    bits: t.data.iter().map(|&v| bit(1, v)).collect(),
                    party,
                };
                let minus = BoolShare {
                    bits: t.data.iter().map(|&v| bit(-1, v)).collect(),
                    party,
                };
                Some(LayerShares {
                    stored: ArithShare { values, sigma: SHARE_RING, party },
                    ternary: SharedTernaryMatrix {
                        plus,
                        minus,
                        rows: t.shape[0],
                        cols: t.shape[1],
                    },
                })
            }
            _ => None,
        })
        .collect();
    SecureModelShares {
        input_len: model.input_len,
        layers: model.layers.clone(),
        config: model.config.clone(),
        weights,
    }
}

/// Reveals the stored weights to both parties and rebuilds the plaintext
/// model. Used for opt-in accuracy evaluation and the final `--reveal`.
pub fn reveal_weights<C: Channel>(
    shares: &SecureModelShares,
    channel: &mut C,
) -> Result<Model, CliError> {
    let mut model = Model::new(shares.input_len, shares.layers.clone(), shares.config.clone())?;
    for (i, layer) in shares.weights.iter().enumerate() {
        let Some(layer) = layer else { continue };
        let values = reveal_arith(&layer.stored, RevealTo::Both, channel)?
            .expect("both parties receive");
        let w = model.weights_stored[i].as_mut().expect("plan matches shares");
        for (slot, v) in w.data.iter_mut().zip(values) {
            *slot = v as i32;
        }
    }
    model.refresh_ternary();
    Ok(model)
}
