//! Trusted-dealer share generation for datasets.
//!
//! Splits an ingested dataset into two additive share halves and writes one
//! QSHR file pair per party. Dealer mode is a test and benchmark
//! convenience: in the deployed setting each data owner shares its own
//! rows toward the two servers, which never see plaintext.

use super::common::{load_datasets, resolve_seed, seeded_rng, DataArgs};
use crate::data::Dataset;
use crate::error::CliError;
use crate::share_files::write_dataset_shares;
use clap::Args;
use quotient_core::secure::share_dataset;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct ShareDataArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// One-hot label width; defaults to the classes present in the data.
    #[arg(long)]
    pub classes: Option<usize>,

    /// Directory receiving the share files.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Share-file prefix; a held-out split gets "<prefix>-test".
    #[arg(long, default_value = "data")]
    pub prefix: String,

    /// Dealer seed for the share masks.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn deal(dataset: &Dataset, out_dir: &Path, prefix: &str, seed: u64) -> Result<(), CliError> {
    let mut rng = seeded_rng(seed, format!("data-sharing-{prefix}").as_bytes());
    let (p1, p2) = share_dataset(&dataset.inputs, &dataset.labels, &mut rng)?;
    write_dataset_shares(out_dir, prefix, (&p1, &p2))?;
    println!(
        "{prefix}: shared {} samples of {} features into {} classes",
        dataset.samples(),
        dataset.features(),
        dataset.classes
    );
    Ok(())
}

pub fn run(args: &ShareDataArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed, 1)?;
    let p_a = quotient_core::fxp::PrecisionConfig::default().p_a;
    let (train, test) = load_datasets(&args.data, p_a, args.classes)?;
    deal(&train, &args.out_dir, &args.prefix, seed)?;
    if let Some(test) = test {
        deal(&test, &args.out_dir, &format!("{}-test", args.prefix), seed)?;
    }
    Ok(())
}
