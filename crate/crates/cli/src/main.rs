use clap::{Parser, Subcommand};
use quotient_cli::commands::{
    bench, circuit_stats, predict, share_data, train_plain, train_secure,
};

#[derive(Parser)]
#[command(
    name = "quotient",
    about = "Two-party secure training and prediction for quantized networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train in the clear, the reference the secure protocol must match.
    PlaintextTrain(train_plain::PlaintextTrainArgs),
    /// Train on secret-shared data as one of the two parties.
    Train(train_secure::TrainArgs),
    /// Run secure prediction on shared inputs with a shared model.
    Predict(predict::PredictArgs),
    /// Split a dataset into additive shares, one file set per party.
    ShareData(share_data::ShareDataArgs),
    /// Time one protocol operation over a loopback connection.
    Bench(bench::BenchArgs),
    /// Print gate counts for the garbled-circuit blocks.
    CircuitStats(circuit_stats::CircuitStatsArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::PlaintextTrain(args) => train_plain::run(args),
        Command::Train(args) => train_secure::run(args),
        Command::Predict(args) => predict::run(args),
        Command::ShareData(args) => share_data::run(args),
        Command::Bench(args) => bench::run(args),
        Command::CircuitStats(args) => circuit_stats::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
