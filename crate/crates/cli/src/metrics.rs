//! Metrics CSV schemas.
//!
//! Both schemas are stable interfaces pinned by golden tests: downstream
//! scripts parse them, so column order and formatting never change within
//! a file version.

use crate::error::CliError;
use std::fmt::Write as _;
use std::path::Path;

/// Header of the benchmark schema.
pub const BENCH_HEADER: &str = "op,size,mode,wall_ms,bytes_sent,bytes_recv,rounds";

/// One benchmark measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub op: String,
    pub size: usize,
    pub mode: String,
    pub wall_ms: f64,
    pub bytes_sent: u64,
    pub bytes_recv: u64,
    pub rounds: u64,
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.3},{},{},{}",
            self.op, self.size, self.mode, self.wall_ms, self.bytes_sent, self.bytes_recv,
            self.rounds
        )
    }
}

/// Header of the training schema. `train_loss` and `test_acc` are empty on
/// iterations where they were not evaluated; a secure run learns them only
/// when weights are revealed for evaluation.
pub const TRAIN_HEADER: &str = "epoch,iter,wall_ms,bytes,train_loss,test_acc";

/// One training iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub epoch: usize,
    pub iter: usize,
    pub wall_ms: f64,
    pub bytes: u64,
    pub train_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

impl TrainRow {
    pub fn to_csv_line(&self) -> String {
        let mut line = format!(
            "{},{},{:.3},{},",
            self.epoch, self.iter, self.wall_ms, self.bytes
        );
        if let Some(loss) = self.train_loss {
            let _ = write!(line, "{loss:.6}");
        }
        line.push(',');
        if let Some(acc) = self.test_acc {
            let _ = write!(line, "{acc:.4}");
        }
        line
    }
}

fn write_lines(path: &Path, header: &str, lines: Vec<String>) -> Result<(), CliError> {
    let mut text = String::with_capacity(header.len() + 1 + lines.iter().map(|l| l.len() + 1).sum::<usize>());
    text.push_str(header);
    text.push('\n');
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    write_lines(path, BENCH_HEADER, rows.iter().map(BenchRow::to_csv_line).collect())
}

pub fn write_train_csv(path: &Path, rows: &[TrainRow]) -> Result<(), CliError> {
    write_lines(path, TRAIN_HEADER, rows.iter().map(TrainRow::to_csv_line).collect())
}
