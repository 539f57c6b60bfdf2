//! Gate counts for every garbled-circuit block, grouped by stage.

use crate::error::CliError;
use quotient_core::gc::blocks::{
    build_backward_norm_block, build_deriv_mask_block, build_elementwise_max_block,
    build_forward_block, build_private_shift_block, build_requant_block, build_saturate_block,
    build_ternarize_block, build_window_max_block,
};
use quotient_core::gc::Circuit;
use clap::Args;
use std::path::PathBuf;

pub const STATS_HEADER: &str = "block,stage,and_gates,xor_gates,not_gates";

#[derive(Debug, Args)]
pub struct CircuitStatsArgs {
    /// Elements per block (vector length the block is built for).
    #[arg(long, default_value_t = 1)]
    pub elements: usize,

    /// Optional CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn block_rows(name: &str, circuit: &Circuit, lines: &mut Vec<String>) {
    let mut and_total = 0u64;
    let mut xor_total = 0u64;
    let mut not_total = 0u64;
    for stage in circuit.stages() {
        and_total += stage.and_gates;
        xor_total += stage.xor_gates;
        not_total += stage.not_gates;
        lines.push(format!(
            "{},{},{},{},{}",
            name, stage.label, stage.and_gates, stage.xor_gates, stage.not_gates
        ));
    }
    lines.push(format!(
        "{},total,{},{},{}",
        name, and_total, xor_total, not_total
    ));
}

pub fn stats_lines(elements: usize) -> Vec<String> {
    let n = elements;
    let sigma = 32;
    let mut lines = vec![STATS_HEADER.to_string()];
    block_rows("forward", &build_forward_block(n, sigma, sigma, 3, 7, true), &mut lines);
    block_rows("deriv-mask", &build_deriv_mask_block(n, sigma, 3, 7), &mut lines);
    block_rows(
        "backward-norm",
        &build_backward_norm_block(n, sigma, sigma as u32, 7, Some(127), true),
        &mut lines,
    );
    block_rows("requant", &build_requant_block(n, sigma, 7), &mut lines);
    block_rows("elementwise-max", &build_elementwise_max_block(n, sigma), &mut lines);
    block_rows(
        "private-shift",
        &build_private_shift_block(n, sigma, 0, 1, 16),
        &mut lines,
    );
    block_rows("saturate", &build_saturate_block(n, sigma, 7), &mut lines);
    block_rows("ternarize", &build_ternarize_block(n, sigma, 7), &mut lines);
    block_rows(
        "window-max",
        &build_window_max_block(n, 4, sigma, 7),
        &mut lines,
    );
    lines
}

pub fn run(args: &CircuitStatsArgs) -> Result<(), CliError> {
    if args.elements == 0 {
        return Err(CliError::config("elements must be positive"));
    }
    let lines = stats_lines(args.elements);
    match &args.out {
        Some(path) => {
            let body = lines.join("\n") + "\n";
            std::fs::write(path, body)
                .map_err(|e| CliError::io(path.display().to_string(), e))?;
            println!(
                "wrote circuit stats for {} element(s) to {}",
                args.elements,
                path.display()
            );
        }
        None => {
            for line in &lines {
                println!("{line}");
            }
        }
    }
    Ok(())
}
