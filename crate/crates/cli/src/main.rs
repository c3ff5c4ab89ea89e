//! `tileflow`: tile, simulate and emit quantized networks for a three-level
//! scratchpad memory hierarchy.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tileflow_core::rational::parse_rational;
use tileflow_core::tiler::{MemoryHierarchy, ObjectiveWeights};
use tileflow_core::Score;

#[derive(Parser, Debug)]
#[command(name = "tileflow", version, about = "Deployment compiler for quantized networks on scratchpad memories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the L3-L2 cascade and the L2-L1 tile for every layer.
    Tile(RunArgs),
    /// Allocate, schedule and replay the network against the golden model.
    Simulate(SimArgs),
    /// Write C orchestration sources for a simulated network.
    Emit(EmitArgs),
    /// Write one of the built-in fixture networks as a document plus blobs.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Network document (JSON).
    #[arg(long, env = "TILEFLOW_NET")]
    net: PathBuf,
    /// Directory holding the weight blobs; defaults to the document's directory.
    #[arg(long, env = "TILEFLOW_WEIGHTS_DIR")]
    weights_dir: Option<PathBuf>,
    /// Output directory for reports and sources.
    #[arg(long, env = "TILEFLOW_OUT", default_value = "tileflow-out")]
    out: PathBuf,
    #[command(flatten)]
    mem: MemArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
}

#[derive(Args, Debug, Clone)]
struct MemArgs {
    /// L1 bytes.
    #[arg(long, env = "TILEFLOW_L1", default_value_t = 64 * 1024)]
    l1: usize,
    /// L2 bytes.
    #[arg(long, env = "TILEFLOW_L2", default_value_t = 512 * 1024)]
    l2: usize,
    /// L3 bytes.
    #[arg(long, env = "TILEFLOW_L3", default_value_t = 8 * 1024 * 1024)]
    l3: usize,
    /// L2-L1 DMA bytes per cycle.
    #[arg(long, env = "TILEFLOW_L2L1_BANDWIDTH")]
    l2l1_bandwidth: Option<f64>,
    /// L3-L2 DMA bytes per cycle.
    #[arg(long, env = "TILEFLOW_L3L2_BANDWIDTH")]
    l3l2_bandwidth: Option<f64>,
}

impl MemArgs {
    fn hierarchy(&self) -> MemoryHierarchy {
        let mut m = MemoryHierarchy::with_sizes(self.l1, self.l2, self.l3);
        if let Some(bw) = self.l2l1_bandwidth {
            m.l2l1_bandwidth = bw;
        }
        if let Some(bw) = self.l3l2_bandwidth {
            m.l3l2_bandwidth = bw;
        }
        m
    }
}

fn score(text: &str) -> Result<Score, String> {
    let r = parse_rational(text).map_err(|e| e.to_string())?;
    Ok(Score::new(*r.numer() as i128, *r.denom() as i128))
}

/// Objective weights; integers, decimals or fractions such as `1/2`.
#[derive(Args, Debug, Clone)]
struct ObjectiveArgs {
    #[arg(long, env = "TILEFLOW_ALPHA", default_value = "1/2", value_parser = score)]
    alpha: Score,
    #[arg(long, env = "TILEFLOW_BETA_I2C", default_value = "100", value_parser = score)]
    beta_i2c: Score,
    #[arg(long, env = "TILEFLOW_BETA_PAR", default_value = "1000000", value_parser = score)]
    beta_par: Score,
    #[arg(long, env = "TILEFLOW_BETA_MM_W", default_value = "1000000", value_parser = score)]
    beta_mm_w: Score,
    #[arg(long, env = "TILEFLOW_BETA_MM_CH", default_value = "1000000", value_parser = score)]
    beta_mm_ch: Score,
}

impl ObjectiveArgs {
    fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            alpha: self.alpha,
            beta_i2c: self.beta_i2c,
            beta_par: self.beta_par,
            beta_mm_w: self.beta_mm_w,
            beta_mm_ch: self.beta_mm_ch,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Input tensor dump; a seeded random input is used when absent.
    #[arg(long, env = "TILEFLOW_INPUT")]
    input: Option<PathBuf>,
    /// Seed of the random input.
    #[arg(long, env = "TILEFLOW_SEED", default_value_t = 0)]
    seed: u64,
    /// Cores sharing the kernel work in the timing model.
    #[arg(long, env = "TILEFLOW_CORES")]
    cores: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct EmitArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Emit even without a passing simulation report for this exact configuration.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Fixture {
    ConvChain,
    DwPw,
    Residual,
    Mobilenet,
    Random,
}

#[derive(Args, Debug, Clone)]
struct GenArgs {
    #[arg(value_enum)]
    fixture: Fixture,
    /// Output directory for `network.json` and its blobs.
    #[arg(long, env = "TILEFLOW_OUT", default_value = "tileflow-net")]
    out: PathBuf,
    #[arg(long, env = "TILEFLOW_SEED", default_value_t = 0)]
    seed: u64,
    /// Input side length of the mobilenet fixture.
    #[arg(long, default_value_t = 128)]
    resolution: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tile(a) => commands::tile(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Emit(a) => commands::emit(&a),
        Command::Gen(a) => commands::gen(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
