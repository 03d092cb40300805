use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use bfl_cli::fileconfig::FileConfig;
use bfl_cli::manifest::{CommandSpec, Manifest, SweepKind};
use bfl_core::config::{dbm_to_watts, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "bfl",
    version,
    about = "Deterministic B-FL edge-network simulator and experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON scenario/experiment configuration (defaults match the reference
    /// cell).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; everything derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Realizations to average per data point.
    #[arg(long, default_value_t = 50)]
    realizations: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKindArg {
    Bandwidth,
    Power,
    Devices,
}

#[derive(Subcommand)]
enum Command {
    /// Final accuracy vs malicious-device percentage for FedAvg and
    /// multi-Krum.
    Robustness(CommonArgs),
    /// PBFT outcomes under enumerated server-fault assignments, with a
    /// ledger export.
    Consensus(CommonArgs),
    /// Mean round latency per allocation policy across a parameter grid.
    Sweep {
        /// Which parameter to sweep.
        #[arg(long, value_enum)]
        kind: SweepKindArg,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the TD3 allocator; writes a checkpoint and the reward trace.
    Train(CommonArgs),
    /// Re-run a saved manifest; outputs are byte-identical to the original
    /// run.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<(ScenarioConfig, FileConfig)> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let scenario = file.resolve()?;
    Ok((scenario, file))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (manifest, out_dir) = match &cli.command {
        Command::Robustness(common) => {
            let (scenario, file) = load_config(common)?;
            let spec = CommandSpec::Robustness {
                malicious_percents: file.experiments.robustness.malicious_percents.clone(),
            };
            (Manifest::new(common.seed, common.realizations, scenario, spec), common.out.clone())
        }
        Command::Consensus(common) => {
            let (scenario, file) = load_config(common)?;
            let c = &file.experiments.consensus;
            let spec = CommandSpec::Consensus {
                rounds: c.rounds,
                max_nonhonest: c.max_nonhonest,
                model_dim: c.model_dim,
            };
            (Manifest::new(common.seed, common.realizations, scenario, spec), common.out.clone())
        }
        Command::Sweep { kind, common } => {
            let (scenario, file) = load_config(common)?;
            let s = &file.experiments.sweep;
            let (kind, grid) = match kind {
                SweepKindArg::Bandwidth => (
                    SweepKind::Bandwidth,
                    s.bandwidth_grid_mhz.iter().map(|mhz| mhz * 1e6).collect(),
                ),
                SweepKindArg::Power => (
                    SweepKind::Power,
                    s.power_grid_dbm.iter().map(|&dbm| dbm_to_watts(dbm)).collect(),
                ),
                SweepKindArg::Devices => {
                    (SweepKind::Devices, s.devices_grid.iter().map(|&k| k as f64).collect())
                }
            };
            let spec = CommandSpec::Sweep { kind, grid, policies: s.policies.clone() };
            (Manifest::new(common.seed, common.realizations, scenario, spec), common.out.clone())
        }
        Command::Train(common) => {
            let (scenario, _) = load_config(common)?;
            (Manifest::new(common.seed, common.realizations, scenario, CommandSpec::Train), common.out.clone())
        }
        Command::Replay { manifest, out } => {
            let m = Manifest::load(manifest).context("loading manifest for replay")?;
            (m, out.clone())
        }
    };

    let written = bfl_cli::execute(&manifest, &out_dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
