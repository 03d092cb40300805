//! Experiment runner for the B-FL simulator.
//!
//! Each subcommand resolves its configuration into a [`manifest::Manifest`],
//! executes it, and writes the manifest next to the outputs. `replay` runs a
//! saved manifest again and reproduces every output byte for byte.

pub mod experiments;
pub mod fileconfig;
pub mod manifest;

use std::path::{Path, PathBuf};

use anyhow::Context;

use manifest::{CommandSpec, Manifest};

/// Execute a manifest, writing all outputs (and the manifest itself) under
/// `out_dir`. Returns the paths written.
pub fn execute(manifest: &Manifest, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();
    let emit = |name: &str, bytes: &[u8], written: &mut Vec<PathBuf>| -> anyhow::Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };

    match &manifest.spec {
        CommandSpec::Robustness { malicious_percents } => {
            let rows = experiments::run_robustness(
                &manifest.scenario,
                malicious_percents,
                manifest.seed,
                manifest.realizations,
            )?;
            emit("robustness.csv", experiments::robustness_csv(&rows).as_bytes(), &mut written)?;
        }
        CommandSpec::Consensus { rounds, max_nonhonest, model_dim } => {
            let (rows, ledger) = experiments::run_consensus_faults(
                &manifest.scenario,
                *rounds,
                *max_nonhonest,
                *model_dim,
                manifest.seed,
            )?;
            emit(
                "consensus_outcomes.csv",
                experiments::consensus_csv(&rows).as_bytes(),
                &mut written,
            )?;
            emit("ledger.jsonl", ledger.as_bytes(), &mut written)?;
        }
        CommandSpec::Sweep { kind, grid, policies } => {
            let rows = experiments::run_latency_sweep(
                &manifest.scenario,
                kind,
                grid,
                policies,
                manifest.seed,
                manifest.realizations,
            )?;
            let name = format!("sweep_{}.csv", kind.as_str());
            emit(&name, experiments::sweep_csv(&rows).as_bytes(), &mut written)?;
        }
        CommandSpec::Train => {
            let out = experiments::train_allocator(&manifest.scenario, manifest.seed)?;
            let ckpt_path = out_dir.join("actor.ckpt");
            out.actor.save(&ckpt_path).context("writing actor checkpoint")?;
            written.push(ckpt_path);
            emit("trace.csv", experiments::trace_csv(&out.rewards).as_bytes(), &mut written)?;
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    written.push(manifest_path);
    Ok(written)
}
