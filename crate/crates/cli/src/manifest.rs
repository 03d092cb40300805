//! Run manifests: the full resolved configuration plus seeds and the command
//! that produced a set of outputs. Re-running a manifest reproduces every
//! output byte for byte.

use anyhow::Context;
use serde::{Deserialize, Serialize};
use std::path::Path;

use bfl_core::config::ScenarioConfig;

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum SweepKind {
    Bandwidth,
    Power,
    Devices,
}

impl SweepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepKind::Bandwidth => "bandwidth",
            SweepKind::Power => "power",
            SweepKind::Devices => "devices",
        }
    }
}

/// What to run, with every grid resolved.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "command")]
pub enum CommandSpec {
    Robustness {
        malicious_percents: Vec<f64>,
    },
    Consensus {
        rounds: usize,
        max_nonhonest: usize,
        model_dim: usize,
    },
    Sweep {
        kind: SweepKind,
        grid: Vec<f64>,
        policies: Vec<String>,
    },
    Train,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format: u32,
    pub seed: u64,
    pub realizations: usize,
    pub scenario: ScenarioConfig,
    pub spec: CommandSpec,
}

impl Manifest {
    pub fn new(seed: u64, realizations: usize, scenario: ScenarioConfig, spec: CommandSpec) -> Self {
        Self {
            tool: "bfl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            format: MANIFEST_FORMAT,
            seed,
            realizations,
            scenario,
            spec,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json())
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.format != MANIFEST_FORMAT {
            anyhow::bail!("unsupported manifest format {}", m.format);
        }
        Ok(m)
    }
}
