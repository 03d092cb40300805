//! On-disk configuration schema.
//!
//! JSON with strict field checking: unknown keys are parse errors so typos
//! surface immediately. Radio quantities that engineers quote in dBm
//! (per-node power cap, noise density) are dBm in the file and converted to
//! SI at parse time; everything downstream of here is SI.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use bfl_core::config::{
    dbm_to_watts, AttackSection, BudgetSection, ChannelSection, ComputeSection, FlSection,
    ScenarioConfig, SizesSection, Td3Section, TopologySection,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawChannelSection {
    pub alpha: f64,
    pub doppler_hz: f64,
    pub slot_s: f64,
    pub noise_dbm_per_hz: f64,
    pub slots_per_round: usize,
}

impl Default for RawChannelSection {
    fn default() -> Self {
        Self { alpha: 2.5, doppler_hz: 5.0, slot_s: 0.01, noise_dbm_per_hz: -174.0, slots_per_round: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBudgetSection {
    pub b_max_hz: f64,
    pub p_cap_dbm: f64,
    /// Long-term average power budget in W; derived from the cap if absent.
    pub p_bar_w: Option<f64>,
    /// Constraint-violation reward; derived at scenario setup if absent.
    pub penalty: Option<f64>,
}

impl Default for RawBudgetSection {
    fn default() -> Self {
        Self { b_max_hz: 1e8, p_cap_dbm: 24.0, p_bar_w: None, penalty: None }
    }
}

/// Experiment grids and run shapes, separate from the scenario physics.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsSection {
    pub robustness: RobustnessSection,
    pub consensus: ConsensusSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessSection {
    /// Malicious-device percentages to sweep.
    pub malicious_percents: Vec<f64>,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self { malicious_percents: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSection {
    /// Rounds to drive per behavior assignment.
    pub rounds: usize,
    /// Enumerate every assignment with at most this many non-honest servers.
    pub max_nonhonest: usize,
    /// Model dimension of the synthetic payloads in consensus runs.
    pub model_dim: usize,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        Self { rounds: 50, max_nonhonest: 1, model_dim: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Policies to compare: any of "random", "average", "monte_carlo",
    /// "td3".
    pub policies: Vec<String>,
    pub bandwidth_grid_mhz: Vec<f64>,
    pub power_grid_dbm: Vec<f64>,
    pub devices_grid: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            policies: vec!["random".into(), "average".into(), "monte_carlo".into(), "td3".into()],
            bandwidth_grid_mhz: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            power_grid_dbm: vec![14.0, 16.0, 18.0, 20.0, 22.0, 24.0],
            devices_grid: vec![10, 20, 40],
        }
    }
}

/// The whole config file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub topology: TopologySection,
    pub channel: RawChannelSection,
    pub compute: ComputeSection,
    pub sizes: SizesSection,
    pub budget: RawBudgetSection,
    pub fl: FlSection,
    pub td3: Td3Section,
    pub attack: AttackSection,
    pub episode_rounds: Option<usize>,
    pub mc_samples: Option<usize>,
    pub experiments: ExperimentsSection,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Resolve to the SI scenario used everywhere downstream.
    pub fn resolve(&self) -> anyhow::Result<ScenarioConfig> {
        let defaults = ScenarioConfig::default();
        let scenario = ScenarioConfig {
            topology: self.topology.clone(),
            channel: ChannelSection {
                alpha: self.channel.alpha,
                doppler_hz: self.channel.doppler_hz,
                slot_s: self.channel.slot_s,
                noise_w_per_hz: dbm_to_watts(self.channel.noise_dbm_per_hz),
                slots_per_round: self.channel.slots_per_round,
            },
            compute: self.compute.clone(),
            sizes: self.sizes.clone(),
            budget: BudgetSection {
                b_max_hz: self.budget.b_max_hz,
                p_cap_w: dbm_to_watts(self.budget.p_cap_dbm),
                p_bar_w: self.budget.p_bar_w,
                penalty: self.budget.penalty,
            },
            fl: self.fl.clone(),
            td3: self.td3.clone(),
            attack: self.attack.clone(),
            episode_rounds: self.episode_rounds.unwrap_or(defaults.episode_rounds),
            mc_samples: self.mc_samples.unwrap_or(defaults.mc_samples),
        };
        if let Err(e) = scenario.validate() {
            bail!("invalid configuration: {e}");
        }
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_reference_scenario() {
        let cfg = FileConfig::default();
        let scenario = cfg.resolve().unwrap();
        assert_eq!(scenario, ScenarioConfig::default());
    }

    #[test]
    fn dbm_fields_convert() {
        let text = r#"{ "budget": { "p_cap_dbm": 30.0 }, "channel": { "noise_dbm_per_hz": -170.0 } }"#;
        let cfg: FileConfig = serde_json::from_str(text).unwrap();
        let scenario = cfg.resolve().unwrap();
        assert!((scenario.budget.p_cap_w - 1.0).abs() < 1e-12);
        assert!((scenario.channel.noise_w_per_hz - 1e-20).abs() < 1e-32);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_field_named() {
        let text = r#"{ "budget": { "p_cap_dbmm": 30.0 } }"#;
        let err = serde_json::from_str::<FileConfig>(text).unwrap_err().to_string();
        assert!(err.contains("p_cap_dbmm"), "error should name the bad field: {err}");
    }
}
