//! Resolved scenario configuration.
//!
//! All values are SI (Hz, W, seconds, bits, cycles); dBm fields in the CLI
//! file format are converted at parse time. Defaults follow the reference
//! cell: 4 servers and 10 devices in a 100 m disc, 10 ms slots at 5 Hz
//! Doppler, path-loss exponent 2.5, 100 MHz system bandwidth, -174 dBm/Hz
//! noise density, and a 24 dBm per-node power cap.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::fltrain::TrainConfig;
use crate::latency::{ComputeParams, MessageSizes};
use crate::Result;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub servers: usize,
    pub devices: usize,
    pub radius_m: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self { servers: 4, devices: 10, radius_m: 100.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub alpha: f64,
    pub doppler_hz: f64,
    pub slot_s: f64,
    pub noise_w_per_hz: f64,
    pub slots_per_round: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            doppler_hz: 5.0,
            slot_s: 0.01,
            noise_w_per_hz: dbm_to_watts(-174.0),
            slots_per_round: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ComputeSection {
    pub server_freq_hz: f64,
    pub device_freq_hz: f64,
    pub sig_cycles: f64,
    pub agg_cycles: f64,
    pub cycles_per_sample: f64,
    pub batch_size: u64,
}

impl Default for ComputeSection {
    fn default() -> Self {
        Self {
            server_freq_hz: 2.4e9,
            device_freq_hz: 1e9,
            sig_cycles: 1e6,
            agg_cycles: 1e7,
            cycles_per_sample: 1e6,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SizesSection {
    pub tx_bits: f64,
    pub msg_bits: f64,
}

impl Default for SizesSection {
    fn default() -> Self {
        Self { tx_bits: 1e6, msg_bits: 1e4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub b_max_hz: f64,
    pub p_cap_w: f64,
    /// Long-term average power budget; derived as `0.5 * (M + K) * p_cap`
    /// when absent.
    pub p_bar_w: Option<f64>,
    /// Constraint-violation reward; derived as `-10x` the average-allocation
    /// round latency at expected gains when absent.
    pub penalty: Option<f64>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self { b_max_hz: 1e8, p_cap_w: dbm_to_watts(24.0), p_bar_w: None, penalty: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FlSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub dim: usize,
    pub samples_per_device: usize,
    pub test_samples: usize,
    /// Byzantine-tolerance parameter of multi-Krum.
    pub krum_f: usize,
    pub noniid: bool,
}

impl Default for FlSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            batch_size: 128,
            local_epochs: 2,
            rounds: 100,
            dim: 600,
            samples_per_device: 200,
            test_samples: 2000,
            krum_f: 4,
            noniid: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Section {
    pub gamma: f64,
    pub eta_actor: f64,
    pub eta_critic: f64,
    pub kappa: f64,
    pub policy_delay: usize,
    pub explore_steps: usize,
    /// Critic-only updates after exploration before policy updates begin.
    pub actor_warmup: usize,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub hidden: Vec<usize>,
    /// Gradient rule: "adam" or "sgd".
    pub optimizer: String,
    /// Temperature of the actor's bandwidth softmax head.
    pub softmax_temp: f64,
}

impl Default for Td3Section {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            eta_actor: 1e-4,
            eta_critic: 1e-4,
            kappa: 5e-3,
            policy_delay: 2,
            explore_steps: 512,
            actor_warmup: 800,
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            buffer_capacity: 1_000_000,
            batch_size: 256,
            max_steps: 5000,
            hidden: vec![64, 64],
            optimizer: "adam".into(),
            softmax_temp: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Fraction of devices submitting Gaussian noise instead of trained
    /// models.
    pub malicious_fraction: f64,
    /// Per-server behavior codes: "honest", "tamper", "silent",
    /// "equivocate". Empty means all honest.
    pub server_behaviors: Vec<String>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self { malicious_fraction: 0.0, server_behaviors: Vec::new() }
    }
}

/// Full resolved scenario, the unit the manifest records.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub topology: TopologySection,
    pub channel: ChannelSection,
    pub compute: ComputeSection,
    pub sizes: SizesSection,
    pub budget: BudgetSection,
    pub fl: FlSection,
    pub td3: Td3Section,
    pub attack: AttackSection,
    /// Rounds per evaluation/training episode.
    pub episode_rounds: usize,
    /// Candidate count of the Monte-Carlo allocator.
    pub mc_samples: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            topology: TopologySection::default(),
            channel: ChannelSection::default(),
            compute: ComputeSection::default(),
            sizes: SizesSection::default(),
            budget: BudgetSection::default(),
            fl: FlSection::default(),
            td3: Td3Section::default(),
            attack: AttackSection::default(),
            episode_rounds: 200,
            mc_samples: 10_000,
        }
    }
}

impl ScenarioConfig {
    pub fn nodes(&self) -> usize {
        self.topology.servers + self.topology.devices
    }

    pub fn p_bar_w(&self) -> f64 {
        self.budget
            .p_bar_w
            .unwrap_or(0.5 * self.nodes() as f64 * self.budget.p_cap_w)
    }

    pub fn channel_params(&self) -> Result<ChannelParams> {
        ChannelParams::new(
            self.channel.alpha,
            self.channel.doppler_hz,
            self.channel.slot_s,
            self.channel.noise_w_per_hz,
            self.channel.slots_per_round,
        )
    }

    pub fn compute_params(&self) -> Result<ComputeParams> {
        ComputeParams::homogeneous(
            self.topology.servers,
            self.topology.devices,
            self.compute.server_freq_hz,
            self.compute.device_freq_hz,
            self.compute.sig_cycles,
            self.compute.agg_cycles,
            self.compute.cycles_per_sample,
            self.compute.batch_size,
        )
    }

    pub fn message_sizes(&self) -> Result<MessageSizes> {
        MessageSizes::new(self.sizes.tx_bits, self.sizes.msg_bits, self.topology.devices)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.fl.learning_rate,
            batch_size: self.fl.batch_size,
            local_epochs: self.fl.local_epochs,
            rounds: self.fl.rounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_params()?;
        self.compute_params()?;
        self.message_sizes()?;
        self.train_config().validate()?;
        crate::consensus::ConsensusConfig::new(self.topology.servers)?;
        if !(self.budget.b_max_hz > 0.0) {
            return Err(crate::Error::Config("b_max_hz must be > 0".into()));
        }
        if !(self.budget.p_cap_w > 0.0) {
            return Err(crate::Error::Config("p_cap_w must be > 0".into()));
        }
        if !(self.p_bar_w() > 0.0) {
            return Err(crate::Error::Config("p_bar_w must be > 0".into()));
        }
        if self.episode_rounds == 0 {
            return Err(crate::Error::Config("episode_rounds must be >= 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(crate::Error::Config("mc_samples must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.attack.malicious_fraction) {
            return Err(crate::Error::Config(format!(
                "attack.malicious_fraction must lie in [0, 1], got {}",
                self.attack.malicious_fraction
            )));
        }
        if !self.attack.server_behaviors.is_empty()
            && self.attack.server_behaviors.len() != self.topology.servers
        {
            return Err(crate::Error::Config(format!(
                "attack.server_behaviors must name all {} servers or be empty",
                self.topology.servers
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_reference_cell() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.episode_rounds, 200);
        assert_eq!(cfg.mc_samples, 10_000);
        assert_eq!(cfg.topology.servers, 4);
        assert_eq!(cfg.topology.devices, 10);
        assert_eq!(cfg.topology.radius_m, 100.0);
        assert_eq!(cfg.budget.b_max_hz, 1e8);
        assert!((cfg.budget.p_cap_w - 0.251188643150958).abs() < 1e-12);
        assert!((cfg.channel.noise_w_per_hz - 10f64.powf(-20.4)).abs() < 1e-33);
        assert!((cfg.p_bar_w() - 0.5 * 14.0 * cfg.budget.p_cap_w).abs() < 1e-12);
    }

    #[test]
    fn dbm_conversions() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-15);
        assert!((dbm_to_watts(-174.0) - 3.981071705534969e-21).abs() < 1e-33);
    }
}
