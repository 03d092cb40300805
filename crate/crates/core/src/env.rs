//! MDP environment wrapping one B-FL round per decision step.
//!
//! The observation packs the cumulative latency, the K device-to-primary
//! gains, and the M(M-1) ordered server-pair gains in that fixed order. The
//! action allocates per-node bandwidth shares of the system band plus
//! per-node transmit powers (devices first, then servers). The reward is the
//! negative round latency while the bandwidth cap and the running average
//! power budget hold, and a large negative penalty otherwise.

use rand_chacha::ChaCha8Rng;

use crate::channel::{round_average_gains, ChannelParams, FadingState, LinkGains, Topology};
use crate::config::ScenarioConfig;
use crate::latency::{
    communication_latencies, computation_latencies, CompLatency, LatencyBreakdown, MessageSizes,
};
use crate::rand_util::{derive_seed, stream_rng};
use crate::Result;

const STREAM_TOPOLOGY: u64 = 1;
const STREAM_FADING: u64 = 2;

/// Observation vector. Layout: `[cumulative_latency,
/// device_to_primary_gains[0..K], server_pair_gains[(i,j): i != j,
/// row-major]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    values: Vec<f64>,
}

impl MdpState {
    pub fn dim(servers: usize, devices: usize) -> usize {
        1 + devices + servers * (servers - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cumulative_latency(&self) -> f64 {
        self.values[0]
    }
}

/// Per-node bandwidth and power allocation for one round. Node order is
/// devices `0..K`, then servers `K..K+M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationAction {
    pub bandwidth_hz: Vec<f64>,
    pub power_w: Vec<f64>,
}

impl AllocationAction {
    pub fn total_bandwidth(&self) -> f64 {
        self.bandwidth_hz.iter().sum()
    }

    pub fn total_power(&self) -> f64 {
        self.power_w.iter().sum()
    }

    /// Rescale so the bandwidth sum never exceeds the cap, even after
    /// floating-point rounding. The sub-ppb haircut on an over-cap sum is
    /// far below any physical bandwidth granularity.
    pub fn enforce_bandwidth_cap(&mut self, b_max: f64) {
        loop {
            let total = self.total_bandwidth();
            if total <= b_max {
                return;
            }
            let scale = (b_max / total) * (1.0 - 1e-12);
            for b in &mut self.bandwidth_hz {
                *b *= scale;
            }
        }
    }
}

/// Reward shape: penalty value and the long-term power budget.
#[derive(Debug, Clone, Copy)]
pub struct RewardConfig {
    pub penalty: f64,
    pub p_bar_w: f64,
}

/// Running total of per-round power draw (compensated accumulation).
#[derive(Debug, Clone, Copy, Default)]
pub struct BudgetTracker {
    rounds: u64,
    sum: f64,
    comp: f64,
}

impl BudgetTracker {
    pub fn record(&mut self, round_power: f64) {
        let y = round_power - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
        self.rounds += 1;
    }

    /// Running average; zero rounds reads as zero so the constraint is
    /// vacuously satisfied right after a reset.
    pub fn average(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.sum / self.rounds as f64
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// One environment step's outputs.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next: MdpState,
    pub reward: f64,
    pub breakdown: LatencyBreakdown,
}

/// The B-FL round environment.
#[derive(Debug, Clone)]
pub struct BflEnv {
    cfg: ScenarioConfig,
    channel: ChannelParams,
    sizes: MessageSizes,
    topology: Topology,
    fading: FadingState,
    gains: LinkGains,
    comp_by_primary: Vec<CompLatency>,
    reward_cfg: RewardConfig,
    tracker: BudgetTracker,
    round: u64,
    cum_latency: f64,
    resample_positions: bool,
}

impl BflEnv {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let channel = cfg.channel_params()?;
        let sizes = cfg.message_sizes()?;
        let compute = cfg.compute_params()?;
        let m = cfg.topology.servers;
        let k = cfg.topology.devices;
        let mut topo_rng: ChaCha8Rng = stream_rng(seed, STREAM_TOPOLOGY);
        let topology = Topology::random(m, k, cfg.topology.radius_m, &mut topo_rng)?;
        let mut fading = FadingState::new(topology.nodes(), &channel, derive_seed(seed, STREAM_FADING));
        let gains = round_average_gains(&topology, &channel, &mut fading)?;
        let comp_by_primary: Vec<CompLatency> = (0..m)
            .map(|p| computation_latencies(&compute, m, k, p))
            .collect::<Result<_>>()?;

        // Penalty default: -10x the round latency of the uniform allocation
        // evaluated at expected gains (E|g|^2 = 1, so h = zeta per link).
        let penalty = match cfg.budget.penalty {
            Some(p) => p,
            None => {
                let n = topology.nodes();
                let mut zeta = Vec::with_capacity(n * (n - 1) / 2);
                for a in 0..n {
                    for b in (a + 1)..n {
                        zeta.push(crate::channel::path_loss(topology.distance(a, b), channel.alpha)?);
                    }
                }
                let expected = LinkGains::from_pairs(n, zeta);
                let uniform = uniform_action(m, k, cfg.budget.b_max_hz, cfg.p_bar_w(), cfg.budget.p_cap_w);
                let comm = communication_latencies(
                    &uniform.bandwidth_hz,
                    &uniform.power_w,
                    &expected,
                    &sizes,
                    channel.n0,
                    m,
                    k,
                    0,
                );
                -10.0 * LatencyBreakdown::new(comm, comp_by_primary[0]).total
            }
        };
        let reward_cfg = RewardConfig { penalty, p_bar_w: cfg.p_bar_w() };

        Ok(Self {
            cfg: cfg.clone(),
            channel,
            sizes,
            topology,
            fading,
            gains,
            comp_by_primary,
            reward_cfg,
            tracker: BudgetTracker::default(),
            round: 0,
            cum_latency: 0.0,
            resample_positions: false,
        })
    }

    /// Redraw node positions on every reset instead of keeping the
    /// construction-time topology.
    pub fn set_resample_positions(&mut self, on: bool) {
        self.resample_positions = on;
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn servers(&self) -> usize {
        self.cfg.topology.servers
    }

    pub fn devices(&self) -> usize {
        self.cfg.topology.devices
    }

    pub fn nodes(&self) -> usize {
        self.cfg.nodes()
    }

    pub fn state_dim(&self) -> usize {
        MdpState::dim(self.servers(), self.devices())
    }

    pub fn action_dim(&self) -> usize {
        2 * self.nodes()
    }

    pub fn reward_config(&self) -> RewardConfig {
        self.reward_cfg
    }

    pub fn tracker(&self) -> &BudgetTracker {
        &self.tracker
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn current_primary(&self) -> usize {
        crate::consensus::rotate_primary(self.round, self.servers())
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Reset the episode: fresh fading stream, zero cumulative latency and
    /// budget history, optionally fresh positions.
    pub fn reset(&mut self, seed: u64) -> MdpState {
        if self.resample_positions {
            let mut topo_rng = stream_rng(seed, STREAM_TOPOLOGY);
            self.topology = Topology::random(
                self.servers(),
                self.devices(),
                self.cfg.topology.radius_m,
                &mut topo_rng,
            )
            .expect("validated dimensions");
        }
        self.fading = FadingState::new(
            self.topology.nodes(),
            &self.channel,
            derive_seed(seed, STREAM_FADING),
        );
        self.gains = round_average_gains(&self.topology, &self.channel, &mut self.fading)
            .expect("validated topology");
        self.tracker.reset();
        self.round = 0;
        self.cum_latency = 0.0;
        self.observe()
    }

    /// Pack the current observation (fixed layout, see [`MdpState`]).
    pub fn observe(&self) -> MdpState {
        let m = self.servers();
        let k = self.devices();
        let primary = self.current_primary();
        let mut values = Vec::with_capacity(MdpState::dim(m, k));
        values.push(self.cum_latency);
        let primary_node = self.topology.server_node(primary);
        for d in 0..k {
            values.push(self.gains.get(self.topology.device_node(d), primary_node));
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    values.push(
                        self.gains
                            .get(self.topology.server_node(i), self.topology.server_node(j)),
                    );
                }
            }
        }
        MdpState { values }
    }

    /// Map raw policy outputs (any finite reals) onto a feasible action:
    /// nonnegative-normalized shares of `b_max` plus unit-clamped power
    /// fractions of `p_cap`. The bandwidth cap holds exactly for every input.
    ///
    /// Raw layout: `[shares[0..K+M], power_fracs[0..K+M]]`. Device entries
    /// bind to devices directly; server entries are rotation-relative (slot
    /// 0 is this round's primary, slot i the i-th next server). The
    /// observation already reports device gains relative to the current
    /// primary, so expressing the allocation in the same rotating frame
    /// keeps the decision consistent with what the policy can see.
    pub fn decode_action(&self, raw: &[f64]) -> AllocationAction {
        let n = self.nodes();
        let m = self.servers();
        let k = self.devices();
        debug_assert_eq!(raw.len(), 2 * n);
        let b_max = self.cfg.budget.b_max_hz;
        let p_cap = self.cfg.budget.p_cap_w;

        let mut shares: Vec<f64> = raw[..n].iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            shares = vec![1.0 / n as f64; n];
        } else {
            for s in &mut shares {
                *s /= total;
            }
        }
        let fracs: Vec<f64> = raw[n..].iter().map(|&x| x.clamp(0.0, 1.0)).collect();

        let primary = self.current_primary();
        let mut bandwidth_hz = vec![0.0; n];
        let mut power_w = vec![0.0; n];
        for d in 0..k {
            bandwidth_hz[d] = shares[d] * b_max;
            power_w[d] = fracs[d] * p_cap;
        }
        for slot in 0..m {
            let node = k + (primary + slot) % m;
            bandwidth_hz[node] = shares[k + slot] * b_max;
            power_w[node] = fracs[k + slot] * p_cap;
        }
        let mut action = AllocationAction { bandwidth_hz, power_w };
        action.enforce_bandwidth_cap(b_max);
        action
    }

    /// Round latency of a candidate allocation under the current gains and
    /// primary, without advancing the environment.
    pub fn evaluate_allocation(&self, action: &AllocationAction) -> LatencyBreakdown {
        let primary = self.current_primary();
        let comm = communication_latencies(
            &action.bandwidth_hz,
            &action.power_w,
            &self.gains,
            &self.sizes,
            self.channel.n0,
            self.servers(),
            self.devices(),
            primary,
        );
        LatencyBreakdown::new(comm, self.comp_by_primary[primary])
    }

    /// Advance one round.
    pub fn step(&mut self, action: &AllocationAction) -> StepResult {
        debug_assert_eq!(action.bandwidth_hz.len(), self.nodes());
        debug_assert_eq!(action.power_w.len(), self.nodes());
        let breakdown = self.evaluate_allocation(action);

        self.tracker.record(action.total_power());
        let bandwidth_ok = action.total_bandwidth() <= self.cfg.budget.b_max_hz;
        let power_ok = self.tracker.average() <= self.reward_cfg.p_bar_w * (1.0 + 1e-9);
        // The +infinity latency sentinel (a required link with zero rate)
        // lands on the penalty path like any other infeasible action.
        let reward = if breakdown.total.is_finite() && bandwidth_ok && power_ok {
            -breakdown.total
        } else {
            self.reward_cfg.penalty
        };
        if breakdown.total.is_finite() {
            self.cum_latency += breakdown.total;
        }
        self.round += 1;
        self.gains = round_average_gains(&self.topology, &self.channel, &mut self.fading)
            .expect("validated topology");
        StepResult { next: self.observe(), reward, breakdown }
    }
}

/// Uniform allocation: an equal share of the band per node and the power
/// level that meets the long-term budget with equality, clamped to the cap.
pub fn uniform_action(servers: usize, devices: usize, b_max: f64, p_bar: f64, p_cap: f64) -> AllocationAction {
    let n = servers + devices;
    let mut action = AllocationAction {
        bandwidth_hz: vec![b_max / n as f64; n],
        power_w: vec![(p_bar / n as f64).min(p_cap); n],
    };
    action.enforce_bandwidth_cap(b_max);
    action
}
