//! Allocation policies behind one interface: uniform, random, Monte-Carlo
//! search over random candidates, and the learned TD3 actor.

use rand::Rng;

use crate::env::{uniform_action, AllocationAction, BflEnv};
use crate::rand_util::uniform_simplex;
use crate::td3::Actor;

/// A per-round allocation policy.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Uniform bandwidth shares; per-node power at the long-term budget
    /// level.
    Average,
    /// Uniform-simplex bandwidth, uniform power in `[0, p_cap]`.
    Random,
    /// Best of `samples` candidates under the current round's gains
    /// (candidate 0 is the average allocation).
    MonteCarlo { samples: usize },
    /// Trained actor.
    Learned(Actor),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Average => "average",
            Policy::Random => "random",
            Policy::MonteCarlo { .. } => "monte_carlo",
            Policy::Learned(_) => "td3",
        }
    }

    /// Decide this round's allocation. `rng` drives the stochastic policies;
    /// the average and learned policies ignore it.
    pub fn decide(&self, env: &BflEnv, rng: &mut impl Rng) -> AllocationAction {
        match self {
            Policy::Average => average_alloc(env),
            Policy::Random => random_alloc(env, rng),
            Policy::MonteCarlo { samples } => monte_carlo_alloc(env, *samples, rng),
            Policy::Learned(actor) => env.decode_action(&actor.act(&env.observe())),
        }
    }
}

/// Uniform allocation: `b_max / (M + K)` per node and the power level that
/// meets the long-term budget with equality margin.
pub fn average_alloc(env: &BflEnv) -> AllocationAction {
    uniform_action(
        env.servers(),
        env.devices(),
        env.config().budget.b_max_hz,
        env.reward_config().p_bar_w,
        env.config().budget.p_cap_w,
    )
}

/// Uniform-simplex bandwidth shares and independent uniform powers.
pub fn random_alloc(env: &BflEnv, rng: &mut impl Rng) -> AllocationAction {
    let n = env.nodes();
    let b_max = env.config().budget.b_max_hz;
    let p_cap = env.config().budget.p_cap_w;
    let shares = uniform_simplex(n, rng);
    let mut action = AllocationAction {
        bandwidth_hz: shares.iter().map(|s| s * b_max).collect(),
        power_w: (0..n).map(|_| rng.gen::<f64>() * p_cap).collect(),
    };
    action.enforce_bandwidth_cap(b_max);
    action
}

/// Sample `samples` candidates (the average allocation plus `samples - 1`
/// random ones), price each with the closed-form latency model under the
/// current gains, and return the cheapest (ties to the lower candidate
/// index).
pub fn monte_carlo_alloc(env: &BflEnv, samples: usize, rng: &mut impl Rng) -> AllocationAction {
    assert!(samples >= 1);
    let mut best = average_alloc(env);
    let mut best_latency = env.evaluate_allocation(&best).total;
    for _ in 1..samples {
        let candidate = random_alloc(env, rng);
        let latency = env.evaluate_allocation(&candidate).total;
        if latency < best_latency {
            best_latency = latency;
            best = candidate;
        }
    }
    best
}
