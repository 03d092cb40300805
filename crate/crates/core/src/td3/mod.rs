//! From-scratch TD3 learner for the allocation MDP.
//!
//! Twin critics with min-target bootstrapping, Polyak-averaged target
//! networks, delayed policy updates, clipped target-policy smoothing noise,
//! and a uniform replay ring. Networks are plain MLPs (`mlp` module) with
//! hand-written gradients; the actor's output layer feeds a softmax head for
//! bandwidth shares and a sigmoid head for power fractions, so every emitted
//! action is feasible by construction.
//!
//! Two internal conditioning stages keep desk-scale training effective
//! without touching the environment contract: observations pass through a
//! fixed log-scale feature map (gains span several decades), and critics
//! learn on rewards divided by a scenario-derived constant so Q-values sit
//! near unit scale. The emitted reward trace is always the raw environment
//! reward.

mod mlp;

pub use mlp::{Mlp, MlpCache, MlpGrads, Optimizer, OptimizerKind};

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Td3Section;
use crate::env::{BflEnv, MdpState};
use crate::rand_util::{derive_seed, normal_vec, stream_rng, uniform_simplex};
use crate::{Error, Result};

const CHECKPOINT_MAGIC: [u8; 4] = *b"BFL3";
const CHECKPOINT_VERSION: u32 = 1;

/// Fixed observation conditioning: log-compress the cumulative latency and
/// the channel gains onto unit scale.
pub fn state_features(state: &MdpState) -> Vec<f64> {
    let v = state.values();
    let mut out = Vec::with_capacity(v.len());
    out.push((1.0 + v[0].max(0.0)).log10());
    for &g in &v[1..] {
        out.push(((g + 1e-12).log10() + 6.0) / 3.0);
    }
    out
}

/// TD3 hyperparameters.
#[derive(Debug, Clone)]
pub struct Td3Hyper {
    pub gamma: f64,
    pub eta_actor: f64,
    pub eta_critic: f64,
    pub kappa: f64,
    pub policy_delay: usize,
    pub explore_steps: usize,
    pub actor_warmup: usize,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub softmax_temp: f64,
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Self::from_section(&Td3Section::default()).expect("default section is valid")
    }
}

impl Td3Hyper {
    pub fn from_section(s: &Td3Section) -> Result<Self> {
        let optimizer = match s.optimizer.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(Error::Config(format!(
                    "td3.optimizer must be \"adam\" or \"sgd\", got {other:?}"
                )))
            }
        };
        let h = Self {
            gamma: s.gamma,
            eta_actor: s.eta_actor,
            eta_critic: s.eta_critic,
            kappa: s.kappa,
            policy_delay: s.policy_delay,
            explore_steps: s.explore_steps,
            actor_warmup: s.actor_warmup,
            explore_noise: s.explore_noise,
            target_noise: s.target_noise,
            noise_clip: s.noise_clip,
            buffer_capacity: s.buffer_capacity,
            batch_size: s.batch_size,
            max_steps: s.max_steps,
            hidden: s.hidden.clone(),
            optimizer,
            softmax_temp: s.softmax_temp,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa must be in (0, 1], got {}", self.kappa)));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config(
                "policy_delay, batch_size and buffer_capacity must be >= 1".into(),
            ));
        }
        if self.max_steps <= self.explore_steps {
            return Err(Error::Config(format!(
                "max_steps ({}) must exceed explore_steps ({})",
                self.max_steps, self.explore_steps
            )));
        }
        if !(self.eta_actor > 0.0 && self.eta_critic > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.softmax_temp > 0.0) {
            return Err(Error::Config("softmax_temp must be > 0".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Bound on the bandwidth-head logits (`L * tanh(u / L)` before the
/// softmax). Together with the softmax temperature this caps the share ratio
/// between any two nodes, so no reachable action starves a link into
/// astronomical latency, and random parameter drift cannot sharpen the head
/// into a one-hot.
const BANDWIDTH_LOGIT_BOUND: f64 = 0.1;
/// Bound on the power-head pre-sigmoid outputs; keeps the sigmoid out of its
/// flat saturation tails so gradients always flow.
const POWER_LOGIT_BOUND: f64 = 2.0;

/// Deterministic policy network: MLP body, bounded-logit softmax bandwidth
/// head, bounded-logit sigmoid power head.
#[derive(Debug, Clone)]
pub struct Actor {
    pub net: Mlp,
    half: usize,
    temp: f64,
}

impl Actor {
    pub fn new(state_dim: usize, half: usize, hidden: &[usize], temp: f64, rng: &mut impl Rng) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * half);
        let mut net = Mlp::new(&dims, rng);
        // Start near the uniform allocation: tiny output weights give flat
        // softmax logits; the power head starts slightly below the budget
        // boundary (sigmoid(-0.2) ~ 0.45).
        let last = net.layers.len() - 1;
        for w in &mut net.layers[last].w {
            *w *= 0.01;
        }
        for (i, b) in net.layers[last].b.iter_mut().enumerate() {
            if i >= half {
                *b = -0.2;
            }
        }
        Self { net, half, temp }
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn action_dim(&self) -> usize {
        2 * self.half
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Raw (pre-squash) outputs for conditioned features.
    pub fn pre_squash(&self, features: &[f64]) -> Vec<f64> {
        self.net.forward(features)
    }

    /// Map raw outputs onto the feasible action set: a simplex over the
    /// bandwidth half (bounded logits, softmax with temperature) and
    /// unit-interval power fractions (bounded logits, sigmoid).
    pub fn squash(&self, raw: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw.len(), 2 * self.half);
        let mut out = Vec::with_capacity(raw.len());
        let lb = BANDWIDTH_LOGIT_BOUND;
        let logits: Vec<f64> = raw[..self.half].iter().map(|u| lb * (u / lb).tanh() / self.temp).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
        let lp = POWER_LOGIT_BOUND;
        out.extend(raw[self.half..].iter().map(|&u| sigmoid(lp * (u / lp).tanh())));
        out
    }

    /// Backpropagate an action-space gradient through the heads:
    /// `d(loss)/d(raw)` from `d(loss)/d(action)`.
    pub fn head_backward(&self, raw: &[f64], d_action: &[f64]) -> Vec<f64> {
        let action = self.squash(raw);
        let mut du = Vec::with_capacity(raw.len());
        let shares = &action[..self.half];
        let g = &d_action[..self.half];
        let inner: f64 = g.iter().zip(shares).map(|(gi, yi)| gi * yi).sum();
        let lb = BANDWIDTH_LOGIT_BOUND;
        for ((yi, gi), &ui) in shares.iter().zip(g).zip(&raw[..self.half]) {
            let tanh_grad = 1.0 - (ui / lb).tanh().powi(2);
            du.push(yi * (gi - inner) / self.temp * tanh_grad);
        }
        let lp = POWER_LOGIT_BOUND;
        for ((yi, gi), &ui) in action[self.half..].iter().zip(&d_action[self.half..]).zip(&raw[self.half..]) {
            let tanh_grad = 1.0 - (ui / lp).tanh().powi(2);
            du.push(gi * yi * (1.0 - yi) * tanh_grad);
        }
        du
    }

    /// Greedy action for an environment state.
    pub fn act(&self, state: &MdpState) -> Vec<f64> {
        let feats = state_features(state);
        self.squash(&self.pre_squash(&feats))
    }

    /// Versioned flat-binary checkpoint: dimensions header then row-major
    /// parameters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.half as u32).to_le_bytes());
        buf.extend_from_slice(&self.temp.to_le_bytes());
        buf.extend_from_slice(&(self.net.layers.len() as u32).to_le_bytes());
        for l in &self.net.layers {
            buf.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            buf.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        }
        for l in &self.net.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Format("checkpoint truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not an actor checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let half = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let temp = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let n_layers = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let ind = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let outd = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            shapes.push((ind, outd));
        }
        for w in shapes.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::Format("checkpoint layer shapes do not chain".into()));
            }
        }
        if shapes.last().map(|&(_, o)| o) != Some(2 * half) {
            return Err(Error::Format("checkpoint output does not match action dim".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (ind, outd) in shapes {
            let mut w = Vec::with_capacity(ind * outd);
            for _ in 0..ind * outd {
                w.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let mut b = Vec::with_capacity(outd);
            for _ in 0..outd {
                b.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            layers.push(mlp::Layer { w, b, in_dim: ind, out_dim: outd });
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Self { net: Mlp { layers }, half, temp })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Action-value network over (state features, action).
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut dims = vec![state_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self { net: Mlp::new(&dims, rng) }
    }

    pub fn q(&self, features: &[f64], action: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(features.len() + action.len());
        input.extend_from_slice(features);
        input.extend_from_slice(action);
        self.net.forward(&input)[0]
    }
}

/// One stored interaction. Actions live in the squashed network output
/// space (simplex shares plus unit-interval power fractions).
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: MdpState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: MdpState,
}

/// Fixed-capacity uniform replay ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self { data: Vec::new(), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.reward.is_finite());
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Exactly `q` indices: without replacement once the buffer holds at
    /// least `q` items, with replacement below that.
    pub fn sample_indices(&self, q: usize, rng: &mut impl Rng) -> Vec<usize> {
        let n = self.len();
        assert!(n > 0, "cannot sample from an empty buffer");
        if n >= q {
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..q {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            idx.truncate(q);
            idx
        } else {
            (0..q).map(|_| rng.gen_range(0..n)).collect()
        }
    }
}

/// Clipped-noise twin-critic bootstrap target:
/// `r + gamma * min(Q1'(s', a'), Q2'(s', a'))` with the smoothing noise
/// applied to the target actor's pre-squash outputs.
pub fn td_target(
    reward: f64,
    next_state: &MdpState,
    target_actor: &Actor,
    target_critics: (&Critic, &Critic),
    gamma: f64,
    target_noise: f64,
    noise_clip: f64,
    rng: &mut impl Rng,
) -> f64 {
    let feats = state_features(next_state);
    let mut raw = target_actor.pre_squash(&feats);
    let noise = normal_vec(raw.len(), rng);
    for (u, n) in raw.iter_mut().zip(noise) {
        *u += (n * target_noise).clamp(-noise_clip, noise_clip);
    }
    let action = target_actor.squash(&raw);
    let q1 = target_critics.0.q(&feats, &action);
    let q2 = target_critics.1.q(&feats, &action);
    reward + gamma * q1.min(q2)
}

/// One mean-squared-error gradient step for a critic. Returns the batch loss
/// before the step.
pub fn critic_gradient_step(
    critic: &mut Critic,
    opt: &mut Optimizer,
    features: &[Vec<f64>],
    actions: &[Vec<f64>],
    targets: &[f64],
    lr: f64,
) -> f64 {
    debug_assert!(!features.is_empty());
    let b = features.len() as f64;
    let mut grads = MlpGrads::zeros_like(&critic.net);
    let mut loss = 0.0;
    for ((f, a), &y) in features.iter().zip(actions).zip(targets) {
        let mut input = Vec::with_capacity(f.len() + a.len());
        input.extend_from_slice(f);
        input.extend_from_slice(a);
        let (out, cache) = critic.net.forward_cached(&input);
        let err = out[0] - y;
        loss += err * err;
        critic.net.backward(&cache, &[2.0 * err / b], &mut grads);
    }
    grads.clip_global_norm(GRAD_CLIP_NORM);
    opt.step(&mut critic.net, &grads, lr);
    loss / b
}

/// Global-norm bound applied to every batch gradient before an optimizer
/// step.
const GRAD_CLIP_NORM: f64 = 1.0;

/// Compress rewards below `floor` smoothly into `[2*floor, floor]`. Ordering
/// is preserved (the critic still sees "worse"), but one catastrophic
/// exploratory round can no longer dominate the squared-error objective.
fn soften_reward(r: f64, floor: f64) -> f64 {
    if floor >= 0.0 || r >= floor {
        return r;
    }
    if !r.is_finite() {
        return 2.0 * floor;
    }
    let d = (floor - r) / (-floor);
    floor + floor * (1.0 - (-d).exp())
}

/// Ascent gradient of `mean_j Q(s_j, pi(s_j))` with respect to the actor
/// parameters; `dq_da` supplies `dQ/da` at each (features, action) pair.
pub fn actor_objective_gradient(
    actor: &Actor,
    features: &[Vec<f64>],
    mut dq_da: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
) -> MlpGrads {
    let mut grads = MlpGrads::zeros_like(&actor.net);
    let b = features.len() as f64;
    for f in features {
        let (raw, cache) = actor.net.forward_cached(f);
        let action = actor.squash(&raw);
        let da = dq_da(f, &action);
        let mut du = actor.head_backward(&raw, &da);
        for g in &mut du {
            *g /= b;
        }
        actor.net.backward(&cache, &du, &mut grads);
    }
    grads
}

/// One deterministic-policy-gradient ascent step through `dq_da`.
pub fn ascend_actor(
    actor: &mut Actor,
    opt: &mut Optimizer,
    features: &[Vec<f64>],
    dq_da: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
    lr: f64,
) {
    let mut grads = actor_objective_gradient(actor, features, dq_da);
    // The optimizer descends; flip to ascend the objective.
    for (gw, gb) in &mut grads.layers {
        gw.iter_mut().for_each(|g| *g = -*g);
        gb.iter_mut().for_each(|g| *g = -*g);
    }
    grads.clip_global_norm(GRAD_CLIP_NORM);
    opt.step(&mut actor.net, &grads, lr);
}

/// One actor step through critic 1 (the standard TD3 policy update).
pub fn actor_gradient_step(
    actor: &mut Actor,
    opt: &mut Optimizer,
    critic1: &Critic,
    features: &[Vec<f64>],
    lr: f64,
) {
    let mut cgrads = MlpGrads::zeros_like(&critic1.net);
    ascend_actor(
        actor,
        opt,
        features,
        |f, a| {
            let mut input = Vec::with_capacity(f.len() + a.len());
            input.extend_from_slice(f);
            input.extend_from_slice(a);
            let (_, cache) = critic1.net.forward_cached(&input);
            cgrads.reset();
            let input_grad = critic1.net.backward(&cache, &[1.0], &mut cgrads);
            input_grad[f.len()..].to_vec()
        },
        lr,
    );
}

/// The full learner state.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub target_actor: Actor,
    pub target_critic1: Critic,
    pub target_critic2: Critic,
    pub buffer: ReplayBuffer,
    hyper: Td3Hyper,
    reward_scale: f64,
    reward_floor: f64,
    opt_actor: Optimizer,
    opt_critic1: Optimizer,
    opt_critic2: Optimizer,
    updates: u64,
    policy_updates: u64,
}

impl Td3Agent {
    pub fn new(state_dim: usize, half: usize, hyper: Td3Hyper, reward_scale: f64, seed: u64) -> Self {
        Self::with_reward_floor(state_dim, half, hyper, reward_scale, f64::NEG_INFINITY, seed)
    }

    /// `reward_floor` clips learning targets from below: rewards past the
    /// constraint penalty carry no extra information, and unbounded
    /// latencies (a starved link under an exploratory simplex draw) would
    /// otherwise blow up the critics.
    pub fn with_reward_floor(
        state_dim: usize,
        half: usize,
        hyper: Td3Hyper,
        reward_scale: f64,
        reward_floor: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, 0x917);
        let actor = Actor::new(state_dim, half, &hyper.hidden, hyper.softmax_temp, &mut rng);
        let critic1 = Critic::new(state_dim, 2 * half, &hyper.hidden, &mut rng);
        let critic2 = Critic::new(state_dim, 2 * half, &hyper.hidden, &mut rng);
        let target_actor = actor.clone();
        let target_critic1 = critic1.clone();
        let target_critic2 = critic2.clone();
        let opt_actor = Optimizer::new(hyper.optimizer, &actor.net);
        let opt_critic1 = Optimizer::new(hyper.optimizer, &critic1.net);
        let opt_critic2 = Optimizer::new(hyper.optimizer, &critic2.net);
        let buffer = ReplayBuffer::new(hyper.buffer_capacity);
        Self {
            actor,
            critic1,
            critic2,
            target_actor,
            target_critic1,
            target_critic2,
            buffer,
            hyper,
            reward_scale: if reward_scale > 0.0 { reward_scale } else { 1.0 },
            reward_floor,
            opt_actor,
            opt_critic1,
            opt_critic2,
            updates: 0,
            policy_updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn policy_updates(&self) -> u64 {
        self.policy_updates
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Random feasible action in squash space: uniform simplex shares plus
    /// uniform power fractions.
    pub fn random_action(half: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut a = uniform_simplex(half, rng);
        a.extend((0..half).map(|_| rng.gen::<f64>()));
        a
    }

    /// Greedy action with pre-squash exploration noise.
    pub fn act_explore(&self, state: &MdpState, rng: &mut impl Rng) -> Vec<f64> {
        let feats = state_features(state);
        let mut raw = self.actor.pre_squash(&feats);
        let noise = normal_vec(raw.len(), rng);
        for (u, n) in raw.iter_mut().zip(noise) {
            *u += n * self.hyper.explore_noise;
        }
        self.actor.squash(&raw)
    }

    pub fn push(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// One learning iteration: critics every call, actor and targets when
    /// `with_policy_update` is set (the caller applies the delay rule).
    ///
    /// While the actor warmup lasts, critic targets are myopic (`gamma = 0`):
    /// the reward surface carries almost all of the action gradient in this
    /// MDP, and fitting it before bootstrapping starts gives the policy an
    /// informative critic from its first update.
    pub fn update(&mut self, rng: &mut impl Rng, with_policy_update: bool) {
        let q = self.hyper.batch_size;
        let gamma = if self.updates < self.hyper.actor_warmup as u64 {
            0.0
        } else {
            self.hyper.gamma
        };
        let idx = self.buffer.sample_indices(q, rng);
        let mut features = Vec::with_capacity(q);
        let mut actions = Vec::with_capacity(q);
        let mut targets = Vec::with_capacity(q);
        for &i in &idx {
            let t = self.buffer.get(i);
            features.push(state_features(&t.state));
            actions.push(t.action.clone());
            targets.push(td_target(
                soften_reward(t.reward, self.reward_floor) / self.reward_scale,
                &t.next_state,
                &self.target_actor,
                (&self.target_critic1, &self.target_critic2),
                gamma,
                self.hyper.target_noise,
                self.hyper.noise_clip,
                rng,
            ));
        }
        critic_gradient_step(
            &mut self.critic1,
            &mut self.opt_critic1,
            &features,
            &actions,
            &targets,
            self.hyper.eta_critic,
        );
        critic_gradient_step(
            &mut self.critic2,
            &mut self.opt_critic2,
            &features,
            &actions,
            &targets,
            self.hyper.eta_critic,
        );
        self.updates += 1;

        if with_policy_update {
            actor_gradient_step(
                &mut self.actor,
                &mut self.opt_actor,
                &self.critic1,
                &features,
                self.hyper.eta_actor,
            );
            self.target_actor.net.polyak_from(&self.actor.net, self.hyper.kappa);
            self.target_critic1.net.polyak_from(&self.critic1.net, self.hyper.kappa);
            self.target_critic2.net.polyak_from(&self.critic2.net, self.hyper.kappa);
            self.policy_updates += 1;
        }
    }
}

/// Training result: the learned networks plus the raw per-step reward trace.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor: Actor,
    pub critic1: Critic,
    pub critic2: Critic,
    pub rewards: Vec<f64>,
}

/// Trailing-window mean of a reward trace.
pub fn smoothed(rewards: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(rewards.len());
    let mut acc = 0.0;
    for i in 0..rewards.len() {
        acc += rewards[i];
        if i >= w {
            acc -= rewards[i - w];
        }
        out.push(acc / (i.min(w - 1) + 1) as f64);
    }
    out
}

fn reward_scale_for(env: &BflEnv, _hyper: &Td3Hyper) -> f64 {
    // The penalty defaults to -10x the uniform-allocation round latency, so
    // |penalty| / 10 estimates the per-round reward magnitude. Scaling to
    // unit per-round rewards keeps the action-dependent part of the target
    // well above the critic's fitting noise.
    let scale = env.reward_config().penalty.abs() / 10.0;
    if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    }
}

/// Algorithm loop: explore with the random policy, then act with exploration
/// noise, store transitions, update critics every step and the actor plus
/// targets every `policy_delay` steps. Episodes of `episode_rounds` steps
/// are stitched into one global step count; the emitted trace has exactly
/// `max_steps` raw environment rewards.
///
/// The returned actor is the snapshot with the best smoothed training reward
/// (window 200), not necessarily the final iterate.
pub fn train(env: &mut BflEnv, hyper: &Td3Hyper, seed: u64) -> Result<TrainOutput> {
    hyper.validate()?;
    let half = env.nodes();
    let reward_scale = reward_scale_for(env, hyper);
    let mut agent = Td3Agent::with_reward_floor(
        env.state_dim(),
        half,
        hyper.clone(),
        reward_scale,
        env.reward_config().penalty,
        derive_seed(seed, 0xA7),
    );
    let mut rng: ChaCha8Rng = stream_rng(seed, 0x7d3);
    let episode_rounds = env.config().episode_rounds;
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(seed, 0x5000));
    let mut rewards = Vec::with_capacity(hyper.max_steps);

    const SNAPSHOT_WINDOW: usize = 200;
    let mut window_acc = 0.0f64;
    let mut best_smoothed = f64::NEG_INFINITY;
    let mut best_actor = agent.actor.clone();

    for step in 0..hyper.max_steps {
        let action = if step < hyper.explore_steps {
            Td3Agent::random_action(half, &mut rng)
        } else {
            agent.act_explore(&state, &mut rng)
        };
        let decoded = env.decode_action(&action);
        let result = env.step(&decoded);
        rewards.push(result.reward);
        agent.push(Transition {
            state: state.clone(),
            action,
            reward: result.reward,
            next_state: result.next.clone(),
        });
        state = result.next;

        window_acc += result.reward;
        if step + 1 > SNAPSHOT_WINDOW {
            window_acc -= rewards[step - SNAPSHOT_WINDOW];
        }

        if step >= hyper.explore_steps {
            let past_warmup = step >= hyper.explore_steps + hyper.actor_warmup;
            let with_policy_update = past_warmup && step % hyper.policy_delay == 0;
            agent.update(&mut rng, with_policy_update);

            // Track the best policy iterate by smoothed training reward once
            // the window is past the random-exploration prefix.
            if past_warmup && step + 1 >= hyper.explore_steps + hyper.actor_warmup + SNAPSHOT_WINDOW {
                let smoothed_now = window_acc / SNAPSHOT_WINDOW as f64;
                if smoothed_now > best_smoothed {
                    best_smoothed = smoothed_now;
                    best_actor = agent.actor.clone();
                }
            }
        }

        if (step + 1) % episode_rounds == 0 && step + 1 < hyper.max_steps {
            episode += 1;
            state = env.reset(derive_seed(seed, 0x5000 + episode));
        }
    }

    // Runs too short to fill the snapshot window fall back to the final
    // iterate.
    if best_smoothed == f64::NEG_INFINITY {
        best_actor = agent.actor.clone();
    }
    Ok(TrainOutput {
        actor: best_actor,
        critic1: agent.critic1,
        critic2: agent.critic2,
        rewards,
    })
}
