//! The three experiment families plus allocator training.
//!
//! Every run is a pure function of (scenario, command parameters, seed,
//! realizations); realizations run on a worker pool with per-realization
//! seeds, so results are independent of scheduling. Policies under a sweep
//! share realization seeds (paired comparisons).

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;

use bfl_core::aggregation::{multi_krum, ModelVector};
use bfl_core::allocator::Policy;
use bfl_core::config::ScenarioConfig;
use bfl_core::consensus::{PbftCluster, ServerBehavior};
use bfl_core::env::BflEnv;
use bfl_core::fltrain::{federated_train, make_synthetic_task, Aggregator};
use bfl_core::rand_util::{derive_seed, stream_rng};
use bfl_core::td3::{self, smoothed, Td3Hyper, TrainOutput};

use crate::manifest::SweepKind;

const STREAM_ENV: u64 = 0xE07;
const STREAM_TRAIN: u64 = 0x3D3;
const STREAM_EPISODE: u64 = 0x0E5E;
const STREAM_POLICY: u64 = 0x907;
const STREAM_TASK: u64 = 0x7A5C;
const STREAM_MODELS: u64 = 0x30DE;

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------------------
// Robustness (malicious devices vs aggregator)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub malicious_pct: f64,
    pub aggregator: String,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

/// Sweep the malicious-device percentage for FedAvg and multi-Krum on the
/// synthetic task; accuracies are means over paired realizations.
pub fn run_robustness(
    scenario: &ScenarioConfig,
    percents: &[f64],
    seed: u64,
    realizations: usize,
) -> anyhow::Result<Vec<RobustnessRow>> {
    scenario.validate().map_err(|e| anyhow!("{e}"))?;
    if realizations == 0 {
        bail!("need at least one realization");
    }
    let k = scenario.topology.devices;
    let cfg = scenario.train_config();
    let mut rows = Vec::new();
    for &pct in percents {
        if !(0.0..=100.0).contains(&pct) {
            bail!("malicious percentage {pct} out of range");
        }
        let attackers = ((pct / 100.0) * k as f64).round() as usize;
        for aggregator in [Aggregator::FedAvg, Aggregator::MultiKrum { f_dev: scenario.fl.krum_f }] {
            let results: Vec<(f64, f64)> = (0..realizations)
                .into_par_iter()
                .map(|r| {
                    let run_seed = derive_seed(seed, STREAM_TASK + r as u64);
                    let (shards, test) = make_synthetic_task(
                        k,
                        scenario.fl.samples_per_device,
                        scenario.fl.test_samples,
                        scenario.fl.dim,
                        scenario.fl.noniid,
                        run_seed,
                    )
                    .expect("validated task sizes");
                    let run = federated_train(&shards, &test, &cfg, aggregator, attackers, run_seed)
                        .expect("validated train config");
                    let last = run.history.last().expect("at least one round");
                    (last.test_accuracy, last.test_loss)
                })
                .collect();
            let n = results.len() as f64;
            rows.push(RobustnessRow {
                malicious_pct: pct,
                aggregator: match aggregator {
                    Aggregator::FedAvg => "fedavg".into(),
                    Aggregator::MultiKrum { .. } => "multi_krum".into(),
                },
                final_accuracy: results.iter().map(|r| r.0).sum::<f64>() / n,
                final_loss: results.iter().map(|r| r.1).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("malicious_pct,aggregator,final_accuracy,final_loss\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.malicious_pct),
            r.aggregator,
            fmt_f64(r.final_accuracy),
            fmt_f64(r.final_loss)
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Consensus faults
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRow {
    /// One code per server: H, T, S, E.
    pub behaviors: String,
    pub rounds: usize,
    pub committed: usize,
    pub view_changes: usize,
    pub stalled: usize,
    pub chain_ok: bool,
    pub safety_ok: bool,
}

pub fn parse_behavior(name: &str) -> anyhow::Result<ServerBehavior> {
    Ok(match name {
        "honest" | "H" => ServerBehavior::Honest,
        "tamper" | "T" => ServerBehavior::TamperGlobal,
        "silent" | "S" => ServerBehavior::Silent,
        "equivocate" | "E" => ServerBehavior::Equivocate,
        other => bail!("unknown server behavior {other:?}"),
    })
}

pub fn configured_behaviors(scenario: &ScenarioConfig) -> anyhow::Result<Vec<ServerBehavior>> {
    if scenario.attack.server_behaviors.is_empty() {
        Ok(vec![ServerBehavior::Honest; scenario.topology.servers])
    } else {
        scenario.attack.server_behaviors.iter().map(|s| parse_behavior(s)).collect()
    }
}

fn behavior_string(behaviors: &[ServerBehavior]) -> String {
    behaviors.iter().map(ServerBehavior::code).collect()
}

fn run_assignment(
    behaviors: &[ServerBehavior],
    devices: usize,
    krum_f: usize,
    rounds: usize,
    model_dim: usize,
    seed: u64,
) -> anyhow::Result<(ConsensusRow, PbftCluster)> {
    let mut cluster = PbftCluster::new(devices, behaviors.to_vec()).map_err(|e| anyhow!("{e}"))?;
    let recompute = move |locals: &[ModelVector]| multi_krum(locals, krum_f).expect("valid models").1;
    let mut committed = 0usize;
    let mut view_changes = 0usize;
    let mut stalled = 0usize;
    let mut safety_ok = true;
    for round in 0..rounds {
        let mut rng = stream_rng(seed, STREAM_MODELS + round as u64);
        let locals: Vec<ModelVector> = (0..devices)
            .map(|_| bfl_core::aggregation::gaussian_attack(model_dim, &mut rng))
            .collect();
        let summary = cluster
            .run_round(round as u64, &locals, &recompute)
            .map_err(|e| anyhow!("{e}"))?;
        if summary.committed.is_some() {
            committed += 1;
        }
        if summary.stalled {
            stalled += 1;
        }
        view_changes += summary.view_changes;
        for report in &summary.reports {
            if !report.safety_holds(behaviors) {
                safety_ok = false;
            }
        }
    }
    let honest: Vec<usize> = (0..behaviors.len())
        .filter(|&s| behaviors[s] == ServerBehavior::Honest)
        .collect();
    let chain_ok = honest.iter().all(|&s| cluster.ledgers[s].verify_chain())
        && honest.windows(2).all(|w| cluster.ledgers[w[0]] == cluster.ledgers[w[1]]);
    Ok((
        ConsensusRow {
            behaviors: behavior_string(behaviors),
            rounds,
            committed,
            view_changes,
            stalled,
            chain_ok,
            safety_ok,
        },
        cluster,
    ))
}

/// Enumerate behavior assignments (every assignment with at most
/// `max_nonhonest` non-honest servers, plus the `f + 1` equivocating-validator
/// destruction probes and the configured attack), run each for `rounds`
/// rounds, and export the configured run's ledger.
pub fn run_consensus_faults(
    scenario: &ScenarioConfig,
    rounds: usize,
    max_nonhonest: usize,
    model_dim: usize,
    seed: u64,
) -> anyhow::Result<(Vec<ConsensusRow>, String)> {
    scenario.validate().map_err(|e| anyhow!("{e}"))?;
    let m = scenario.topology.servers;
    let devices = scenario.topology.devices;
    let krum_f = scenario.fl.krum_f;
    let fault_bound = (m - 1) / 3;

    let mut assignments: Vec<Vec<ServerBehavior>> = Vec::new();
    let kinds = [
        ServerBehavior::Honest,
        ServerBehavior::TamperGlobal,
        ServerBehavior::Silent,
        ServerBehavior::Equivocate,
    ];
    // All assignments with <= max_nonhonest non-honest servers.
    let mut stack = vec![Vec::<ServerBehavior>::new()];
    while let Some(partial) = stack.pop() {
        if partial.len() == m {
            assignments.push(partial);
            continue;
        }
        let nonhonest = partial.iter().filter(|&&b| b != ServerBehavior::Honest).count();
        for kind in kinds {
            if kind != ServerBehavior::Honest && nonhonest + 1 > max_nonhonest {
                continue;
            }
            let mut next = partial.clone();
            next.push(kind);
            stack.push(next);
        }
    }
    assignments.sort_by_key(|b| behavior_string(b));
    // Destruction probes: f + 1 equivocators among the validators of the
    // starting primary (server 0).
    let probe_count = fault_bound + 1;
    let validators: Vec<usize> = (1..m).collect();
    let mut combo = vec![0usize; probe_count];
    fn combinations(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            combinations(pool, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut probes = Vec::new();
    combo.clear();
    combinations(&validators, probe_count, 0, &mut combo, &mut probes);
    for probe in probes {
        let mut b = vec![ServerBehavior::Honest; m];
        for v in probe {
            b[v] = ServerBehavior::Equivocate;
        }
        if !assignments.contains(&b) {
            assignments.push(b);
        }
    }
    let configured = configured_behaviors(scenario)?;
    if configured.len() != m {
        bail!("configured server_behaviors must name all {m} servers");
    }
    if !assignments.contains(&configured) {
        assignments.push(configured.clone());
    }

    let rows: Vec<ConsensusRow> = assignments
        .par_iter()
        .map(|behaviors| {
            run_assignment(behaviors, devices, krum_f, rounds, model_dim, seed)
                .map(|(row, _)| row)
        })
        .collect::<anyhow::Result<_>>()?;

    // The configured run provides the audit ledger export.
    let (_, cluster) = run_assignment(&configured, devices, krum_f, rounds, model_dim, seed)?;
    let honest_first = (0..m)
        .find(|&s| configured[s] == ServerBehavior::Honest)
        .context("configured assignment has no honest server")?;
    let ledger = cluster.ledgers[honest_first].export_jsonl();
    Ok((rows, ledger))
}

pub fn consensus_csv(rows: &[ConsensusRow]) -> String {
    let mut out = String::from("behaviors,rounds,committed,view_changes,stalled,chain_ok,safety_ok\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.behaviors, r.rounds, r.committed, r.view_changes, r.stalled, r.chain_ok, r.safety_ok
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Latency sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: String,
    pub value: f64,
    pub policy: String,
    pub mean_latency_s: f64,
}

/// Build the environment the experiments share: positions drawn from the
/// scenario-level seed stream.
pub fn scenario_env(scenario: &ScenarioConfig, seed: u64) -> anyhow::Result<BflEnv> {
    BflEnv::new(scenario, derive_seed(seed, STREAM_ENV)).map_err(|e| anyhow!("{e}"))
}

/// Scenario at one sweep point.
fn scenario_at(scenario: &ScenarioConfig, kind: &SweepKind, value: f64) -> ScenarioConfig {
    let mut s = scenario.clone();
    match kind {
        SweepKind::Bandwidth => s.budget.b_max_hz = value,
        SweepKind::Power => s.budget.p_cap_w = value,
        SweepKind::Devices => s.topology.devices = value as usize,
    }
    s
}

fn policy_for(name: &str, scenario: &ScenarioConfig, trained: Option<&TrainOutput>) -> anyhow::Result<Policy> {
    Ok(match name {
        "average" => Policy::Average,
        "random" => Policy::Random,
        "monte_carlo" => Policy::MonteCarlo { samples: scenario.mc_samples },
        "td3" => Policy::Learned(
            trained
                .context("td3 policy requested but no trained actor available")?
                .actor
                .clone(),
        ),
        other => bail!("unknown policy {other:?}"),
    })
}

/// Mean per-round latency of one policy over paired realizations.
pub fn evaluate_policy(
    env_template: &BflEnv,
    policy: &Policy,
    rounds: usize,
    seed: u64,
    realizations: usize,
) -> f64 {
    let per_realization: Vec<f64> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let mut env = env_template.clone();
            let episode_seed = derive_seed(seed, STREAM_EPISODE + r as u64);
            env.reset(episode_seed);
            let mut rng = stream_rng(episode_seed, STREAM_POLICY);
            let mut acc = 0.0;
            for _ in 0..rounds {
                let action = policy.decide(&env, &mut rng);
                acc += env.step(&action).breakdown.total;
            }
            acc / rounds as f64
        })
        .collect();
    per_realization.iter().sum::<f64>() / per_realization.len() as f64
}

/// Latency-vs-parameter sweep across the configured policies with paired
/// seeds. A learned policy is trained once per sweep point.
pub fn run_latency_sweep(
    scenario: &ScenarioConfig,
    kind: &SweepKind,
    grid: &[f64],
    policies: &[String],
    seed: u64,
    realizations: usize,
) -> anyhow::Result<Vec<SweepRow>> {
    scenario.validate().map_err(|e| anyhow!("{e}"))?;
    if grid.is_empty() || policies.is_empty() || realizations == 0 {
        bail!("sweep needs a nonempty grid, at least one policy, and realizations >= 1");
    }
    let mut rows = Vec::new();
    for (gi, &value) in grid.iter().enumerate() {
        let point = scenario_at(scenario, kind, value);
        point.validate().map_err(|e| anyhow!("sweep point {value}: {e}"))?;
        let env = scenario_env(&point, seed)?;
        let trained = if policies.iter().any(|p| p == "td3") {
            let hyper = Td3Hyper::from_section(&point.td3).map_err(|e| anyhow!("{e}"))?;
            let mut train_env = env.clone();
            Some(
                td3::train(&mut train_env, &hyper, derive_seed(seed, STREAM_TRAIN + gi as u64))
                    .map_err(|e| anyhow!("{e}"))?,
            )
        } else {
            None
        };
        for name in policies {
            let policy = policy_for(name, &point, trained.as_ref())?;
            let mean = evaluate_policy(&env, &policy, point.episode_rounds, seed, realizations);
            rows.push(SweepRow {
                kind: kind.as_str().into(),
                value,
                policy: name.clone(),
                mean_latency_s: mean,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("sweep_kind,sweep_value,policy,mean_latency_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.kind,
            fmt_f64(r.value),
            r.policy,
            fmt_f64(r.mean_latency_s)
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Allocator training
// ---------------------------------------------------------------------------

/// Train the TD3 allocator on the scenario.
pub fn train_allocator(scenario: &ScenarioConfig, seed: u64) -> anyhow::Result<TrainOutput> {
    scenario.validate().map_err(|e| anyhow!("{e}"))?;
    let hyper = Td3Hyper::from_section(&scenario.td3).map_err(|e| anyhow!("{e}"))?;
    let mut env = scenario_env(scenario, seed)?;
    td3::train(&mut env, &hyper, derive_seed(seed, STREAM_TRAIN)).map_err(|e| anyhow!("{e}"))
}

/// Reward trace CSV: step, raw reward, trailing window-200 mean.
pub fn trace_csv(rewards: &[f64]) -> String {
    let smooth = smoothed(rewards, 200);
    let mut out = String::from("step,reward,smoothed_reward\n");
    for (i, (r, s)) in rewards.iter().zip(&smooth).enumerate() {
        out.push_str(&format!("{},{},{}\n", i, fmt_f64(*r), fmt_f64(*s)));
    }
    out
}
