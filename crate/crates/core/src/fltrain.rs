//! Desk-scale federated-learning core.
//!
//! A two-class Gaussian-blob task with a logistic-regression model stands in
//! for full image pipelines: the Byzantine-robustness phenomenon the
//! experiments demonstrate is architecture-independent, and this task trains
//! in milliseconds. Devices run local mini-batch SGD, a (possibly malicious)
//! subset submits Gaussian noise instead, and the chosen aggregator merges
//! the round's models into the next global model.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregation::{fedavg, gaussian_attack, multi_krum, ModelVector};
use crate::rand_util::{normal_vec, stream_rng};
use crate::{Error, Result};

/// Per-coordinate class-mean magnitude is `SEPARATION / (2 sqrt(dim))`, so
/// the two class centroids sit `SEPARATION` apart in feature space.
const SEPARATION: f64 = 5.0;

/// One device's shard (or the held-out test set).
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    pub owner: usize,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn from_raw(features: Vec<f64>, labels: Vec<u8>, dim: usize, owner: usize) -> Result<Self> {
        if labels.is_empty() || features.len() != labels.len() * dim {
            return Err(Error::Domain("dataset shape mismatch".into()));
        }
        Ok(Self { features, labels, dim, owner })
    }
}

/// Local-training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub rounds: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.local_epochs == 0 || self.rounds == 0 {
            return Err(Error::Config(
                "batch_size, local_epochs and rounds must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn draw_samples(
    n: usize,
    dim: usize,
    label_prob_one: f64,
    rng: &mut impl Rng,
    owner: usize,
) -> SyntheticDataset {
    let mu = SEPARATION / (2.0 * (dim as f64).sqrt());
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y: u8 = if rng.gen::<f64>() < label_prob_one { 1 } else { 0 };
        let center = if y == 1 { mu } else { -mu };
        let noise = normal_vec(dim, rng);
        features.extend(noise.iter().map(|z| center + z));
        labels.push(y);
    }
    SyntheticDataset { features, labels, dim, owner }
}

/// Build the per-device shards plus a held-out test set. Shards are i.i.d.
/// balanced by default; the non-iid mode skews each device's label mixture.
pub fn make_synthetic_task(
    k_devices: usize,
    samples_per_device: usize,
    test_samples: usize,
    dim: usize,
    noniid: bool,
    seed: u64,
) -> Result<(Vec<SyntheticDataset>, SyntheticDataset)> {
    if k_devices == 0 || samples_per_device == 0 || test_samples == 0 || dim == 0 {
        return Err(Error::Config("synthetic task sizes must be positive".into()));
    }
    let mut shards = Vec::with_capacity(k_devices);
    for k in 0..k_devices {
        let p1 = if noniid && k_devices > 1 {
            0.2 + 0.6 * k as f64 / (k_devices - 1) as f64
        } else {
            0.5
        };
        let mut rng = stream_rng(seed, 0x0da7_0000 + k as u64);
        shards.push(draw_samples(samples_per_device, dim, p1, &mut rng, k));
    }
    let mut rng = stream_rng(seed, 0x7e57);
    let test = draw_samples(test_samples, dim, 0.5, &mut rng, usize::MAX);
    Ok((shards, test))
}

fn logit(model: &ModelVector, x: &[f64]) -> f64 {
    let w = model.values();
    debug_assert_eq!(w.len(), x.len() + 1);
    let mut z = w[x.len()]; // bias
    for (wi, xi) in w.iter().zip(x) {
        z += wi * xi;
    }
    z
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss of the model over the given sample indices.
pub fn local_loss_on(model: &ModelVector, data: &SyntheticDataset, idx: &[usize]) -> f64 {
    debug_assert!(!idx.is_empty());
    let mut acc = 0.0;
    for &i in idx {
        let z = logit(model, data.feature(i));
        let ys = if data.label(i) == 1 { 1.0 } else { -1.0 };
        acc += softplus(-ys * z);
    }
    acc / idx.len() as f64
}

/// Mean logistic loss over a whole dataset.
pub fn local_loss(model: &ModelVector, data: &SyntheticDataset) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    local_loss_on(model, data, &idx)
}

/// Analytic gradient of the mean logistic loss over the given indices.
pub fn logistic_gradient(model: &ModelVector, data: &SyntheticDataset, idx: &[usize]) -> Vec<f64> {
    let dim = data.dim();
    let mut grad = vec![0.0; dim + 1];
    for &i in idx {
        let x = data.feature(i);
        let z = logit(model, x);
        let err = sigmoid(z) - data.label(i) as f64;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += err * xi;
        }
        grad[dim] += err;
    }
    let n = idx.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    grad
}

/// One local round: `local_epochs` passes of mini-batch SGD with the batch
/// order drawn from the device's RNG stream.
pub fn local_sgd_round(
    model: &ModelVector,
    data: &SyntheticDataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> ModelVector {
    let mut w = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let grad = logistic_gradient(&w, data, batch);
            for (wi, gi) in w.values_mut().iter_mut().zip(&grad) {
                *wi -= cfg.learning_rate * gi;
            }
        }
    }
    w
}

/// Held-out loss and 0/1 accuracy. A positive logit predicts class 1.
pub fn global_metrics(model: &ModelVector, test: &SyntheticDataset) -> (f64, f64) {
    let mut correct = 0usize;
    for i in 0..test.len() {
        let z = logit(model, test.feature(i));
        let pred: u8 = if z > 0.0 { 1 } else { 0 };
        if pred == test.label(i) {
            correct += 1;
        }
    }
    (local_loss(model, test), correct as f64 / test.len() as f64)
}

/// Global aggregation rule used by a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    FedAvg,
    MultiKrum { f_dev: usize },
}

/// Per-round record of a federated run.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// Outcome of a federated training run.
#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub model: ModelVector,
    pub history: Vec<RoundRecord>,
}

/// Run `cfg.rounds` federated rounds. The last `attackers` device slots
/// submit Gaussian noise instead of trained models; honest devices start
/// each round from the current global model.
pub fn federated_train(
    shards: &[SyntheticDataset],
    test: &SyntheticDataset,
    cfg: &TrainConfig,
    aggregator: Aggregator,
    attackers: usize,
    seed: u64,
) -> Result<FederatedRun> {
    cfg.validate()?;
    let k = shards.len();
    if k == 0 || attackers > k {
        return Err(Error::Config(format!(
            "need at least one shard and attackers ({attackers}) <= devices ({k})"
        )));
    }
    let dim = shards[0].dim();
    let mut device_rngs: Vec<_> = (0..k).map(|d| stream_rng(seed, 0x10_0000 + d as u64)).collect();
    let mut attack_rngs: Vec<_> = (0..k).map(|d| stream_rng(seed, 0x20_0000 + d as u64)).collect();

    let mut global = ModelVector::zeros(dim + 1);
    let mut history = Vec::with_capacity(cfg.rounds);
    let honest = k - attackers;
    for _ in 0..cfg.rounds {
        let mut locals = Vec::with_capacity(k);
        for d in 0..k {
            if d < honest {
                locals.push(local_sgd_round(&global, &shards[d], cfg, &mut device_rngs[d]));
            } else {
                locals.push(gaussian_attack(dim + 1, &mut attack_rngs[d]));
            }
        }
        global = match aggregator {
            Aggregator::FedAvg => {
                let weights: Vec<f64> = shards.iter().map(|s| s.len() as f64).collect();
                fedavg(&locals, &weights)?
            }
            Aggregator::MultiKrum { f_dev } => multi_krum(&locals, f_dev)?.1,
        };
        let train_loss = {
            // Eq.-style global training loss: sample-weighted mean over shards.
            let mut acc = 0.0;
            let mut n = 0usize;
            for s in shards {
                acc += local_loss(&global, s) * s.len() as f64;
                n += s.len();
            }
            acc / n as f64
        };
        let (test_loss, test_accuracy) = global_metrics(&global, test);
        history.push(RoundRecord { train_loss, test_loss, test_accuracy });
    }
    Ok(FederatedRun { model: global, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig { learning_rate: 0.01, batch_size: 128, local_epochs: 2, rounds: 100 }
    }

    /// Reference full-batch trainer used as the convergence oracle.
    fn reference_train(data: &SyntheticDataset, iters: usize, lr: f64) -> ModelVector {
        let mut w = ModelVector::zeros(data.dim() + 1);
        let idx: Vec<usize> = (0..data.len()).collect();
        for _ in 0..iters {
            let g = logistic_gradient(&w, data, &idx);
            for (wi, gi) in w.values_mut().iter_mut().zip(&g) {
                *wi -= lr * gi;
            }
        }
        w
    }

    fn pooled(shards: &[SyntheticDataset]) -> SyntheticDataset {
        let dim = shards[0].dim();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for s in shards {
            features.extend_from_slice(&s.features);
            labels.extend_from_slice(&s.labels);
        }
        SyntheticDataset::from_raw(features, labels, dim, 0).unwrap()
    }

    #[test]
    fn task_is_deterministic_and_sharded() {
        let (a, ta) = make_synthetic_task(10, 200, 500, 20, false, 5).unwrap();
        let (b, tb) = make_synthetic_task(10, 200, 500, 20, false, 5).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|s| s.len() == 200));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.labels, y.labels);
        }
        assert_eq!(ta.features, tb.features);
    }

    #[test]
    fn noniid_mode_skews_label_mixture() {
        let (shards, _) = make_synthetic_task(10, 500, 100, 8, true, 3).unwrap();
        let frac = |s: &SyntheticDataset| {
            s.labels.iter().filter(|&&l| l == 1).count() as f64 / s.len() as f64
        };
        assert!(frac(&shards[0]) < 0.35);
        assert!(frac(&shards[9]) > 0.65);
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let (shards, _) = make_synthetic_task(1, 64, 64, 10, false, 1).unwrap();
        let w = ModelVector::zeros(11);
        assert!((local_loss(&w, &shards[0]) - std::f64::consts::LN_2).abs() < 1e-12);
        // Single sample, logit 0.
        let one = SyntheticDataset::from_raw(vec![0.5; 10], vec![1], 10, 0).unwrap();
        assert!((local_loss(&w, &one) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn converged_reference_model_fits_the_task() {
        let (shards, test) = make_synthetic_task(10, 200, 2000, 20, false, 11).unwrap();
        let train = pooled(&shards);
        let w = reference_train(&train, 3000, 0.5);
        let train_idx: Vec<usize> = (0..train.len()).collect();
        let train_acc = {
            let mut correct = 0;
            for &i in &train_idx {
                let z = logit(&w, train.feature(i));
                if (z > 0.0) == (train.label(i) == 1) {
                    correct += 1;
                }
            }
            correct as f64 / train.len() as f64
        };
        assert!(train_acc >= 0.99, "train accuracy {train_acc}");
        let (_, test_acc) = global_metrics(&w, &test);
        assert!(test_acc >= 0.97, "test accuracy {test_acc}");

        // A perfectly classified batch with large margin has near-zero loss:
        // place samples far along the learned direction.
        let dim = 20;
        let norm: f64 = w.values()[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1.0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for sign in [1.0f64, -1.0] {
            for v in &w.values()[..dim] {
                features.push(sign * 12.0 * v / norm);
            }
            labels.push(if sign > 0.0 { 1 } else { 0 });
        }
        let margin_batch = SyntheticDataset::from_raw(features, labels, dim, 0).unwrap();
        assert!(local_loss(&w, &margin_batch) < 1e-3);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (shards, _) = make_synthetic_task(1, 100, 50, 6, false, 2).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-300, batch_size: 32, local_epochs: 1, rounds: 1 };
        let w0 = ModelVector::new(vec![0.3; 7]).unwrap();
        let mut rng = stream_rng(1, 1);
        let w1 = local_sgd_round(&w0, &shards[0], &cfg, &mut rng);
        for (a, b) in w0.values().iter().zip(w1.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn full_batch_step_matches_finite_differences() {
        let (shards, _) = make_synthetic_task(1, 40, 50, 5, false, 9).unwrap();
        let data = &shards[0];
        let w0 = ModelVector::new(vec![0.1, -0.2, 0.05, 0.4, -0.3, 0.02]).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let analytic = logistic_gradient(&w0, data, &idx);
        let h = 1e-6;
        for j in 0..w0.dim() {
            let mut plus = w0.clone();
            plus.values_mut()[j] += h;
            let mut minus = w0.clone();
            minus.values_mut()[j] -= h;
            let fd = (local_loss_on(&plus, data, &idx) - local_loss_on(&minus, data, &idx)) / (2.0 * h);
            assert!(
                (analytic[j] - fd).abs() <= 1e-5 * fd.abs().max(analytic[j].abs()).max(1e-4),
                "coord {j}: analytic {} vs fd {fd}",
                analytic[j]
            );
        }
        // One full-batch SGD step equals w - lr * grad.
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: data.len(), local_epochs: 1, rounds: 1 };
        let mut rng = stream_rng(4, 4);
        let w1 = local_sgd_round(&w0, data, &cfg, &mut rng);
        for j in 0..w0.dim() {
            let expect = w0.values()[j] - 0.05 * analytic[j];
            assert!((w1.values()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_round_is_bit_reproducible() {
        let (shards, _) = make_synthetic_task(1, 128, 50, 8, false, 6).unwrap();
        let cfg = TrainConfig { learning_rate: 0.02, batch_size: 32, local_epochs: 3, rounds: 1 };
        let w0 = ModelVector::zeros(9);
        let a = local_sgd_round(&w0, &shards[0], &cfg, &mut stream_rng(8, 1));
        let b = local_sgd_round(&w0, &shards[0], &cfg, &mut stream_rng(8, 1));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn zero_model_on_random_labels_is_chance() {
        let mut rng = stream_rng(15, 0);
        let n = 10_000;
        let mut features = Vec::with_capacity(n * 4);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            features.extend(normal_vec(4, &mut rng));
            labels.push(if rng.gen::<f64>() < 0.5 { 1u8 } else { 0u8 });
        }
        let data = SyntheticDataset::from_raw(features, labels, 4, 0).unwrap();
        let w = ModelVector::zeros(5);
        let (loss, acc) = global_metrics(&w, &data);
        assert!((acc - 0.5).abs() < 0.05, "accuracy {acc}");
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        // Evaluating twice gives identical values.
        let again = global_metrics(&w, &data);
        assert_eq!(again, (loss, acc));
    }

    #[test]
    fn clean_krum_and_fedavg_agree() {
        let (shards, test) = make_synthetic_task(10, 200, 1000, 20, false, 21).unwrap();
        let mut cfg = small_cfg();
        cfg.rounds = 40;
        let avg = federated_train(&shards, &test, &cfg, Aggregator::FedAvg, 0, 21).unwrap();
        let krum =
            federated_train(&shards, &test, &cfg, Aggregator::MultiKrum { f_dev: 4 }, 0, 21).unwrap();
        let a = avg.history.last().unwrap().test_accuracy;
        let b = krum.history.last().unwrap().test_accuracy;
        assert!((a - b).abs() <= 0.01, "fedavg {a} vs multi-krum {b}");
    }

    #[test]
    fn clean_fedavg_loss_is_nonincreasing_when_smoothed() {
        let (shards, test) = make_synthetic_task(10, 200, 500, 20, false, 31).unwrap();
        let mut cfg = small_cfg();
        cfg.rounds = 60;
        let run = federated_train(&shards, &test, &cfg, Aggregator::FedAvg, 0, 31).unwrap();
        let losses: Vec<f64> = run.history.iter().map(|r| r.train_loss).collect();
        let smooth: Vec<f64> = (0..losses.len() - 4)
            .map(|i| losses[i..i + 5].iter().sum::<f64>() / 5.0)
            .collect();
        for w in smooth[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "smoothed loss increased: {} -> {}", w[0], w[1]);
        }
    }
}
