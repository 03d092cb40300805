//! Secure global aggregation.
//!
//! Multi-Krum scores every submitted model by the summed squared distances to
//! its nearest neighbors, keeps the `K - f` lowest-scoring models, and
//! averages them; FedAvg is the weighted-mean baseline; the Gaussian attack
//! is the malicious-device model used throughout the experiments. All
//! reductions run in ascending index order so aggregates are bit-identical
//! across runs, which the consensus layer relies on when validators
//! recompute the global model.

use rand::Rng;

use crate::rand_util::normal_vec;
use crate::{Error, Result};

/// Flat parameter vector exchanged between devices and servers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    values: Vec<f64>,
}

impl ModelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("model vector contains non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn squared_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Canonical byte encoding (little-endian IEEE-754), used for digests.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }
}

fn check_models(models: &[ModelVector], f_dev: usize) -> Result<usize> {
    let k = models.len();
    if k < f_dev + 3 {
        return Err(Error::Domain(format!(
            "multi-Krum needs at least f + 3 = {} models, got {k}",
            f_dev + 3
        )));
    }
    let dim = models[0].dim();
    if models.iter().any(|m| m.dim() != dim) {
        return Err(Error::Domain("model dimensions do not match".into()));
    }
    Ok(k)
}

/// Multi-Krum score of every model: the sum of squared Euclidean distances to
/// its `K - f - 2` nearest other models (distance ties broken by lower
/// index).
pub fn krum_scores(models: &[ModelVector], f_dev: usize) -> Result<Vec<f64>> {
    let k = check_models(models, f_dev)?;
    let neighbors = k - f_dev - 2;
    let mut scores = Vec::with_capacity(k);
    for (i, mi) in models.iter().enumerate() {
        let mut dists: Vec<(f64, usize)> = models
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, mj)| (mi.squared_distance(mj), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scores.push(dists.iter().take(neighbors).map(|&(d, _)| d).sum());
    }
    Ok(scores)
}

/// Select the `K - f` lowest-scoring models (score ties by lower index) and
/// return their unweighted mean together with the selected index set.
pub fn multi_krum(models: &[ModelVector], f_dev: usize) -> Result<(Vec<usize>, ModelVector)> {
    let k = models.len();
    let scores = krum_scores(models, f_dev)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut selected: Vec<usize> = order.into_iter().take(k - f_dev).collect();
    selected.sort_unstable();
    let dim = models[0].dim();
    let mut mean = vec![0.0; dim];
    for &i in &selected {
        for (acc, v) in mean.iter_mut().zip(models[i].values()) {
            *acc += v;
        }
    }
    let count = selected.len() as f64;
    for v in &mut mean {
        *v /= count;
    }
    Ok((selected, ModelVector::new(mean)?))
}

/// Weighted mean of models with nonnegative weights.
pub fn fedavg(models: &[ModelVector], weights: &[f64]) -> Result<ModelVector> {
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::Domain(format!(
            "fedavg needs matching non-empty models/weights, got {} and {}",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Domain("fedavg weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("fedavg weights sum to zero".into()));
    }
    let dim = models[0].dim();
    if models.iter().any(|m| m.dim() != dim) {
        return Err(Error::Domain("model dimensions do not match".into()));
    }
    let mut mean = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        for (acc, v) in mean.iter_mut().zip(m.values()) {
            *acc += w * v;
        }
    }
    for v in &mut mean {
        *v /= total;
    }
    ModelVector::new(mean)
}

/// Malicious-device payload: i.i.d. standard normal entries.
pub fn gaussian_attack(dim: usize, rng: &mut impl Rng) -> ModelVector {
    ModelVector { values: normal_vec(dim, rng) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_util::stream_rng;
    use proptest::prelude::*;

    fn mv(vals: &[f64]) -> ModelVector {
        ModelVector::new(vals.to_vec()).unwrap()
    }

    /// Brute-force oracle: enumerate all candidate neighbor subsets of the
    /// required size and take the minimum distance sum.
    fn krum_score_oracle(models: &[ModelVector], f_dev: usize, i: usize) -> f64 {
        let k = models.len();
        let take = k - f_dev - 2;
        let others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        let mut best = f64::INFINITY;
        // Choose `take` of the others via bitmask enumeration.
        for mask in 0u32..(1 << others.len()) {
            if mask.count_ones() as usize != take {
                continue;
            }
            let mut sum = 0.0;
            for (bit, &j) in others.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    sum += models[i].squared_distance(&models[j]);
                }
            }
            best = best.min(sum);
        }
        best
    }

    #[test]
    fn krum_scores_1d_example() {
        let models = vec![mv(&[0.0]), mv(&[0.1]), mv(&[0.2]), mv(&[10.0])];
        let scores = krum_scores(&models, 1).unwrap();
        let expect = [0.01, 0.01, 0.01, 96.04];
        for (s, e) in scores.iter().zip(expect.iter()) {
            assert!((s - e).abs() < 1e-9, "{s} vs {e}");
        }
        // Cross-check against the exhaustive oracle.
        for i in 0..models.len() {
            assert!((scores[i] - krum_score_oracle(&models, 1, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_models_score_zero() {
        let models = vec![mv(&[1.0, -2.0]); 6];
        let scores = krum_scores(&models, 1).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn krum_scores_match_bruteforce_up_to_k7() {
        let mut rng = stream_rng(21, 0);
        for k in 4..=7usize {
            for f_dev in 0..=(k - 3) {
                for _ in 0..25 {
                    let models: Vec<ModelVector> =
                        (0..k).map(|_| gaussian_attack(3, &mut rng)).collect();
                    let scores = krum_scores(&models, f_dev).unwrap();
                    for i in 0..k {
                        let oracle = krum_score_oracle(&models, f_dev, i);
                        assert!(
                            (scores[i] - oracle).abs() < 1e-10 * oracle.max(1.0),
                            "K={k} f={f_dev} model {i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn multi_krum_1d_example() {
        let models = vec![mv(&[0.0]), mv(&[0.1]), mv(&[0.2]), mv(&[10.0])];
        let (selected, agg) = multi_krum(&models, 1).unwrap();
        assert_eq!(selected, vec![0, 1, 2]);
        assert!((agg.values()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn multi_krum_with_zero_faults_is_plain_mean() {
        let mut rng = stream_rng(33, 0);
        let models: Vec<ModelVector> = (0..6).map(|_| gaussian_attack(4, &mut rng)).collect();
        let (selected, agg) = multi_krum(&models, 0).unwrap();
        assert_eq!(selected, (0..6).collect::<Vec<_>>());
        let avg = fedavg(&models, &[1.0; 6]).unwrap();
        for (a, b) in agg.values().iter().zip(avg.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_krum_excludes_gaussian_outliers() {
        // 6 clustered honest models and 4 N(0,1) outliers in dimension 100.
        let mut rng = stream_rng(77, 5);
        let mut models = Vec::new();
        for _ in 0..6 {
            let mut m = gaussian_attack(100, &mut rng);
            for v in m.values_mut() {
                *v = 2.0 + 0.01 * *v;
            }
            models.push(m);
        }
        for _ in 0..4 {
            models.push(gaussian_attack(100, &mut rng));
        }
        let (selected, _) = multi_krum(&models, 4).unwrap();
        assert_eq!(selected, vec![0, 1, 2, 3, 4, 5]);
        // Sanity-check the seeded geometry with raw distances: every honest
        // pair is closer than any honest-outlier pair.
        let max_honest = (0..6)
            .flat_map(|i| ((i + 1)..6).map(move |j| (i, j)))
            .map(|(i, j)| models[i].squared_distance(&models[j]))
            .fold(0.0f64, f64::max);
        let min_cross = (0..6)
            .flat_map(|i| (6..10).map(move |j| (i, j)))
            .map(|(i, j)| models[i].squared_distance(&models[j]))
            .fold(f64::INFINITY, f64::min);
        assert!(max_honest < min_cross);
    }

    #[test]
    fn krum_rejects_bad_input() {
        let models = vec![mv(&[0.0]), mv(&[1.0]), mv(&[2.0])];
        assert!(krum_scores(&models, 1).is_err()); // K < f + 3
        let mismatched = vec![mv(&[0.0]), mv(&[1.0, 2.0]), mv(&[2.0]), mv(&[3.0])];
        assert!(krum_scores(&mismatched, 1).is_err());
    }

    #[test]
    fn fedavg_examples() {
        let two = vec![mv(&[0.0]), mv(&[2.0])];
        assert_eq!(fedavg(&two, &[1.0, 1.0]).unwrap().values(), &[1.0]);
        let one = vec![mv(&[3.5, -1.0])];
        assert_eq!(fedavg(&one, &[7.0]).unwrap().values(), &[3.5, -1.0]);
        let sized = vec![mv(&[0.0]), mv(&[4.0])];
        assert_eq!(fedavg(&sized, &[1.0, 3.0]).unwrap().values(), &[3.0]);
        assert!(fedavg(&two, &[0.0, 0.0]).is_err());
        assert!(fedavg(&two, &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn gaussian_attack_is_reproducible_with_unit_moments() {
        let a = gaussian_attack(64, &mut stream_rng(9, 9));
        let b = gaussian_attack(64, &mut stream_rng(9, 9));
        assert_eq!(a, b);

        let mut rng = stream_rng(10, 0);
        let big = gaussian_attack(1_000_000, &mut rng);
        let n = big.dim() as f64;
        let mean: f64 = big.values().iter().sum::<f64>() / n;
        let var: f64 = big.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn byzantine_exactness_with_identical_honest_majority() {
        // f arbitrary models among K with the rest identical: the aggregate
        // equals the honest model exactly.
        let honest = mv(&[1.0, -0.5, 3.0]);
        let mut models = vec![honest.clone(); 7];
        models[2] = mv(&[100.0, 100.0, 100.0]);
        models[5] = mv(&[-40.0, 0.0, 9.0]);
        let (selected, agg) = multi_krum(&models, 2).unwrap();
        assert!(!selected.contains(&2) && !selected.contains(&5));
        assert_eq!(agg, honest);
    }

    proptest! {
        /// Permuting the inputs permutes the selection and leaves the
        /// aggregate unchanged.
        #[test]
        fn multi_krum_permutation_equivariance(seed in 0u64..500) {
            let mut rng = stream_rng(seed, 2);
            let models: Vec<ModelVector> = (0..7).map(|_| gaussian_attack(5, &mut rng)).collect();
            let (sel, agg) = multi_krum(&models, 2).unwrap();
            // Rotate the inputs by 3.
            let perm: Vec<usize> = (0..7).map(|i| (i + 3) % 7).collect();
            let permuted: Vec<ModelVector> = perm.iter().map(|&i| models[i].clone()).collect();
            let (sel_p, agg_p) = multi_krum(&permuted, 2).unwrap();
            // Map the permuted selection back to original indices.
            let mut back: Vec<usize> = sel_p.iter().map(|&i| perm[i]).collect();
            back.sort_unstable();
            prop_assert_eq!(back, sel);
            for (a, b) in agg.values().iter().zip(agg_p.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        /// Adding a constant vector to every model shifts the aggregate by
        /// that constant and leaves the selection unchanged.
        #[test]
        fn multi_krum_translation_equivariance(seed in 0u64..500, shift in -5.0f64..5.0) {
            let mut rng = stream_rng(seed, 3);
            let models: Vec<ModelVector> = (0..6).map(|_| gaussian_attack(4, &mut rng)).collect();
            let (sel, agg) = multi_krum(&models, 1).unwrap();
            let shifted: Vec<ModelVector> = models
                .iter()
                .map(|m| mv(&m.values().iter().map(|v| v + shift).collect::<Vec<_>>()))
                .collect();
            let (sel_s, agg_s) = multi_krum(&shifted, 1).unwrap();
            prop_assert_eq!(sel_s, sel);
            for (a, b) in agg.values().iter().zip(agg_s.values()) {
                prop_assert!((a + shift - b).abs() < 1e-9);
            }
        }
    }
}
