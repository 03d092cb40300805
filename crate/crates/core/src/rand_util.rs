//! Deterministic randomness helpers shared across the simulator.
//!
//! All stochastic components draw from seeded [`ChaCha8Rng`] streams so that
//! every run is bit-reproducible. Normal variates come from a Box-Muller
//! transform rather than a ziggurat so the draw count per sample is fixed,
//! which keeps independent streams aligned regardless of rejection behavior.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent child seed from a base seed and a stream index.
///
/// SplitMix64 finalizer over `base ^ (stream+1)*phi`; children for distinct
/// streams are decorrelated even for adjacent indices.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ (stream.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded generator for a named stream.
pub fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

/// One pair of independent standard normal variates (Box-Muller).
///
/// Consumes exactly two uniforms from the stream.
pub fn normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    // 1 - gen() lies in (0, 1], keeping the log argument positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// One standard normal variate; consumes a full pair to keep stream
/// advancement independent of how callers interleave draws.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    normal_pair(rng).0
}

/// Fill a vector with i.i.d. standard normals.
pub fn normal_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    while out.len() + 2 <= dim {
        let (a, b) = normal_pair(rng);
        out.push(a);
        out.push(b);
    }
    if out.len() < dim {
        out.push(normal_pair(rng).0);
    }
    out
}

/// Uniform sample from the standard simplex (flat Dirichlet), via normalized
/// exponential draws.
pub fn uniform_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    assert!(n >= 1);
    let mut draws: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    for d in &mut draws {
        *d /= total;
    }
    draws
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut rng = stream_rng(7, 0);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let (a, b) = normal_pair(&mut rng);
            sum += a + b;
            sq += a * a + b * b;
        }
        let mean = sum / (2.0 * n as f64);
        let var = sq / (2.0 * n as f64) - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn simplex_sums_to_one() {
        let mut rng = stream_rng(11, 3);
        for _ in 0..100 {
            let s = uniform_simplex(14, &mut rng);
            let total: f64 = s.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(s.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn simplex_is_symmetric_on_average() {
        let mut rng = stream_rng(13, 0);
        let n = 14;
        let mut mean = vec![0.0; n];
        let draws = 100_000;
        for _ in 0..draws {
            let s = uniform_simplex(n, &mut rng);
            for (m, v) in mean.iter_mut().zip(&s) {
                *m += v;
            }
        }
        for m in &mean {
            let avg = m / draws as f64;
            let expect = 1.0 / n as f64;
            assert!(
                (avg - expect).abs() < 0.02 * expect,
                "mean share {avg} vs {expect}"
            );
        }
    }
}
