//! Plain multilayer perceptron with hand-written reverse-mode gradients.
//!
//! Hidden layers are affine + rectifier; the final layer is affine. Layers
//! iterate in fixed order and batch gradients accumulate sequentially, so
//! every training run is bit-deterministic for a given seed.

use rand::Rng;

/// One affine layer, weights row-major `(out_dim x in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        Self { w, b: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Gradient accumulator with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for (w, b) in &self.layers {
            for v in w.iter().chain(b.iter()) {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    /// Rescale so the global gradient norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for (w, b) in &mut self.layers {
                w.iter_mut().for_each(|v| *v *= scale);
                b.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
}

/// Forward-pass cache: the input to each layer plus each pre-activation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    layer_inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims.windows(2).map(|w| Layer::new(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("nonempty").in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if l != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(cur.clone());
            let mut z = Vec::new();
            layer.affine(&cur, &mut z);
            preacts.push(z.clone());
            if l != last {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = z;
        }
        (cur, MlpCache { layer_inputs, preacts })
    }

    /// Reverse-mode pass. `upstream` is dL/d(output); parameter gradients
    /// accumulate into `grads` and the input gradient is returned.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (d, z) in delta.iter_mut().zip(&cache.preacts[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.layer_inputs[l];
            let (gw, gb) = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                gb[o] += d;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] = value;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = value;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn grad_param(grads: &MlpGrads, mut idx: usize) -> f64 {
        for (gw, gb) in &grads.layers {
            if idx < gw.len() {
                return gw[idx];
            }
            idx -= gw.len();
            if idx < gb.len() {
                return gb[idx];
            }
            idx -= gb.len();
        }
        panic!("parameter index out of range");
    }

    /// Polyak update toward an online network: `self <- kappa*online +
    /// (1-kappa)*self` for every parameter.
    pub fn polyak_from(&mut self, online: &Mlp, kappa: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tv, ov) in t.w.iter_mut().zip(&o.w) {
                *tv = kappa * ov + (1.0 - kappa) * *tv;
            }
            for (tv, ov) in t.b.iter_mut().zip(&o.b) {
                *tv = kappa * ov + (1.0 - kappa) * *tv;
            }
        }
    }
}

/// Gradient-step rule applied to a whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent at the given rate.
    Sgd,
    /// Adam with standard moment coefficients (0.9, 0.999, eps 1e-8).
    Adam,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &Mlp) -> Self {
        let n = net.num_params();
        Self { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descend `net` along `grads` at rate `lr`.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                let mut idx = 0;
                for (l, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
                    for (w, g) in l.w.iter_mut().zip(gw) {
                        *w -= lr * g;
                    }
                    for (b, g) in l.b.iter_mut().zip(gb) {
                        *b -= lr * g;
                    }
                    idx += gw.len() + gb.len();
                }
                let _ = idx;
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let bc1 = 1.0 - B1.powi(self.t as i32);
                let bc2 = 1.0 - B2.powi(self.t as i32);
                let mut idx = 0;
                for (l, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
                    for (w, &g) in l.w.iter_mut().zip(gw.iter()) {
                        let m = &mut self.m[idx];
                        let v = &mut self.v[idx];
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                        idx += 1;
                    }
                    for (b, &g) in l.b.iter_mut().zip(gb.iter()) {
                        let m = &mut self.m[idx];
                        let v = &mut self.v[idx];
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                        idx += 1;
                    }
                }
            }
        }
    }
}
