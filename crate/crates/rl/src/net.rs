//! Small fully connected networks with hand-written reverse mode, and Adam.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Multilayer perceptron with `tanh` hidden layers and a linear output.
///
/// Parameters are laid out flat, layer by layer: the weight matrix in
/// row-major order followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Layer inputs kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<DVector<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().expect("trace has the input at least")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let weights = sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = sizes[1..].iter().map(|&m| DVector::zeros(m)).collect();
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// Uniform Glorot initialization; the output layer is scaled by `out_gain`.
    pub fn random(sizes: &[usize], out_gain: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.weights.len() - 1;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let bound = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            let gain = if l == last { out_gain } else { 1.0 };
            w.iter_mut().for_each(|x| *x = gain * rng.random_range(-bound..bound));
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn layers(&self) -> impl Iterator<Item = (&DMatrix<f64>, &DVector<f64>)> {
        self.weights.iter().zip(&self.biases)
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.layers().enumerate() {
            h = w * h + b;
            if l < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        h
    }

    pub fn forward_trace(&self, x: &DVector<f64>) -> Trace {
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.clone());
        for (l, (w, b)) in self.layers().enumerate() {
            let mut h = w * activations.last().expect("input pushed") + b;
            if l < last {
                h.apply(|v| *v = v.tanh());
            }
            activations.push(h);
        }
        Trace { activations }
    }

    /// Accumulates `∂(gᵀ·out)/∂θ` into `grad` (flat layout) and returns `∂(gᵀ·out)/∂x`.
    pub fn backward(&self, trace: &Trace, grad_out: &DVector<f64>, grad: &mut [f64]) -> DVector<f64> {
        assert_eq!(grad.len(), self.num_params());
        let offsets = self.offsets();
        let mut delta = grad_out.clone();
        for l in (0..self.weights.len()).rev() {
            if l + 1 < self.weights.len() {
                // tanh'(z) = 1 − h²
                delta.zip_apply(&trace.activations[l + 1], |d, h| *d *= 1.0 - h * h);
            }
            let input = &trace.activations[l];
            let (rows, cols) = self.weights[l].shape();
            let gw = &mut grad[offsets[l]..offsets[l] + rows * cols + rows];
            for i in 0..rows {
                let di = delta[i];
                if di != 0.0 {
                    for j in 0..cols {
                        gw[i * cols + j] += di * input[j];
                    }
                }
                gw[rows * cols + i] += di;
            }
            delta = self.weights[l].tr_mul(&delta);
        }
        delta
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let o = acc;
                acc += w[1] * w[0] + w[1];
                o
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.layers() {
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params());
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = params[k];
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                *v = params[k];
                k += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` down to `max_norm` if it is longer; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_round_trip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(&[3, 4, 2], 1.0, &mut rng);
        let flat = net.flatten();
        assert_eq!(flat.len(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(flat[1], net.weights[0][(0, 1)]);
        assert_eq!(flat[3], net.weights[0][(1, 0)]);
        let mut other = Mlp::zeros(&[3, 4, 2]);
        other.set_flat(&flat);
        assert_eq!(other, net);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[5, 7, 3]);
        assert_eq!(net.forward(&DVector::from_element(5, 2.0)), DVector::zeros(3));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(2, 1e-2);
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, -2.0]);
        let mut opt = Adam::new(2, 1e-2);
        opt.step(&mut p, &[1.0, -1.0]);
        assert!((p[0] - (1.0 - 1e-2)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 1e-2)).abs() < 1e-6);
    }

    #[test]
    fn grad_clip() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
