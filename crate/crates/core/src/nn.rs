//! Small fully connected networks over a flat parameter vector.
//!
//! Every network only stores offsets into one shared `[f64]`; the optimizer,
//! checkpoints and the finite-difference checker all see a single slice.
//! Backward passes accumulate into a gradient slice with the same layout.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hands out consecutive ranges of the flat parameter vector.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    len: usize,
}

impl ParamAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&mut self, count: usize) -> usize {
        let off = self.len;
        self.len += count;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Affine layer `y = x Wᵀ + b`, `W` stored row-major as `fan_out x fan_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Dense {
    fn new(alloc: &mut ParamAllocator, fan_in: usize, fan_out: usize) -> Self {
        let weight_offset = alloc.take(fan_in * fan_out);
        let bias_offset = alloc.take(fan_out);
        Self {
            fan_in,
            fan_out,
            weight_offset,
            bias_offset,
        }
    }

    pub fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.fan_out, self.fan_in),
            &p[self.weight_offset..self.weight_offset + self.fan_in * self.fan_out],
        )
        .expect("layout")
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.bias_offset..self.bias_offset + self.fan_out])
    }

    fn weight_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape(
            (self.fan_out, self.fan_in),
            &mut p[self.weight_offset..self.weight_offset + self.fan_in * self.fan_out],
        )
        .expect("layout")
    }

    fn bias_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.bias_offset..self.bias_offset + self.fan_out])
    }

    fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p).t());
        y += &self.bias(p);
        y
    }
}

/// ReLU network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input of every layer.
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(alloc: &mut ParamAllocator, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths.windows(2).map(|w| Dense::new(alloc, w[0], w[1])).collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for layer in &self.layers {
            let bound = if layer.fan_in == 0 { 0.0 } else { 1.0 / (layer.fan_in as f64).sqrt() };
            let mut draw = || if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            layer.weight_mut(p).iter_mut().for_each(|w| *w = draw());
            layer.bias_mut(p).iter_mut().for_each(|b| *b = draw());
        }
    }

    /// Zero the output layer and set its bias, so the network is constant.
    pub fn set_constant(&self, p: &mut [f64], value: f64) {
        let last = self.layers.last().expect("at least one layer");
        last.weight_mut(p).fill(0.0);
        last.bias_mut(p).fill(value);
    }

    pub fn infer(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(p, x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(relu);
            h = layer.forward(p, h.view());
        }
        h
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = self.layers[0].forward(p, x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(relu);
            let next = layer.forward(p, h.view());
            inputs.push(h);
            h = next;
        }
        (h, MlpTape { inputs })
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, p: &[f64], tape: &MlpTape, grad_out: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let mut g = grad_out;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[k];
            {
                let mut gw = layer.weight_mut(grads);
                gw += &g.t().dot(input);
            }
            {
                let mut gb = layer.bias_mut(grads);
                gb += &g.sum_axis(Axis(0));
            }
            let mut gx = g.dot(&layer.weight(p));
            if k > 0 {
                // input of layer k is relu(pre); relu(pre) > 0 exactly where pre > 0
                gx.zip_mut_with(input, |gv, &a| {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            g = gx;
        }
        g
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adam with the usual defaults (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use ndarray::array;

    fn net(hidden: &[usize]) -> (Mlp, Vec<f64>) {
        let mut alloc = ParamAllocator::new();
        let mlp = Mlp::new(&mut alloc, 3, hidden, 2);
        let mut p = vec![0.0; alloc.len()];
        mlp.init(&mut p, &mut substream(0, Stream::ModelInit, 0));
        (mlp, p)
    }

    #[test]
    fn parameter_count() {
        let (mlp, p) = net(&[4, 5]);
        assert_eq!(p.len(), 3 * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(mlp.layers().len(), 3);
    }

    #[test]
    fn infer_matches_forward() {
        let (mlp, p) = net(&[6, 6]);
        let x = array![[0.3, -1.0, 2.0], [0.0, 0.5, -0.5]];
        let (y, _) = mlp.forward(&p, x.view());
        assert_eq!(y, mlp.infer(&p, x.view()));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mlp, p) = net(&[5, 4]);
        let x = array![[0.3, -1.0, 2.0], [0.1, 0.5, -0.5], [1.5, 0.2, 0.7]];
        let w = array![[1.0, -2.0], [0.5, 0.25], [-1.0, 3.0]];
        let loss = |p: &[f64], x: &Array2<f64>| (&mlp.infer(p, x.view()) * &w).sum();
        let (_, tape) = mlp.forward(&p, x.view());
        let mut grads = vec![0.0; p.len()];
        let gx = mlp.backward(&p, &tape, w.clone(), &mut grads);
        let h = 1e-6;
        for k in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[k] += h;
            lo[k] -= h;
            let fd = (loss(&hi, &x) - loss(&lo, &x)) / (2.0 * h);
            assert!((fd - grads[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", grads[k]);
        }
        for ((i, j), g) in gx.indexed_iter() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[(i, j)] += h;
            lo[(i, j)] -= h;
            let fd = (loss(&p, &hi) - loss(&p, &lo)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn zero_input_layer() {
        let mut alloc = ParamAllocator::new();
        let mlp = Mlp::new(&mut alloc, 0, &[4], 1);
        let mut p = vec![0.0; alloc.len()];
        mlp.init(&mut p, &mut substream(0, Stream::ModelInit, 0));
        let y = mlp.infer(&p, Array2::zeros((3, 0)).view());
        assert_eq!(y.dim(), (3, 1));
        mlp.set_constant(&mut p, 0.7);
        assert!(mlp.infer(&p, Array2::zeros((2, 0)).view()).iter().all(|&v| v == 0.7));
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * (1.0 + y));
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
