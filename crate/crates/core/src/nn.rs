//! Small fully connected networks with hand-written backpropagation.
//!
//! Parameters of all layers live in one flat vector: for each layer the
//! row-major `out x in` weight matrix followed by the bias.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first.
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub params: Vec<f64>,
}

/// Activations recorded during a forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has an input")
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output widths");
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; Self::param_count(sizes)],
        }
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// (weights offset, bias offset) of `layer`.
    fn offsets(&self, layer: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=layer].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        (start, start + i * o)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).activations.pop().unwrap()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.input_dim(), "mlp input width");
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        for layer in 0..self.sizes.len() - 1 {
            let (w_off, b_off) = self.offsets(layer);
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let act = self.activation(layer);
            let input = activations.last().unwrap();
            let out = (0..n_out)
                .map(|o| {
                    let row = &self.params[w_off + o * n_in..w_off + (o + 1) * n_in];
                    let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + self.params[b_off + o];
                    act.apply(z)
                })
                .collect();
            activations.push(out);
        }
        Trace { activations }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta: Vec<f64> = grad_out.to_vec();
        for layer in (0..self.sizes.len() - 1).rev() {
            let (w_off, b_off) = self.offsets(layer);
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let act = self.activation(layer);
            let out = &trace.activations[layer + 1];
            let input = &trace.activations[layer];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(*y);
            }
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads[b_off + o] += d;
                let row = w_off + o * n_in;
                for i in 0..n_in {
                    grads[row + i] += d * input[i];
                    grad_in[i] += d * self.params[row + i];
                }
            }
            delta = grad_in;
        }
        delta
    }
}

/// Mini-batch SGD with classical momentum: `v = mu v + g; p -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, n_params: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn numeric_input_grad(net: &Mlp, x: &[f64], w: &[f64]) -> Vec<f64> {
        let f = |x: &[f64]| net.forward(x).iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        (0..x.len())
            .map(|i| {
                let h = 1e-6;
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::stream(3, Stream::Init);
        for (hidden, out) in [(Activation::Relu, Activation::Tanh), (Activation::Tanh, Activation::Sigmoid), (Activation::Relu, Activation::Identity)] {
            let net = Mlp::new(&[5, 7, 3], hidden, out, &mut r);
            let x = [0.3, -0.2, 0.9, 0.1, -0.7];
            let w = [0.5, -1.0, 2.0];
            let trace = net.forward_trace(&x);
            let mut grads = vec![0.0; net.params.len()];
            let gin = net.backward(&trace, &w, &mut grads);
            for (a, n) in gin.iter().zip(numeric_input_grad(&net, &x, &w)) {
                assert!((a - n).abs() < 1e-6, "{a} vs {n}");
            }
            // parameter gradient spot checks
            for k in [0, 4, 17, net.params.len() - 1] {
                let mut p = net.clone();
                let mut m = net.clone();
                p.params[k] += 1e-6;
                m.params[k] -= 1e-6;
                let f = |n: &Mlp| n.forward(&x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let num = (f(&p) - f(&m)) / 2e-6;
                assert!((grads[k] - num).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_network_outputs_activation_of_zero() {
        let net = Mlp::zeros(&[4, 3], Activation::Relu, Activation::Tanh);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0]), vec![0.0; 3]);
        let net = Mlp::zeros(&[4, 2], Activation::Relu, Activation::Sigmoid);
        assert_eq!(net.forward(&[1.0; 4]), vec![0.5; 2]);
    }

    #[test]
    fn sgd_descends_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Sgd::new(0.05, 0.9, 2);
        for _ in 0..300 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }
}
