//! Regression from image features to the view-relation vector, so encoding
//! can skip the stability evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Sgd};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub net: Mlp,
    pub seed: u64,
}

impl MemoryModel {
    pub fn new(input: usize, views: usize, seed: u64) -> Self {
        let mut init = rng::keyed(seed, Stream::Init, 3000);
        Self {
            net: Mlp::new(&[input, views], Activation::Relu, Activation::Sigmoid, &mut init),
            seed,
        }
    }

    pub fn views(&self) -> usize {
        self.net.output_dim()
    }

    /// Predicted relation vector of one image, entries in [0, 1].
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.net.forward(features)
    }

    /// One SGD pass; returns the mean squared error over the pass.
    pub fn fit_epoch(&mut self, xs: &[&[f64]], targets: &[Vec<f64>], opt: &mut Sgd, batch: usize, epoch: u64) -> f64 {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut rng::keyed(self.seed, Stream::Shuffle, 3000 + epoch));
        let mut grads = vec![0.0; self.net.params.len()];
        let mut total = 0.0;
        let m = self.views() as f64;
        for chunk in order.chunks(batch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let trace = self.net.forward_trace(xs[i]);
                let g: Vec<f64> = trace.output().iter().zip(&targets[i]).map(|(p, t)| 2.0 * (p - t) / m).collect();
                total += trace.output().iter().zip(&targets[i]).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / m;
                self.net.backward(&trace, &g, &mut grads);
            }
            let s = 1.0 / chunk.len() as f64;
            grads.iter_mut().for_each(|g| *g *= s);
            opt.step(&mut self.net.params, &grads);
        }
        total / xs.len().max(1) as f64
    }

    pub fn mse(&self, xs: &[&[f64]], targets: &[Vec<f64>]) -> f64 {
        let m = self.views() as f64;
        xs.iter()
            .zip(targets)
            .map(|(x, t)| self.predict(x).iter().zip(t).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / m)
            .sum::<f64>()
            / xs.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.5,
            momentum: 0.9,
            batch: 64,
            seed: 0,
        }
    }
}

/// Fits a memory model to per-image targets. Returns the model and its final
/// training MSE.
pub fn train_memory(xs: &[&[f64]], targets: &[Vec<f64>], cfg: MemoryConfig) -> Result<(MemoryModel, f64)> {
    let input = xs.first().map(|x| x.len()).ok_or_else(|| Error::invalid("memory training needs at least one image"))?;
    let views = targets.first().map(|t| t.len()).unwrap_or(0);
    if xs.len() != targets.len() {
        return Err(Error::shape("one target per feature vector required"));
    }
    if xs.iter().any(|x| x.len() != input) || targets.iter().any(|t| t.len() != views) {
        return Err(Error::shape("inconsistent feature or target dimensions"));
    }
    let mut model = MemoryModel::new(input, views, cfg.seed);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, model.net.params.len());
    for e in 0..cfg.epochs {
        model.fit_epoch(xs, targets, &mut opt, cfg.batch, e as u64);
    }
    let mse = model.mse(xs, targets);
    Ok((model, mse))
}

/// Mean predicted relation vector over a set of images.
pub fn predict_relation(model: &MemoryModel, xs: &[&[f64]]) -> Vec<f64> {
    let mut mean = vec![0.0; model.views()];
    for x in xs {
        for (m, p) in mean.iter_mut().zip(model.predict(x)) {
            *m += p;
        }
    }
    let n = xs.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn inputs(n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut r = rng::stream(11, Stream::Synth);
        (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn constant_target_is_learned() {
        let xs = inputs(200, 6);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let target = vec![vec![0.9, 0.43, 0.2, 0.68]; 200];
        let cfg = MemoryConfig { epochs: 100, lr: 0.2, ..Default::default() };
        let (model, mse) = train_memory(&refs, &target, cfg).unwrap();
        assert!(mse < 1e-3, "mse {mse}");
        let p = model.predict(&xs[0]);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(p, model.predict(&xs[0]));
        let mean = predict_relation(&model, &refs);
        assert!(mean.iter().zip(&target[0]).all(|(a, b)| (a - b).abs() < 0.05));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let xs = inputs(5, 3);
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let cfg = MemoryConfig { epochs: 0, seed: 4, ..Default::default() };
        let (model, _) = train_memory(&refs, &vec![vec![0.5; 2]; 5], cfg).unwrap();
        assert_eq!(model, MemoryModel::new(3, 2, 4));
        assert!(train_memory(&refs, &vec![vec![0.5; 2]; 4], cfg).is_err());
    }
}
