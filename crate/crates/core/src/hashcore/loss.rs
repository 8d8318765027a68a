//! Pairwise hashing loss and the relation-weighted objective.
//!
//! For relaxed codes `b1`, `b2` with squared distance `d` and similarity
//! `y` in {-1, +1}:
//!
//! ```text
//! L = -(y - 1) max(a - d, 0) + (y + 1) d + alpha (|| |b1| - 1 ||_1 + || |b2| - 1 ||_1)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Hinge margin on the squared distance of dissimilar pairs.
    pub a: f64,
    /// Weight of the pull towards the vertices of the hypercube.
    pub alpha: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { a: 2.0, alpha: 0.01 }
    }
}

fn check(b1: &[f64], b2: &[f64], y: i8) -> Result<()> {
    if b1.len() != b2.len() {
        return Err(Error::shape(format!("code lengths differ: {} vs {}", b1.len(), b2.len())));
    }
    if y != 1 && y != -1 {
        return Err(Error::invalid(format!("similarity label must be +1 or -1, got {y}")));
    }
    Ok(())
}

fn sq_dist(b1: &[f64], b2: &[f64]) -> f64 {
    b1.iter().zip(b2).map(|(x, z)| (x - z) * (x - z)).sum()
}

fn vertex_penalty(b: &[f64]) -> f64 {
    b.iter().map(|v| (v.abs() - 1.0).abs()).sum()
}

/// Subgradient of `| |v| - 1 |`, zero at the kinks v = 0 and |v| = 1.
#[inline]
fn vertex_grad(v: f64) -> f64 {
    let outer = v.abs() - 1.0;
    if outer == 0.0 || v == 0.0 {
        0.0
    } else {
        outer.signum() * v.signum()
    }
}

pub(crate) fn pair_loss_unchecked(b1: &[f64], b2: &[f64], y: i8, p: LossParams) -> f64 {
    let d = sq_dist(b1, b2);
    let y = y as f64;
    -(y - 1.0) * (p.a - d).max(0.0) + (y + 1.0) * d + p.alpha * (vertex_penalty(b1) + vertex_penalty(b2))
}

pub fn pair_loss(b1: &[f64], b2: &[f64], y: i8, p: LossParams) -> Result<f64> {
    check(b1, b2, y)?;
    Ok(pair_loss_unchecked(b1, b2, y, p))
}

/// Adds `scale * dL/db1` and `scale * dL/db2` into the given buffers.
pub(crate) fn accumulate_pair_grad(b1: &[f64], b2: &[f64], y: i8, p: LossParams, scale: f64, g1: &mut [f64], g2: &mut [f64]) {
    let d = sq_dist(b1, b2);
    // coefficient of (b1 - b2) in dL/db1
    let coef = if y == 1 {
        2.0 * 2.0
    } else if d < p.a {
        // -(y-1) = 2, d/db1 of (a - d) = -2 (b1 - b2)
        -2.0 * 2.0
    } else {
        0.0
    };
    for k in 0..b1.len() {
        let diff = coef * (b1[k] - b2[k]);
        g1[k] += scale * (diff + p.alpha * vertex_grad(b1[k]));
        g2[k] += scale * (-diff + p.alpha * vertex_grad(b2[k]));
    }
}

/// Analytic subgradient of [`pair_loss`] with respect to both codes.
pub fn pair_loss_grad(b1: &[f64], b2: &[f64], y: i8, p: LossParams) -> Result<(Vec<f64>, Vec<f64>)> {
    check(b1, b2, y)?;
    let mut g1 = vec![0.0; b1.len()];
    let mut g2 = vec![0.0; b2.len()];
    accumulate_pair_grad(b1, b2, y, p, 1.0, &mut g1, &mut g2);
    Ok((g1, g2))
}

/// Similarity labels of every ordered pair in a batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairLabels {
    n: usize,
    y: Vec<i8>,
}

impl PairLabels {
    /// `y(n, i) = +1` iff the class labels of n and i agree.
    pub fn from_classes(labels: &[u8]) -> Self {
        let n = labels.len();
        let y = (0..n * n).map(|k| if labels[k / n] == labels[k % n] { 1 } else { -1 }).collect();
        Self { n, y }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> i8 {
        self.y[a * self.n + b]
    }
}

/// Relation-weighted objective over a batch:
/// `sum_n sum_m E[n][m] sum_i L(codes[m][n], codes[m][i], y(n, i))`.
///
/// `codes[m][n]` is the relaxed code of image n under view m. Terms whose
/// weight is exactly zero are skipped, so they contribute nothing whatever
/// the codes hold. Summation order is n, then m, then i.
pub fn weighted_objective(weights: &[Vec<f64>], codes: &[Vec<Vec<f64>>], labels: &PairLabels, p: LossParams) -> Result<f64> {
    let n = labels.len();
    if weights.len() != n {
        return Err(Error::shape(format!("{} weight rows for a batch of {n}", weights.len())));
    }
    let m = codes.len();
    if let Some(row) = weights.iter().find(|r| r.len() != m) {
        return Err(Error::shape(format!("weight row of length {} for {m} views", row.len())));
    }
    for (v, view) in codes.iter().enumerate() {
        if view.len() != n {
            return Err(Error::shape(format!("view {v} has {} codes for a batch of {n}", view.len())));
        }
        if let Some(c) = view.iter().find(|c| c.len() != view[0].len()) {
            return Err(Error::shape(format!("view {v} mixes code lengths {} and {}", view[0].len(), c.len())));
        }
    }
    let mut total = 0.0;
    for a in 0..n {
        for (v, view) in codes.iter().enumerate() {
            let w = weights[a][v];
            if w == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for b in 0..n {
                inner += pair_loss_unchecked(&view[a], &view[b], labels.get(a, b), p);
            }
            total += w * inner;
        }
    }
    Ok(total)
}

/// Gradient of [`weighted_objective`] (times `scale`) with respect to every
/// code, accumulated into `grads[m][n]`.
pub(crate) fn weighted_objective_grad(
    weights: &[Vec<f64>],
    codes: &[Vec<Vec<f64>>],
    labels: &PairLabels,
    p: LossParams,
    scale: f64,
    grads: &mut [Vec<Vec<f64>>],
) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for a in 0..n {
        for v in 0..codes.len() {
            let w = weights[a][v];
            if w == 0.0 {
                continue;
            }
            for b in 0..n {
                let y = labels.get(a, b);
                total += w * pair_loss_unchecked(&codes[v][a], &codes[v][b], y, p);
                if a == b {
                    let (mut g1, mut g2) = (vec![0.0; codes[v][a].len()], vec![0.0; codes[v][a].len()]);
                    accumulate_pair_grad(&codes[v][a], &codes[v][b], y, p, scale * w, &mut g1, &mut g2);
                    for (g, (x, z)) in grads[v][a].iter_mut().zip(g1.iter().zip(&g2)) {
                        *g += x + z;
                    }
                } else {
                    let (lo, hi) = grads[v].split_at_mut(a.max(b));
                    let (ga, gb) = if a < b { (&mut lo[a], &mut hi[0]) } else { (&mut hi[0], &mut lo[b]) };
                    accumulate_pair_grad(&codes[v][a], &codes[v][b], y, p, scale * w, ga, gb);
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use rand::Rng as _;

    const P: LossParams = LossParams { a: 2.0, alpha: 0.01 };

    #[test]
    fn loss_examples() {
        let ones = vec![1.0; 6];
        assert_eq!(pair_loss(&ones, &ones, 1, P).unwrap(), 0.0);
        assert_eq!(pair_loss(&ones, &ones, -1, P).unwrap(), 4.0);
        assert!((pair_loss(&[0.5], &[0.5], 1, P).unwrap() - 0.01).abs() < 1e-15);
        assert!(pair_loss(&[0.5], &[0.5, 0.1], 1, P).is_err());
        assert!(pair_loss(&[0.5], &[0.5], 0, P).is_err());
    }

    #[test]
    fn gradient_special_cases() {
        let b = vec![0.3, -0.4, 0.9];
        let (g1, g2) = pair_loss_grad(&b, &b, 1, LossParams { a: 2.0, alpha: 0.0 }).unwrap();
        assert!(g1.iter().chain(&g2).all(|&g| g == 0.0));
        // dissimilar and already far apart: only the regulariser acts
        let b1 = vec![0.9, 0.9];
        let b2 = vec![-0.9, -0.9];
        let (g1, _) = pair_loss_grad(&b1, &b2, -1, P).unwrap();
        for (g, v) in g1.iter().zip(&b1) {
            assert!((g - P.alpha * vertex_grad(*v)).abs() < 1e-15);
        }
        assert_eq!(vertex_grad(1.0), 0.0);
        assert_eq!(vertex_grad(0.0), 0.0);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_vertices() {
        let mut r = rng::stream(1, Stream::Init);
        for _ in 0..500 {
            let b1: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let b2: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            for y in [1, -1] {
                assert!(pair_loss(&b1, &b2, y, P).unwrap() > 0.0);
            }
        }
        let v1 = [1.0, -1.0, 1.0];
        let v2 = [-1.0, 1.0, 1.0];
        assert_eq!(pair_loss(&v1, &v2, -1, P).unwrap(), 0.0);
        assert!(pair_loss(&v1, &v2, 1, P).unwrap() > 0.0);
    }

    fn batch(n: usize, m: usize, q: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut r = rng::stream(seed, Stream::Init);
        (0..m).map(|_| (0..n).map(|_| (0..q).map(|_| r.random_range(-1.0..1.0)).collect()).collect()).collect()
    }

    #[test]
    fn objective_reductions() {
        let codes = batch(5, 3, 4, 2);
        let labels = PairLabels::from_classes(&[0, 1, 0, 2, 1]);
        assert_eq!(weighted_objective(&vec![vec![0.0; 3]; 5], &codes, &labels, P).unwrap(), 0.0);

        let pair = batch(2, 1, 6, 3);
        let l2 = PairLabels::from_classes(&[4, 7]);
        // E is 1 for image 0 only: the objective is the single (0,0) self term plus the (0,1) pair
        let w = vec![vec![1.0], vec![0.0]];
        let obj = weighted_objective(&w, &pair, &l2, P).unwrap();
        let expected = pair_loss(&pair[0][0], &pair[0][0], 1, P).unwrap() + pair_loss(&pair[0][0], &pair[0][1], -1, P).unwrap();
        assert_eq!(obj, expected);
    }

    #[test]
    fn zeroed_view_equals_deleted_view_bitwise() {
        let codes = batch(6, 4, 8, 5);
        let labels = PairLabels::from_classes(&[0, 0, 1, 1, 2, 0]);
        let mut w = vec![vec![1.0, 0.43, 0.0, 0.68]; 6];
        w.iter_mut().for_each(|r| r[1] = 0.0);
        let full = weighted_objective(&w, &codes, &labels, P).unwrap();
        let reduced_codes: Vec<_> = codes.iter().enumerate().filter(|(m, _)| *m != 1).map(|(_, c)| c.clone()).collect();
        let reduced_w: Vec<Vec<f64>> = w.iter().map(|r| vec![r[0], r[2], r[3]]).collect();
        assert_eq!(full.to_bits(), weighted_objective(&reduced_w, &reduced_codes, &labels, P).unwrap().to_bits());
        let mut garbage = codes.clone();
        garbage[1].iter_mut().flatten().for_each(|x| *x = f64::NAN);
        assert_eq!(full.to_bits(), weighted_objective(&w, &garbage, &labels, P).unwrap().to_bits());
    }

    #[test]
    fn objective_shape_errors() {
        let codes = batch(3, 2, 4, 1);
        let labels = PairLabels::from_classes(&[0, 1, 2]);
        assert!(weighted_objective(&vec![vec![1.0; 2]; 2], &codes, &labels, P).is_err());
        assert!(weighted_objective(&vec![vec![1.0; 3]; 3], &codes, &labels, P).is_err());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let codes = batch(4, 2, 3, 9);
        let labels = PairLabels::from_classes(&[0, 1, 0, 1]);
        let w = vec![vec![0.7, 0.2]; 4];
        let mut grads: Vec<Vec<Vec<f64>>> = codes.iter().map(|v| v.iter().map(|c| vec![0.0; c.len()]).collect()).collect();
        weighted_objective_grad(&w, &codes, &labels, P, 1.0, &mut grads);
        let h = 1e-6;
        for m in 0..2 {
            for n in 0..4 {
                for k in 0..3 {
                    let mut p = codes.clone();
                    let mut q = codes.clone();
                    p[m][n][k] += h;
                    q[m][n][k] -= h;
                    let num = (weighted_objective(&w, &p, &labels, P).unwrap() - weighted_objective(&w, &q, &labels, P).unwrap()) / (2.0 * h);
                    assert!((num - grads[m][n][k]).abs() < 1e-5, "{num} vs {}", grads[m][n][k]);
                }
            }
        }
    }
}
