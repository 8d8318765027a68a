//! Hamming-space fusion of the basic code, the per-view codes and the view
//! relation vector.
//!
//! Three layouts are supported:
//!
//! * replication (`r`): views sorted by relation weight, the top-ranked view
//!   repeated the most times according to the fusion vector;
//! * view-code (`c`): a head (the basic code), a mid segment whose per-view
//!   length scales with the view's weight, and an end segment padded with
//!   fixed per-view scalars up to a fixed budget;
//! * probability pooling (`p`): views expanded by repetition, then each
//!   pooling window max-pools the segment of one view drawn at random in
//!   proportion to its weight.
//!
//! Every expanded element remembers which code element it was copied from,
//! so gradients flow back to the heads by scatter-add.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Trace};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMethod {
    #[serde(rename = "r")]
    Replication,
    #[serde(rename = "c")]
    ViewCode,
    #[serde(rename = "p")]
    Pooling,
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" | "R" | "replication" => Ok(FusionMethod::Replication),
            "c" | "C" | "view-code" | "viewcode" => Ok(FusionMethod::ViewCode),
            "p" | "P" | "pooling" => Ok(FusionMethod::Pooling),
            other => Err(Error::invalid(format!("unknown fusion method {other:?} (expected r, c or p)"))),
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMethod::Replication => "r",
            FusionMethod::ViewCode => "c",
            FusionMethod::Pooling => "p",
        })
    }
}

/// Repetition counts, matched to views by relation rank: the largest entry
/// goes to the highest-ranked view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionVector(pub Vec<usize>);

impl FusionVector {
    pub fn new(v: Vec<usize>) -> Result<Self> {
        if v.is_empty() || v.contains(&0) {
            return Err(Error::invalid("fusion vector entries must be >= 1"));
        }
        Ok(Self(v))
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// The `k` largest-ranked entries, for models that use only `k` views.
    pub fn tail(&self, k: usize) -> Self {
        Self(self.0[self.0.len() - k..].to_vec())
    }
}

impl Default for FusionVector {
    fn default() -> Self {
        Self(vec![1, 4, 8, 16])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub method: FusionMethod,
    pub v: FusionVector,
    /// Total expanded length for view-code fusion.
    pub budget: usize,
    /// Expansion factor before probability pooling.
    pub k: usize,
    /// Pooling window width.
    pub w: usize,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            method: FusionMethod::Replication,
            v: FusionVector::default(),
            budget: 512,
            k: 4,
            w: 4,
            seed: 0,
        }
    }
}

/// Where an expanded element was copied from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Basic(usize),
    View { view: usize, index: usize },
    Constant,
}

/// Segment structure of an expanded code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    Replication {
        basic: usize,
        /// View indices in rank order, each with its repetition count.
        segments: Vec<(usize, usize)>,
        q_view: usize,
    },
    ViewCode {
        head: usize,
        /// (view, number of elements) in view order.
        mid: Vec<(usize, usize)>,
        end: usize,
    },
    Pooling {
        basic: usize,
        k: usize,
        w: usize,
        /// Source view of every pooling slot.
        slot_views: Vec<usize>,
    },
}

impl Layout {
    pub fn len(&self) -> usize {
        match self {
            Layout::Replication { basic, segments, q_view } => basic + q_view * segments.iter().map(|s| s.1).sum::<usize>(),
            Layout::ViewCode { head, mid, end } => head + mid.iter().map(|s| s.1).sum::<usize>() + end,
            Layout::Pooling { basic, slot_views, .. } => basic + slot_views.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedCode {
    pub values: Vec<f64>,
    pub sources: Vec<Source>,
    pub layout: Layout,
}

impl ExpandedCode {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scatter-adds a gradient on the expanded code back onto its sources.
    pub fn scatter(&self, grad: &[f64], basic: &mut [f64], views: &mut [Vec<f64>]) {
        for (g, src) in grad.iter().zip(&self.sources) {
            match *src {
                Source::Basic(i) => basic[i] += g,
                Source::View { view, index } => views[view][index] += g,
                Source::Constant => {}
            }
        }
    }
}

fn check_views(views: &[&[f64]], weights: &[f64]) -> Result<usize> {
    if views.len() != weights.len() {
        return Err(Error::shape(format!("{} view codes but {} relation weights", views.len(), weights.len())));
    }
    let q = views.first().map(|v| v.len()).unwrap_or(0);
    if views.iter().any(|v| v.len() != q) {
        return Err(Error::shape("view codes must share one length"));
    }
    Ok(q)
}

/// View indices sorted by weight descending, ties by index ascending.
pub fn rank_views(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order
}

fn push_basic(basic: &[f64], values: &mut Vec<f64>, sources: &mut Vec<Source>) {
    values.extend_from_slice(basic);
    sources.extend((0..basic.len()).map(Source::Basic));
}

/// Replication fusion: basic code followed by each view's code repeated
/// according to its relation rank.
pub fn replication_fuse(basic: &[f64], views: &[&[f64]], weights: &[f64], v: &FusionVector) -> Result<ExpandedCode> {
    let q_view = check_views(views, weights)?;
    let m = views.len();
    if v.0.len() != m {
        return Err(Error::shape(format!("fusion vector has {} entries for {m} views", v.0.len())));
    }
    let order = rank_views(weights);
    let segments: Vec<(usize, usize)> = order.iter().enumerate().map(|(rank, &view)| (view, v.0[m - 1 - rank])).collect();
    let mut values = Vec::new();
    let mut sources = Vec::new();
    push_basic(basic, &mut values, &mut sources);
    for &(view, reps) in &segments {
        for _ in 0..reps {
            values.extend_from_slice(views[view]);
            sources.extend((0..q_view).map(|index| Source::View { view, index }));
        }
    }
    Ok(ExpandedCode {
        values,
        sources,
        layout: Layout::Replication {
            basic: basic.len(),
            segments,
            q_view,
        },
    })
}

/// Number of mid-segment elements each view contributes under view-code
/// fusion: `floor(q_view * w_m / max w)`.
pub fn viewcode_mid_lengths(weights: &[f64], q_view: usize) -> Vec<usize> {
    let max = weights.iter().cloned().fold(0.0, f64::max);
    weights
        .iter()
        .map(|&w| if max > 0.0 { ((q_view as f64 * w / max).floor() as usize).min(q_view) } else { 0 })
        .collect()
}

/// View-code fusion into exactly `budget` elements.
pub fn viewcode_fuse(basic: &[f64], views: &[&[f64]], weights: &[f64], view_codes: &[f64], budget: usize) -> Result<ExpandedCode> {
    let q_view = check_views(views, weights)?;
    if view_codes.len() != views.len() {
        return Err(Error::shape(format!("{} view-codes for {} views", view_codes.len(), views.len())));
    }
    if budget < basic.len() + q_view {
        return Err(Error::invalid(format!("budget {budget} below q_basic + q_view = {}", basic.len() + q_view)));
    }
    let lens = viewcode_mid_lengths(weights, q_view);
    let used = basic.len() + lens.iter().sum::<usize>();
    if used > budget {
        return Err(Error::invalid(format!("budget too small for E: need {used}, have {budget}")));
    }
    let mut values = Vec::with_capacity(budget);
    let mut sources = Vec::with_capacity(budget);
    push_basic(basic, &mut values, &mut sources);
    let mut mid = Vec::with_capacity(views.len());
    for (view, &len) in lens.iter().enumerate() {
        values.extend_from_slice(&views[view][..len]);
        sources.extend((0..len).map(|index| Source::View { view, index }));
        mid.push((view, len));
    }
    let end = budget - used;
    if !view_codes.is_empty() {
        for j in 0..end {
            values.push(view_codes[j % view_codes.len()]);
            sources.push(Source::Constant);
        }
    }
    Ok(ExpandedCode {
        values,
        sources,
        layout: Layout::ViewCode {
            head: basic.len(),
            mid,
            end,
        },
    })
}

/// Per-view scalar codes in [-1, 1], drawn once per model.
pub fn draw_view_codes(seed: u64, views: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, Stream::ViewCode);
    (0..views).map(|_| r.random_range(-1.0..=1.0)).collect()
}

/// Draws a view index with probability proportional to `weights`; uniform
/// when every weight is zero.
pub fn sample_view(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding: fall back to the last view with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap()
}

/// Probability view pooling. Each view code is expanded to `k * q_view`
/// by nearest-neighbour repetition; every window of width `w` takes the
/// maximum over the window of one randomly drawn view.
pub fn prob_view_pool(views: &[&[f64]], weights: &[f64], k: usize, w: usize, rng: &mut Rng) -> Result<ExpandedCode> {
    let q_view = check_views(views, weights)?;
    if views.is_empty() {
        return Err(Error::invalid("probability pooling needs at least one view"));
    }
    if k == 0 || w == 0 || !(k * q_view).is_multiple_of(w) {
        return Err(Error::invalid(format!("window {w} does not divide expanded length {}", k * q_view)));
    }
    let slots = k * q_view / w;
    let mut values = Vec::with_capacity(slots);
    let mut sources = Vec::with_capacity(slots);
    let mut slot_views = Vec::with_capacity(slots);
    for s in 0..slots {
        let view = sample_view(weights, rng);
        let code = views[view];
        let (mut best, mut best_idx) = (f64::NEG_INFINITY, 0);
        for j in s * w..(s + 1) * w {
            let idx = j / k;
            if code[idx] > best {
                best = code[idx];
                best_idx = idx;
            }
        }
        values.push(best);
        sources.push(Source::View { view, index: best_idx });
        slot_views.push(view);
    }
    Ok(ExpandedCode {
        values,
        sources,
        layout: Layout::Pooling {
            basic: 0,
            k,
            w,
            slot_views,
        },
    })
}

/// Runs the configured fusion method. `image_id` keys the pooling sampler so
/// results do not depend on processing order.
pub fn fuse(cfg: &FusionConfig, basic: &[f64], views: &[&[f64]], weights: &[f64], view_codes: &[f64], image_id: u32) -> Result<ExpandedCode> {
    match cfg.method {
        FusionMethod::Replication => replication_fuse(basic, views, weights, &cfg.v),
        FusionMethod::ViewCode => viewcode_fuse(basic, views, weights, view_codes, cfg.budget),
        FusionMethod::Pooling => {
            if views.is_empty() {
                let mut values = Vec::new();
                let mut sources = Vec::new();
                push_basic(basic, &mut values, &mut sources);
                return Ok(ExpandedCode {
                    values,
                    sources,
                    layout: Layout::Pooling { basic: basic.len(), k: cfg.k, w: cfg.w, slot_views: vec![] },
                });
            }
            let mut r = rng::keyed(cfg.seed, Stream::Pooling, image_id as u64);
            let pooled = prob_view_pool(views, weights, cfg.k, cfg.w, &mut r)?;
            let mut values = Vec::with_capacity(basic.len() + pooled.len());
            let mut sources = Vec::with_capacity(basic.len() + pooled.len());
            push_basic(basic, &mut values, &mut sources);
            values.extend(pooled.values);
            sources.extend(pooled.sources);
            let Layout::Pooling { slot_views, .. } = pooled.layout else { unreachable!() };
            Ok(ExpandedCode {
                values,
                sources,
                layout: Layout::Pooling {
                    basic: basic.len(),
                    k: cfg.k,
                    w: cfg.w,
                    slot_views,
                },
            })
        }
    }
}

/// Expanded length produced by `cfg` for `views` view codes.
pub fn expanded_len(cfg: &FusionConfig, q_basic: usize, q_view: usize, views: usize) -> usize {
    if views == 0 {
        return q_basic;
    }
    match cfg.method {
        FusionMethod::Replication => q_basic + q_view * cfg.v.tail(views).total(),
        FusionMethod::ViewCode => cfg.budget,
        FusionMethod::Pooling => q_basic + cfg.k * q_view / cfg.w,
    }
}

/// Trainable map from an expanded code back to `q` relaxed bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionProjection {
    pub net: Mlp,
}

impl FusionProjection {
    pub fn new(input: usize, q: usize, rng: &mut Rng) -> Self {
        Self {
            net: Mlp::new(&[input, q], Activation::Relu, Activation::Tanh, rng),
        }
    }

    pub fn input_len(&self) -> usize {
        self.net.input_dim()
    }

    pub fn forward_trace(&self, expanded: &ExpandedCode) -> Result<Trace> {
        if expanded.len() != self.input_len() {
            return Err(Error::shape(format!("expanded code of length {} for a projection expecting {}", expanded.len(), self.input_len())));
        }
        Ok(self.net.forward_trace(&expanded.values))
    }
}

pub fn project(expanded: &ExpandedCode, projection: &FusionProjection) -> Result<Vec<f64>> {
    Ok(projection.forward_trace(expanded)?.activations.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(m: usize, q: usize) -> Vec<Vec<f64>> {
        (0..m).map(|v| (0..q).map(|i| ((v * 31 + i * 7) % 19) as f64 / 9.5 - 1.0).collect()).collect()
    }

    fn refs(c: &[Vec<f64>]) -> Vec<&[f64]> {
        c.iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn replication_layout_480() {
        let views = codes(4, 16);
        let basic = vec![0.5; 16];
        let e = replication_fuse(&basic, &refs(&views), &[0.2, 1.0, 0.0, 0.5], &FusionVector::default()).unwrap();
        assert_eq!(e.len(), 480);
        assert_eq!(e.layout.len(), 480);
        let Layout::Replication { segments, .. } = &e.layout else { panic!() };
        assert_eq!(segments, &vec![(1, 16), (3, 8), (0, 4), (2, 1)]);
        assert_eq!(&e.values[16..32], views[1].as_slice());
    }

    #[test]
    fn tied_weights_rank_by_index() {
        assert_eq!(rank_views(&[1.0; 4]), vec![0, 1, 2, 3]);
        assert_eq!(rank_views(&[0.5, 1.0, 0.5, 1.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn swapping_views_with_weights_keeps_segment_multiset() {
        let views = codes(4, 8);
        let basic = vec![0.1; 8];
        let w = [0.3, 0.9, 0.1, 0.6];
        let a = replication_fuse(&basic, &refs(&views), &w, &FusionVector::default()).unwrap();
        let swapped = vec![views[2].clone(), views[1].clone(), views[0].clone(), views[3].clone()];
        let b = replication_fuse(&basic, &refs(&swapped), &[0.1, 0.9, 0.3, 0.6], &FusionVector::default()).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn viewcode_uniform_weights_budget_200() {
        let views = codes(4, 16);
        let basic = vec![0.5; 16];
        let vc = [0.1, -0.2, 0.3, -0.4];
        let e = viewcode_fuse(&basic, &refs(&views), &[1.0; 4], &vc, 200).unwrap();
        assert_eq!(e.len(), 200);
        let Layout::ViewCode { head, mid, end } = &e.layout else { panic!() };
        assert_eq!((*head, mid.iter().map(|m| m.1).sum::<usize>(), *end), (16, 64, 120));
        assert_eq!(&e.values[80..84], &vc);
        assert!(e.sources[80..].iter().all(|s| *s == Source::Constant));
    }

    #[test]
    fn viewcode_zero_weight_view_only_in_end() {
        let views = codes(4, 16);
        let e = viewcode_fuse(&[0.0; 16], &refs(&views), &[1.0, 0.0, 0.5, 0.25], &[0.1, 0.2, 0.3, 0.4], 128).unwrap();
        assert!(!e.sources.iter().any(|s| matches!(s, Source::View { view: 1, .. })));
        let Layout::ViewCode { mid, .. } = &e.layout else { panic!() };
        assert_eq!(mid, &vec![(0, 16), (1, 0), (2, 8), (3, 4)]);
        assert!(e.values[16 + 28..].contains(&0.2));
    }

    #[test]
    fn viewcode_budget_errors() {
        let views = codes(4, 16);
        assert!(viewcode_fuse(&[0.0; 16], &refs(&views), &[1.0; 4], &[0.0; 4], 31).is_err());
        let err = viewcode_fuse(&[0.0; 16], &refs(&views), &[1.0; 4], &[0.0; 4], 60).unwrap_err();
        assert!(err.to_string().contains("budget too small for E"));
    }

    #[test]
    fn view_codes_are_seeded() {
        assert_eq!(draw_view_codes(3, 4), draw_view_codes(3, 4));
        assert!(draw_view_codes(3, 4).iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(draw_view_codes(3, 4), draw_view_codes(4, 4));
    }

    #[test]
    fn pooling_one_hot_is_maxpool_of_that_view() {
        let views = codes(4, 16);
        let mut r = rng::stream(1, Stream::Pooling);
        let e = prob_view_pool(&refs(&views), &[1.0, 0.0, 0.0, 0.0], 2, 4, &mut r).unwrap();
        assert_eq!(e.len(), 8);
        for s in 0..8 {
            let expected = views[0][2 * s].max(views[0][2 * s + 1]);
            assert_eq!(e.values[s], expected);
        }
        let mut r2 = rng::stream(99, Stream::Pooling);
        assert_eq!(prob_view_pool(&refs(&views), &[1.0, 0.0, 0.0, 0.0], 2, 4, &mut r2).unwrap().values, e.values);
        assert!(prob_view_pool(&refs(&views), &[1.0; 4], 2, 5, &mut r).is_err());
    }

    #[test]
    fn sampled_view_frequencies_follow_weights() {
        let w = [1.0, 0.43, 0.1, 0.68];
        let total: f64 = w.iter().sum();
        let mut r = rng::stream(5, Stream::Pooling);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_view(&w, &mut r)] += 1;
        }
        for (c, wi) in counts.iter().zip(w) {
            assert!((*c as f64 / 10_000.0 - wi / total).abs() < 0.02);
        }
        let mut zero = [0usize; 3];
        for _ in 0..3000 {
            zero[sample_view(&[0.0; 3], &mut r)] += 1;
        }
        assert!(zero.iter().all(|&c| c > 800));
    }

    #[test]
    fn fused_heads_agree_between_r_and_c() {
        let views = codes(4, 16);
        let basic: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let w = [0.9, 1.0, 0.2, 0.4];
        let r = replication_fuse(&basic, &refs(&views), &w, &FusionVector::default()).unwrap();
        let c = viewcode_fuse(&basic, &refs(&views), &w, &[0.0; 4], 512).unwrap();
        assert_eq!(&r.values[..16], &c.values[..16]);
    }

    #[test]
    fn zero_projection_outputs_zero() {
        let views = codes(4, 16);
        let e = replication_fuse(&[0.3; 16], &refs(&views), &[1.0; 4], &FusionVector::default()).unwrap();
        let proj = FusionProjection { net: Mlp::zeros(&[480, 64], Activation::Relu, Activation::Tanh) };
        let out = project(&e, &proj).unwrap();
        assert_eq!(out, vec![0.0; 64]);
        let short = FusionProjection { net: Mlp::zeros(&[479, 64], Activation::Relu, Activation::Tanh) };
        assert!(project(&e, &short).is_err());
    }

    #[test]
    fn scatter_routes_gradients_to_sources() {
        let views = codes(2, 4);
        let e = replication_fuse(&[0.0; 2], &refs(&views), &[1.0, 0.5], &FusionVector(vec![1, 3])).unwrap();
        let grad = vec![1.0; e.len()];
        let mut gb = vec![0.0; 2];
        let mut gv = vec![vec![0.0; 4]; 2];
        e.scatter(&grad, &mut gb, &mut gv);
        assert_eq!(gb, vec![1.0, 1.0]);
        assert_eq!(gv[0], vec![3.0; 4]);
        assert_eq!(gv[1], vec![1.0; 4]);
    }
}
