//! View classifiers, stability evaluation and the view-relation matrix.
//!
//! Each view gets a softmax classifier. Scores of noise-perturbed images are
//! collected into an `M x N x C` tensor; a view's raw relation value is the
//! largest per-class score deviation minus a scaled sum of all per-class
//! deviations. Raw values are then log-normalised into [0, 1].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureViewSet;
use crate::nn::{Activation, Mlp, Sgd};
use crate::rng::{self, Stream};

/// Softmax negative log-likelihood of `target` and its gradient wrt `scores`.
pub fn softmax_nll(scores: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(scores[target] - max - sum.ln());
    let grad = exps
        .iter()
        .enumerate()
        .map(|(j, e)| e / sum - if j == target { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
            batch: 64,
            seed: 0,
        }
    }
}

/// Affine map from one view's descriptor to class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewClassifier {
    pub view: usize,
    pub net: Mlp,
    pub config: ClassifierConfig,
}

impl ViewClassifier {
    pub fn new(view: usize, dim: usize, classes: usize, config: ClassifierConfig) -> Self {
        let mut init = rng::keyed(config.seed, Stream::Init, 1000 + view as u64);
        Self {
            view,
            net: Mlp::new(&[dim, classes], Activation::Relu, Activation::Identity, &mut init),
            config,
        }
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b]).then(b.cmp(&a))).unwrap()
    }

    /// One pass of mini-batch SGD over the data; returns the mean loss.
    pub fn fit_epoch(&mut self, xs: &[&[f64]], labels: &[u8], opt: &mut Sgd, epoch: usize) -> f64 {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut rng::keyed(self.config.seed, Stream::Shuffle, (self.view as u64) << 32 | epoch as u64));
        let mut grads = vec![0.0; self.net.params.len()];
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch.max(1)) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let trace = self.net.forward_trace(xs[i]);
                let (loss, g) = softmax_nll(trace.output(), labels[i] as usize);
                total += loss;
                self.net.backward(&trace, &g, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut self.net.params, &grads);
        }
        total / xs.len().max(1) as f64
    }
}

/// Trains the classifier of view `view`. Returns the classifier and the mean
/// training loss of every epoch.
pub fn train_classifier(
    view: usize,
    dim: usize,
    xs: &[&[f64]],
    labels: &[u8],
    classes: usize,
    config: ClassifierConfig,
) -> Result<(ViewClassifier, Vec<f64>)> {
    if xs.len() != labels.len() {
        return Err(Error::shape("one label per feature vector required"));
    }
    if let Some(bad) = xs.iter().position(|x| x.len() != dim) {
        return Err(Error::shape(format!(
            "feature {bad} has length {} but view {view} expects {dim}",
            xs[bad].len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::invalid(format!("label {l} outside [0, {classes})")));
    }
    let mut clf = ViewClassifier::new(view, dim, classes, config);
    let mut opt = Sgd::new(config.lr, config.momentum, clf.net.params.len());
    let history = (0..config.epochs).map(|e| clf.fit_epoch(xs, labels, &mut opt, e)).collect::<Vec<_>>();
    if let Some(last) = history.last() {
        log::debug!("view {view} classifier: final mean loss {last:.4}");
    }
    Ok((clf, history))
}

/// Raw class scores, indexed `[view][image][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub views: usize,
    pub images: usize,
    pub classes: usize,
    pub values: Vec<f64>,
}

impl ScoreTensor {
    pub fn zeros(views: usize, images: usize, classes: usize) -> Self {
        Self {
            views,
            images,
            classes,
            values: vec![0.0; views * images * classes],
        }
    }

    #[inline]
    fn idx(&self, m: usize, n: usize, c: usize) -> usize {
        (m * self.images + n) * self.classes + c
    }

    pub fn get(&self, m: usize, n: usize, c: usize) -> f64 {
        self.values[self.idx(m, n, c)]
    }

    pub fn set(&mut self, m: usize, n: usize, c: usize, v: f64) {
        let i = self.idx(m, n, c);
        self.values[i] = v;
    }
}

/// Scores every image under every view's classifier. `sets` must already be
/// standardised the way the classifiers were trained.
pub fn evaluate_scores(classifiers: &[ViewClassifier], sets: &[FeatureViewSet]) -> Result<ScoreTensor> {
    let views = sets.first().map(|s| s.views.len()).unwrap_or(classifiers.len());
    if classifiers.len() != views {
        return Err(Error::shape(format!("{} classifiers for {views} views", classifiers.len())));
    }
    let classes = classifiers.first().map(|c| c.classes()).unwrap_or(0);
    let mut q = ScoreTensor::zeros(views, sets.len(), classes);
    for (m, clf) in classifiers.iter().enumerate() {
        for (n, s) in sets.iter().enumerate() {
            for (c, v) in clf.scores(&s.views[m]).into_iter().enumerate() {
                q.set(m, n, c, v);
            }
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Denominator {
    /// Divide the deviation sum by the number of images.
    Images,
    /// Divide the deviation sum by the number of classes.
    Classes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityVariant {
    /// When false, the first term sums the per-view maxima over all views,
    /// which gives every view the same first term.
    pub per_view_max: bool,
    pub denominator: Denominator,
}

impl Default for StabilityVariant {
    fn default() -> Self {
        Self {
            per_view_max: true,
            denominator: Denominator::Images,
        }
    }
}

/// Population standard deviation of the class-`c` scores under view `m`.
fn class_std(q: &ScoreTensor, m: usize, c: usize) -> f64 {
    let n = q.images as f64;
    let mean = (0..q.images).map(|i| q.get(m, i, c)).sum::<f64>() / n;
    let var = (0..q.images).map(|i| (q.get(m, i, c) - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Raw relation value of each view.
pub fn stability(q: &ScoreTensor, variant: StabilityVariant) -> Result<Vec<f64>> {
    if q.images < 2 {
        return Err(Error::invalid(format!("stability needs at least 2 images, got {}", q.images)));
    }
    let stds: Vec<Vec<f64>> = (0..q.views)
        .map(|m| (0..q.classes).map(|c| class_std(q, m, c)).collect())
        .collect();
    let max_c: Vec<f64> = stds.iter().map(|s| s.iter().cloned().fold(0.0, f64::max)).collect();
    let denom = match variant.denominator {
        Denominator::Images => q.images as f64,
        Denominator::Classes => q.classes as f64,
    };
    let summed_max: f64 = max_c.iter().sum();
    Ok((0..q.views)
        .map(|m| {
            let first = if variant.per_view_max { max_c[m] } else { summed_max };
            first - stds[m].iter().sum::<f64>() / denom
        })
        .collect())
}

/// Log normalisation into [0, 1]:
/// `ln(e + |min| + 1) / ln(max|e| + |min| + 1)`.
///
/// The all-zero vector maps to all ones. Results are clamped into [0, 1].
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_abs = raw.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let shift = min.abs();
    let denom = (max_abs + shift + 1.0).ln();
    if raw.is_empty() || denom == 0.0 {
        log::warn!("degenerate view-relation vector {raw:?}; using uniform weights");
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|e| {
            let v = (e + shift + 1.0).ln() / denom;
            if !(0.0..=1.0).contains(&v) {
                log::warn!("normalised relation value {v} clamped into [0, 1]");
            }
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Repeats the normalised vector for each of `n` images.
pub fn broadcast(normalized: &[f64], n: usize) -> Vec<Vec<f64>> {
    vec![normalized.to_vec(); n]
}

/// The view-relation vector in raw and normalised form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrix {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub variant: StabilityVariant,
    pub eval_seed: u64,
    pub eval_images: usize,
}

impl RelationMatrix {
    pub fn from_scores(q: &ScoreTensor, variant: StabilityVariant, eval_seed: u64) -> Result<Self> {
        let raw = stability(q, variant)?;
        Ok(Self {
            normalized: normalize(&raw),
            raw,
            variant,
            eval_seed,
            eval_images: q.images,
        })
    }

    pub fn broadcast(&self, n: usize) -> Vec<Vec<f64>> {
        broadcast(&self.normalized, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nll_of_zero_scores_is_ln_c() {
        for c in [2usize, 10] {
            let (l, g) = softmax_nll(&vec![0.0; c], 1);
            assert!((l - (c as f64).ln()).abs() < 1e-12);
            assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        }
        let (l, _) = softmax_nll(&[800.0, 0.0, 0.0], 0);
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn stability_hand_example() {
        let mut q = ScoreTensor::zeros(1, 2, 2);
        q.set(0, 0, 0, 0.0);
        q.set(0, 1, 0, 2.0);
        q.set(0, 0, 1, 1.0);
        q.set(0, 1, 1, 1.0);
        let e = stability(&q, StabilityVariant::default()).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12);
        let by_c = stability(&q, StabilityVariant { per_view_max: true, denominator: Denominator::Classes }).unwrap();
        assert!((by_c[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stability_constant_scores_and_small_batches() {
        let mut q = ScoreTensor::zeros(4, 5, 3);
        q.values.iter_mut().enumerate().for_each(|(i, v)| *v = ((i / 15) as f64) * 3.0);
        assert_eq!(stability(&q, StabilityVariant::default()).unwrap(), vec![0.0; 4]);
        assert!(stability(&ScoreTensor::zeros(2, 1, 3), StabilityVariant::default()).is_err());
    }

    #[test]
    fn literal_variant_shares_first_term() {
        let mut q = ScoreTensor::zeros(2, 3, 2);
        for (i, v) in [0., 1., 2., 0., 0., 5., 1., 1., 1., 0., 9., 0.].into_iter().enumerate() {
            q.values[i] = v;
        }
        let lit = stability(&q, StabilityVariant { per_view_max: false, denominator: Denominator::Images }).unwrap();
        let cor = stability(&q, StabilityVariant::default()).unwrap();
        let sum_max: f64 = (0..2).map(|m| (0..2).map(|c| class_std(&q, m, c)).fold(0.0, f64::max)).sum();
        for m in 0..2 {
            let max_m = (0..2).map(|c| class_std(&q, m, c)).fold(0.0, f64::max);
            assert!((lit[m] - cor[m] - (sum_max - max_m)).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[0.0; 4]), vec![1.0; 4]);
        let n = normalize(&[3.0, 0.0, -1.0, 1.0]);
        let ln5 = 5f64.ln();
        let expected = [1.0, 2f64.ln() / ln5, 0.0, 3f64.ln() / ln5];
        for (a, b) in n.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n[1] - 0.431).abs() < 1e-3 && (n[3] - 0.683).abs() < 1e-3);
    }

    #[test]
    fn broadcast_rows() {
        let e = [1.0, 0.4, 0.0, 0.7];
        let b = broadcast(&e, 2);
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|r| r == &e));
        assert!(broadcast(&e, 0).is_empty());
    }

    #[test]
    fn classifier_rejects_bad_dims() {
        let x = [0.0, 1.0];
        let xs: Vec<&[f64]> = vec![&x];
        assert!(train_classifier(0, 3, &xs, &[0], 2, ClassifierConfig::default()).is_err());
        assert!(train_classifier(0, 2, &xs, &[5], 2, ClassifierConfig::default()).is_err());
    }

    #[test]
    fn separable_toy_set_reaches_full_accuracy() {
        // class 1 iff 2x - y > 0.3, with a margin band removed
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (x, y) = (i as f64 / 10.0 - 1.0, j as f64 / 10.0 - 1.0);
                let s = 2.0 * x - y - 0.3;
                if s.abs() < 0.15 {
                    continue;
                }
                pts.push([x, y]);
                labels.push(u8::from(s > 0.0));
            }
        }
        // Brute-force oracle: a grid search over lines finds one with zero
        // training error, so 100% is attainable by an affine classifier.
        let mut oracle_best = usize::MAX;
        for a in -20..=20 {
            for b in -20..=20 {
                for c in -20..=20 {
                    let (a, b, c) = (a as f64 / 10.0, b as f64 / 10.0, c as f64 / 20.0);
                    let errs = pts.iter().zip(&labels).filter(|(p, &l)| ((a * p[0] + b * p[1] + c) > 0.0) != (l == 1)).count();
                    oracle_best = oracle_best.min(errs);
                }
            }
        }
        assert_eq!(oracle_best, 0);
        let xs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let cfg = ClassifierConfig { epochs: 300, lr: 0.5, momentum: 0.9, batch: 16, seed: 2 };
        let (clf, hist) = train_classifier(0, 2, &xs, &labels, 2, cfg).unwrap();
        let correct = xs.iter().zip(&labels).filter(|(x, &l)| clf.predict(x) == l as usize).count();
        assert_eq!(correct, xs.len());
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn evaluate_scores_shape_and_affine_oracle() {
        let cfg = ClassifierConfig::default();
        let clfs: Vec<_> = (0..4).map(|m| ViewClassifier::new(m, 2, 10, cfg)).collect();
        let set = FeatureViewSet { id: 0, views: vec![vec![0.5, -1.0]; 4] };
        let q = evaluate_scores(&clfs, std::slice::from_ref(&set)).unwrap();
        assert_eq!((q.views, q.images, q.classes), (4, 1, 10));
        for m in 0..4 {
            let p = &clfs[m].net.params;
            for c in 0..10 {
                let hand = p[c * 2] * 0.5 + -p[c * 2 + 1] + p[20 + c];
                assert!((q.get(m, 0, c) - hand).abs() < 1e-12);
            }
        }
        let q2 = evaluate_scores(&clfs, &[set.clone(), set.clone()]).unwrap();
        for m in 0..4 {
            for c in 0..10 {
                assert_eq!(q2.get(m, 0, c), q2.get(m, 1, c));
            }
        }
        assert!(evaluate_scores(&clfs[..3], &[set]).is_err());
    }

    fn tensor_strategy() -> impl Strategy<Value = ScoreTensor> {
        (1usize..4, 2usize..7, 1usize..5).prop_flat_map(|(m, n, c)| {
            prop::collection::vec(-10.0f64..10.0, m * n * c).prop_map(move |values| ScoreTensor { views: m, images: n, classes: c, values })
        })
    }

    proptest! {
        #[test]
        fn stability_is_invariant_to_image_order(q in tensor_strategy(), rot in 0usize..7) {
            let mut p = q.clone();
            for m in 0..q.views {
                for n in 0..q.images {
                    for c in 0..q.classes {
                        p.set(m, (n + rot) % q.images, c, q.get(m, n, c));
                    }
                }
            }
            let (a, b) = (stability(&q, StabilityVariant::default()).unwrap(), stability(&p, StabilityVariant::default()).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn stability_ignores_per_view_shift(q in tensor_strategy(), k in -50.0f64..50.0) {
            let mut p = q.clone();
            for n in 0..q.images {
                for c in 0..q.classes {
                    p.set(0, n, c, q.get(0, n, c) + k);
                }
            }
            let (a, b) = (stability(&q, StabilityVariant::default()).unwrap(), stability(&p, StabilityVariant::default()).unwrap());
            prop_assert!((a[0] - b[0]).abs() < 1e-7);
        }

        #[test]
        fn normalize_is_monotone_and_bounded(raw in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let n = normalize(&raw);
            for i in 0..raw.len() {
                prop_assert!((0.0..=1.0).contains(&n[i]));
                for j in 0..raw.len() {
                    if raw[i] < raw[j] {
                        prop_assert!(n[i] <= n[j]);
                    }
                }
            }
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let max_abs = raw.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if max >= 0.0 && max == max_abs && max_abs > 0.0 {
                let am = raw.iter().position(|&x| x == max).unwrap();
                prop_assert!((n[am] - 1.0).abs() < 1e-12);
            }
        }
    }
}
