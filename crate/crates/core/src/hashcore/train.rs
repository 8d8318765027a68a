//! Stage 1 trains the per-view classifiers (softmax loss) and the basic hash
//! head (pairwise loss). Stage 2 trains the per-view heads, the fusion
//! projection and, further, the basic head on the relation-weighted
//! objective, while the memory model regresses the relation vector.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{weighted_objective_grad, LossParams, PairLabels};
use super::{HashHead, HeadTag};
use crate::error::{Error, Result};
use crate::features::{self, FeatureViewSet, Standardizer, NUM_VIEWS};
use crate::fusion::{self, ExpandedCode, FusionConfig, FusionProjection};
use crate::ingest::{self, ImageRecord, LabelIndex, NUM_CLASSES};
use crate::memory::{MemoryConfig, MemoryModel};
use crate::nn::{Sgd, Trace};
use crate::rng::{self, Stream};
use crate::viewrel::{self, ClassifierConfig, RelationMatrix, StabilityVariant, ViewClassifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossParams,
    /// Final fused code length.
    pub q: usize,
    pub q_basic: usize,
    pub q_view: usize,
    /// Hidden layers (0 to 2) in every hash head.
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub lr: f64,
    pub momentum: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// Pairs sampled per mini-batch; the batch holds their images and every
    /// ordered pair among them contributes to the loss.
    pub batch_pairs: usize,
    pub pos_fraction: f64,
    pub noise_sigma: f64,
    /// Size of the noisy batch used for each stability evaluation.
    pub eval_images: usize,
    pub stability: StabilityVariant,
    pub classifier: ClassifierConfig,
    pub memory: MemoryConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossParams::default(),
            q: 64,
            q_basic: 16,
            q_view: 16,
            hidden_layers: 0,
            hidden_width: 256,
            lr: 0.001,
            momentum: 0.9,
            stage1_epochs: 20,
            stage2_epochs: 20,
            batch_pairs: 32,
            pos_fraction: 0.5,
            noise_sigma: 5.0,
            eval_images: 256,
            stability: StabilityVariant::default(),
            classifier: ClassifierConfig::default(),
            memory: MemoryConfig::default(),
            fusion: FusionConfig::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Propagates the global seed into the nested configurations.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.classifier.seed = seed;
        self.memory.seed = seed;
        self.fusion.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.loss.a <= 0.0 || self.loss.alpha <= 0.0 {
            return Err(Error::invalid("margin a and alpha must be positive"));
        }
        if self.q == 0 || self.q_basic == 0 || self.q_view == 0 {
            return Err(Error::invalid("code lengths must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("lr must be positive and momentum in [0, 1)"));
        }
        if self.batch_pairs == 0 || !(0.0..=1.0).contains(&self.pos_fraction) {
            return Err(Error::invalid("batch_pairs must be positive and pos_fraction in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be a non-negative number"));
        }
        if self.hidden_layers > 2 {
            return Err(Error::invalid("at most 2 hidden layers"));
        }
        if self.fusion.v.0.len() != NUM_VIEWS {
            return Err(Error::invalid(format!("fusion vector needs {NUM_VIEWS} entries")));
        }
        Ok(())
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_width; self.hidden_layers]
    }
}

/// Which views a model uses and whether the relation vector weights them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSubset {
    pub views: Vec<usize>,
    pub use_relation: bool,
}

impl ViewSubset {
    pub fn full() -> Self {
        Self {
            views: (0..NUM_VIEWS).collect(),
            use_relation: true,
        }
    }

    pub fn baseline() -> Self {
        Self {
            views: vec![],
            use_relation: false,
        }
    }

    /// Weights of the active views: their normalised relation values, or
    /// ones when the relation is not used.
    pub fn weights(&self, normalized: &[f64]) -> Vec<f64> {
        self.views
            .iter()
            .map(|&m| if self.use_relation { normalized[m] } else { 1.0 })
            .collect()
    }
}

/// Standardised training features plus what stability evaluation needs.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub ids: Vec<u32>,
    pub labels: Vec<u8>,
    pub features: Vec<FeatureViewSet>,
    pub basic_inputs: Vec<Vec<f64>>,
    pub standardizer: Standardizer,
    pub index: LabelIndex,
    pub position: HashMap<u32, usize>,
    /// Clean images from which each noisy evaluation batch is drawn.
    pub eval_records: Vec<ImageRecord>,
}

impl TrainingData {
    /// `records` are the training images; `raw` their extracted features.
    pub fn new(records: &[ImageRecord], raw: &[FeatureViewSet], eval_images: usize, seed: u64) -> Result<Self> {
        if records.len() != raw.len() || records.is_empty() {
            return Err(Error::shape("one feature set per training record required"));
        }
        let standardizer = Standardizer::fit(raw)?;
        let features: Vec<FeatureViewSet> = raw.iter().map(|f| standardizer.transform(f)).collect();
        let basic_inputs = features.iter().map(FeatureViewSet::concatenated).collect();
        let ids: Vec<u32> = records.iter().map(|r| r.id).collect();
        let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
        let position: HashMap<u32, usize> = ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
        let index = LabelIndex::new(&ids, |id| labels[position[&id]]);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng::keyed(seed, Stream::Noise, u64::MAX));
        order.truncate(eval_images.min(records.len()));
        order.sort_unstable();
        let eval_records = order.iter().map(|&i| records[i].clone()).collect();
        Ok(Self {
            ids,
            labels,
            features,
            basic_inputs,
            standardizer,
            index,
            position,
            eval_records,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Standardised features of a noisy copy of the evaluation batch.
    pub fn noisy_eval_features(&self, sigma: f64, seed: u64) -> Vec<FeatureViewSet> {
        self.eval_records
            .iter()
            .map(|r| self.standardizer.transform(&features::extract(&ingest::add_noise(r, sigma, seed))))
            .collect()
    }

    fn view_inputs(&self, m: usize) -> Vec<&[f64]> {
        self.features.iter().map(|f| f.views[m].as_slice()).collect()
    }

    fn basic_refs(&self) -> Vec<&[f64]> {
        self.basic_inputs.iter().map(Vec::as_slice).collect()
    }

    /// Positions of the images of one sampled pair batch, deduplicated in
    /// order of first appearance.
    fn batch_positions(&self, cfg: &TrainConfig, key: u64) -> Result<Vec<usize>> {
        let mut r = rng::keyed(cfg.seed, Stream::Pairs, key);
        let pairs = ingest::sample_pairs_with(&self.index, cfg.batch_pairs, cfg.pos_fraction, &mut r)?;
        let mut seen = Vec::with_capacity(2 * pairs.len());
        for p in pairs {
            for id in [p.first, p.second] {
                let pos = self.position[&id];
                if !seen.contains(&pos) {
                    seen.push(pos);
                }
            }
        }
        Ok(seen)
    }

    fn batches_per_epoch(&self, cfg: &TrainConfig) -> usize {
        self.len().div_ceil(2 * cfg.batch_pairs.max(1)).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Epoch {
    pub epoch: usize,
    /// Mean softmax loss summed over the view classifiers.
    pub classification: f64,
    /// Mean pairwise loss of the basic head.
    pub basic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1 {
    pub classifiers: Vec<ViewClassifier>,
    pub basic: HashHead,
    pub history: Vec<Stage1Epoch>,
}

fn check_finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("{what} loss became {loss}")))
    }
}

/// Stage 1: classifiers per view and the basic head.
pub fn train_stage1(data: &TrainingData, cfg: &TrainConfig) -> Result<Stage1> {
    cfg.validate()?;
    let dims = features::view_dims();
    let mut classifiers: Vec<ViewClassifier> = (0..NUM_VIEWS).map(|m| ViewClassifier::new(m, dims[m], NUM_CLASSES, cfg.classifier)).collect();
    let mut clf_opts: Vec<Sgd> = classifiers.iter().map(|c| Sgd::new(cfg.classifier.lr, cfg.classifier.momentum, c.net.params.len())).collect();
    let mut init = rng::keyed(cfg.seed, Stream::Init, 1);
    let input: usize = dims.iter().sum();
    let mut basic = HashHead::new(HeadTag::Basic, input, &cfg.hidden(), cfg.q_basic, &mut init);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, basic.net.params.len());
    let inputs = data.basic_refs();
    let view_inputs: Vec<Vec<&[f64]>> = (0..NUM_VIEWS).map(|m| data.view_inputs(m)).collect();
    let mut history = Vec::with_capacity(cfg.stage1_epochs);

    for epoch in 0..cfg.stage1_epochs {
        let mut classification = 0.0;
        for (m, clf) in classifiers.iter_mut().enumerate() {
            classification += clf.fit_epoch(&view_inputs[m], &data.labels, &mut clf_opts[m], epoch);
        }
        let mut basic_loss = 0.0;
        let batches = data.batches_per_epoch(cfg);
        for b in 0..batches {
            let positions = data.batch_positions(cfg, (epoch * batches + b) as u64)?;
            let labels: Vec<u8> = positions.iter().map(|&p| data.labels[p]).collect();
            let pair_labels = PairLabels::from_classes(&labels);
            let traces: Vec<Trace> = positions.iter().map(|&p| basic.net.forward_trace(inputs[p])).collect();
            let codes = vec![traces.iter().map(|t| t.output().to_vec()).collect::<Vec<_>>()];
            let n = positions.len();
            let scale = 1.0 / (n * n) as f64;
            let mut code_grads = vec![vec![vec![0.0; cfg.q_basic]; n]];
            let obj = weighted_objective_grad(&vec![vec![1.0]; n], &codes, &pair_labels, cfg.loss, scale, &mut code_grads);
            basic_loss += obj * scale;
            let mut grads = vec![0.0; basic.net.params.len()];
            for (t, g) in traces.iter().zip(&code_grads[0]) {
                basic.net.backward(t, g, &mut grads);
            }
            opt.step(&mut basic.net.params, &grads);
        }
        let entry = Stage1Epoch {
            epoch,
            classification: check_finite(classification, "classification")?,
            basic: check_finite(basic_loss / batches as f64, "basic hash")?,
        };
        log::info!("stage 1 epoch {epoch}: L^p {:.4} L^c {:.4}", entry.classification, entry.basic);
        history.push(entry);
    }
    Ok(Stage1 { classifiers, basic, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    pub epoch: usize,
    /// Mean relation-weighted pairwise loss (views plus fused code).
    pub objective: f64,
    /// Memory model mean squared error over the epoch.
    pub memory: f64,
    pub relation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2 {
    pub subset: ViewSubset,
    pub basic: HashHead,
    /// One head per active view, in subset order.
    pub view_heads: Vec<HashHead>,
    /// Absent when no views are active; the basic code is then the output.
    pub projection: Option<FusionProjection>,
    pub view_codes: Vec<f64>,
    pub memory: MemoryModel,
    pub relation: RelationMatrix,
    pub history: Vec<Stage2Epoch>,
}

/// Seed of the noise applied to the stability-evaluation batch.
pub fn eval_noise_seed(cfg: &TrainConfig) -> u64 {
    rng::splitmix(cfg.seed ^ 0x006e_6f69_7365)
}

/// Relation vector from the fixed noisy evaluation batch.
pub fn evaluate_relation(classifiers: &[ViewClassifier], noisy: &[FeatureViewSet], cfg: &TrainConfig) -> Result<RelationMatrix> {
    let q = viewrel::evaluate_scores(classifiers, noisy)?;
    RelationMatrix::from_scores(&q, cfg.stability, eval_noise_seed(cfg))
}

struct Forward {
    basic: Trace,
    views: Vec<Trace>,
    fused: Option<(ExpandedCode, Trace)>,
}

impl Forward {
    fn output(&self) -> &[f64] {
        match &self.fused {
            Some((_, t)) => t.output(),
            None => self.basic.output(),
        }
    }
}

/// Encodes one image through the fused pathway.
#[allow(clippy::too_many_arguments)]
fn forward(
    basic: &HashHead,
    heads: &[HashHead],
    projection: Option<&FusionProjection>,
    fusion_cfg: &FusionConfig,
    view_codes: &[f64],
    weights: &[f64],
    basic_input: &[f64],
    views: &FeatureViewSet,
    id: u32,
) -> Result<Forward> {
    let basic_t = basic.net.forward_trace(basic_input);
    let Some(projection) = projection else {
        return Ok(Forward {
            basic: basic_t,
            views: vec![],
            fused: None,
        });
    };
    let view_t: Vec<Trace> = heads
        .iter()
        .map(|h| {
            let HeadTag::View(m) = h.tag else { unreachable!("view heads carry view tags") };
            h.net.forward_trace(&views.views[m])
        })
        .collect();
    let view_refs: Vec<&[f64]> = view_t.iter().map(|t| t.output()).collect();
    let vc: Vec<f64> = heads
        .iter()
        .map(|h| match h.tag {
            HeadTag::View(m) => view_codes[m],
            HeadTag::Basic => 0.0,
        })
        .collect();
    let expanded = fusion::fuse(fusion_cfg, basic_t.output(), &view_refs, weights, &vc, id)?;
    let fused = projection.forward_trace(&expanded)?;
    Ok(Forward {
        basic: basic_t,
        views: view_t,
        fused: Some((expanded, fused)),
    })
}

/// Fused relaxed code of one (standardised) image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encode_one(
    basic: &HashHead,
    heads: &[HashHead],
    projection: Option<&FusionProjection>,
    fusion_cfg: &FusionConfig,
    view_codes: &[f64],
    weights: &[f64],
    features: &FeatureViewSet,
    id: u32,
) -> Result<Vec<f64>> {
    let input = features.concatenated();
    let f = forward(basic, heads, projection, fusion_cfg, view_codes, weights, &input, features, id)?;
    Ok(f.output().to_vec())
}

/// Stage 2 for the views in `subset`, starting from the stage-1 artefacts.
pub fn train_stage2(stage1: &Stage1, data: &TrainingData, cfg: &TrainConfig, subset: &ViewSubset) -> Result<Stage2> {
    cfg.validate()?;
    if subset.views.iter().any(|&m| m >= NUM_VIEWS) {
        return Err(Error::invalid("view index out of range"));
    }
    let dims = features::view_dims();
    let mut init = rng::keyed(cfg.seed, Stream::Init, 2);
    let mut basic = stage1.basic.clone();
    let mut heads: Vec<HashHead> = subset
        .views
        .iter()
        .map(|&m| HashHead::new(HeadTag::View(m), dims[m], &cfg.hidden(), cfg.q_view, &mut init))
        .collect();
    let mut fusion_cfg = cfg.fusion.clone();
    fusion_cfg.v = fusion_cfg.v.tail(subset.views.len());
    let expanded_len = fusion::expanded_len(&fusion_cfg, cfg.q_basic, cfg.q_view, subset.views.len());
    let mut projection = if subset.views.is_empty() {
        if basic.bits() != cfg.q {
            return Err(Error::invalid(format!("a model without views needs a {}-bit basic head, got {}", cfg.q, basic.bits())));
        }
        None
    } else {
        Some(FusionProjection::new(expanded_len, cfg.q, &mut init))
    };
    let view_codes = fusion::draw_view_codes(cfg.fusion.seed, NUM_VIEWS);
    let input: usize = dims.iter().sum();
    let mut memory = MemoryModel::new(input, NUM_VIEWS, cfg.memory.seed);

    let mut basic_opt = Sgd::new(cfg.lr, cfg.momentum, basic.net.params.len());
    let mut head_opts: Vec<Sgd> = heads.iter().map(|h| Sgd::new(cfg.lr, cfg.momentum, h.net.params.len())).collect();
    let proj_len = projection.as_ref().map_or(0, |p| p.net.params.len());
    let mut proj_opt = Sgd::new(cfg.lr, cfg.momentum, proj_len);
    let mut mem_opt = Sgd::new(cfg.memory.lr, cfg.memory.momentum, memory.net.params.len());
    let basic_refs = data.basic_refs();

    let noisy = data.noisy_eval_features(cfg.noise_sigma, eval_noise_seed(cfg));
    let mut relation = evaluate_relation(&stage1.classifiers, &noisy, cfg)?;
    let mut history = Vec::with_capacity(cfg.stage2_epochs);
    for epoch in 0..cfg.stage2_epochs {
        relation = evaluate_relation(&stage1.classifiers, &noisy, cfg)?;
        let weights = subset.weights(&relation.normalized);
        let targets = vec![relation.normalized.clone(); data.len()];
        let mem_loss = memory.fit_epoch(&basic_refs, &targets, &mut mem_opt, cfg.memory.batch, epoch as u64);

        let batches = data.batches_per_epoch(cfg);
        let mut objective = 0.0;
        for b in 0..batches {
            let positions = data.batch_positions(cfg, (1 << 40) + (epoch * batches + b) as u64)?;
            let n = positions.len();
            let labels: Vec<u8> = positions.iter().map(|&p| data.labels[p]).collect();
            let pair_labels = PairLabels::from_classes(&labels);
            let fwd: Vec<Forward> = positions
                .iter()
                .map(|&p| forward(&basic, &heads, projection.as_ref(), &fusion_cfg, &view_codes, &weights, basic_refs[p], &data.features[p], data.ids[p]))
                .collect::<Result<_>>()?;
            let scale = 1.0 / (n * n) as f64;

            // view terms weighted by the relation vector
            let view_codes_batch: Vec<Vec<Vec<f64>>> = (0..heads.len()).map(|v| fwd.iter().map(|f| f.views[v].output().to_vec()).collect()).collect();
            let mut view_grads: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; cfg.q_view]; n]; heads.len()];
            let w_rows = vec![weights.clone(); n];
            let mut obj = weighted_objective_grad(&w_rows, &view_codes_batch, &pair_labels, cfg.loss, scale, &mut view_grads);

            // fused term with unit weight
            let fused_batch = vec![fwd.iter().map(|f| f.output().to_vec()).collect::<Vec<_>>()];
            let mut fused_grads = vec![vec![vec![0.0; cfg.q]; n]];
            obj += weighted_objective_grad(&vec![vec![1.0]; n], &fused_batch, &pair_labels, cfg.loss, scale, &mut fused_grads);
            objective += obj * scale;

            let mut g_basic = vec![0.0; basic.net.params.len()];
            let mut g_heads: Vec<Vec<f64>> = heads.iter().map(|h| vec![0.0; h.net.params.len()]).collect();
            let mut g_proj = vec![0.0; proj_len];
            for (i, f) in fwd.iter().enumerate() {
                let mut g_view_codes: Vec<Vec<f64>> = (0..heads.len()).map(|v| view_grads[v][i].clone()).collect();
                let g_basic_code = match (&f.fused, &projection) {
                    (Some((expanded, trace)), Some(p)) => {
                        let g_expanded = p.net.backward(trace, &fused_grads[0][i], &mut g_proj);
                        let mut g = vec![0.0; basic.bits()];
                        expanded.scatter(&g_expanded, &mut g, &mut g_view_codes);
                        g
                    }
                    _ => fused_grads[0][i].clone(),
                };
                basic.net.backward(&f.basic, &g_basic_code, &mut g_basic);
                for (v, h) in heads.iter().enumerate() {
                    h.net.backward(&f.views[v], &g_view_codes[v], &mut g_heads[v]);
                }
            }
            basic_opt.step(&mut basic.net.params, &g_basic);
            for (v, h) in heads.iter_mut().enumerate() {
                head_opts[v].step(&mut h.net.params, &g_heads[v]);
            }
            if let Some(p) = projection.as_mut() {
                proj_opt.step(&mut p.net.params, &g_proj);
            }
        }
        let entry = Stage2Epoch {
            epoch,
            objective: check_finite(objective / batches as f64, "weighted objective")?,
            memory: check_finite(mem_loss, "memory")?,
            relation: relation.normalized.clone(),
        };
        log::info!("stage 2 epoch {epoch}: L {:.4} L^w {:.6} E {:?}", entry.objective, entry.memory, entry.relation);
        history.push(entry);
    }
    Ok(Stage2 {
        subset: subset.clone(),
        basic,
        view_heads: heads,
        projection,
        view_codes,
        memory,
        relation,
        history,
    })
}
