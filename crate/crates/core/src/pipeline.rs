//! End-to-end runs: feature preparation, two-stage training, evaluation and
//! the view ablation table.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureViewSet, NUM_VIEWS, VIEW_NAMES};
use crate::hashcore::{train_stage1, train_stage2, Stage1, TrainConfig, TrainingData, ViewSubset};
use crate::ingest::{DatasetSplit, ImageRecord};
use crate::metrics::{self, EvalReport, ReportConfig};
use crate::model::{Model, RelationSource};
use crate::retrieval::{CodeSet, DEFAULT_RADIUS};

/// Features for every part of a split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub labels: HashMap<u32, u8>,
    pub train: TrainingData,
    pub train_raw: Vec<FeatureViewSet>,
    pub query: Vec<FeatureViewSet>,
    pub gallery: Vec<FeatureViewSet>,
}

fn pick(by_id: &HashMap<u32, &ImageRecord>, ids: &[u32]) -> Result<Vec<ImageRecord>> {
    ids.iter()
        .map(|id| by_id.get(id).map(|r| (*r).clone()).ok_or_else(|| Error::data(format!("split refers to unknown image {id}"))))
        .collect()
}

impl Prepared {
    pub fn new(records: &[ImageRecord], split: &DatasetSplit, cfg: &TrainConfig) -> Result<Self> {
        let by_id: HashMap<u32, &ImageRecord> = records.iter().map(|r| (r.id, r)).collect();
        let train_records = pick(&by_id, &split.train)?;
        let query_records = pick(&by_id, &split.query)?;
        let gallery_records = pick(&by_id, &split.gallery)?;
        let train_raw = features::extract_all(&train_records)?;
        let query = features::extract_all(&query_records)?;
        let gallery = features::extract_all(&gallery_records)?;
        let train = TrainingData::new(&train_records, &train_raw, cfg.eval_images, cfg.seed)?;
        let labels = records.iter().map(|r| (r.id, r.label)).collect();
        Ok(Self {
            split: split.clone(),
            labels,
            train,
            train_raw,
            query,
            gallery,
        })
    }

    pub fn label(&self, id: u32) -> Option<u8> {
        self.labels.get(&id).copied()
    }
}

/// Training configuration actually used for `subset`: a model without views
/// emits its basic code directly, so its basic head gets the full length.
pub fn config_for(cfg: &TrainConfig, subset: &ViewSubset) -> TrainConfig {
    let mut c = cfg.clone();
    if subset.views.is_empty() {
        c.q_basic = c.q;
    }
    c
}

pub fn train_stage1_for(prepared: &Prepared, cfg: &TrainConfig) -> Result<Stage1> {
    train_stage1(&prepared.train, cfg)
}

/// Stage 2 on top of an existing stage 1 trained with `config_for(cfg, subset)`.
pub fn finish_model(prepared: &Prepared, stage1: &Stage1, cfg: &TrainConfig, subset: &ViewSubset) -> Result<Model> {
    let cfg = config_for(cfg, subset);
    let stage2 = train_stage2(stage1, &prepared.train, &cfg, subset)?;
    Ok(Model::new(cfg, prepared.train.standardizer.clone(), stage1, stage2))
}

pub fn train_model(prepared: &Prepared, cfg: &TrainConfig, subset: &ViewSubset) -> Result<Model> {
    let stage1 = train_stage1(&prepared.train, &config_for(cfg, subset))?;
    finish_model(prepared, &stage1, cfg, subset)
}

/// Query and gallery codes plus the evaluation report.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub query: CodeSet,
    pub gallery: CodeSet,
    pub report: EvalReport,
}

pub fn evaluate_model(model: &Model, prepared: &Prepared, source: RelationSource, radius: usize, depth: Option<usize>) -> Result<Evaluation> {
    let query = model.encode(&prepared.query, source)?;
    let gallery = model.encode(&prepared.gallery, source)?;
    let cfg = ReportConfig {
        bits: model.bits(),
        fusion: model.layout.method.to_string(),
        relation: source.to_string(),
        radius,
        depth,
    };
    let report = metrics::evaluate(&gallery, &query, &|id| prepared.label(id), cfg)?;
    Ok(Evaluation { query, gallery, report })
}

pub fn subset_name(subset: &ViewSubset) -> String {
    if subset.views.is_empty() {
        return "baseline".into();
    }
    let mut name = subset.views.iter().map(|&m| VIEW_NAMES[m]).collect::<Vec<_>>().join("+");
    if subset.use_relation {
        name += "+E";
    }
    name
}

/// Ablation rows: the baseline (basic code only), each single view, every
/// subset of two or three views with the relation vector, and the full model.
pub fn ablation_subsets() -> Vec<ViewSubset> {
    let mut rows = vec![ViewSubset::baseline()];
    let mut by_size: Vec<Vec<usize>> = (1u32..(1 << NUM_VIEWS)).map(|mask| (0..NUM_VIEWS).filter(|m| mask & (1 << m) != 0).collect()).collect();
    by_size.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    for views in by_size {
        rows.push(ViewSubset { views, use_relation: true });
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub views: Vec<usize>,
    pub use_relation: bool,
    pub map_full: f64,
    pub map_radius: f64,
    /// Training wall-clock time in seconds, stage 1 included.
    pub seconds: f64,
}

pub fn ablate(prepared: &Prepared, cfg: &TrainConfig, subsets: &[ViewSubset], source: RelationSource) -> Result<Vec<AblationRow>> {
    let mut shared: Option<(Stage1, f64)> = None;
    let mut rows = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let row_cfg = config_for(cfg, subset);
        let start = Instant::now();
        let (stage1, stage1_secs) = if subset.views.is_empty() {
            (train_stage1(&prepared.train, &row_cfg)?, 0.0)
        } else {
            if shared.is_none() {
                let t = Instant::now();
                let s = train_stage1(&prepared.train, &row_cfg)?;
                shared = Some((s, t.elapsed().as_secs_f64()));
            }
            let (s, secs) = shared.as_ref().unwrap();
            (s.clone(), *secs)
        };
        let model = finish_model(prepared, &stage1, cfg, subset)?;
        let seconds = start.elapsed().as_secs_f64() + stage1_secs;
        let eval = evaluate_model(&model, prepared, source, DEFAULT_RADIUS, None)?;
        let row = AblationRow {
            name: subset_name(subset),
            views: subset.views.clone(),
            use_relation: subset.use_relation,
            map_full: eval.report.map_full,
            map_radius: eval.report.map_radius,
            seconds,
        };
        log::info!("ablation {}: mAP {:.4} (radius {:.4}) in {:.1}s", row.name, row.map_full, row.map_radius, row.seconds);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("row,views,relation,map_full,map_radius,seconds\n");
    for r in rows {
        let views = r.views.iter().map(|&m| VIEW_NAMES[m]).collect::<Vec<_>>().join("+");
        s += &format!("{},{},{},{:.6},{:.6},{:.3}\n", r.name, views, r.use_relation, r.map_full, r.map_radius, r.seconds);
    }
    s
}
