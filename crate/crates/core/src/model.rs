//! Trained model, checkpoint container and encoding.
//!
//! Checkpoint layout (little endian): magic `MVHM`, u32 version, u64 length
//! of a JSON metadata block, the JSON bytes, u64 count of f64 weights, the
//! weights. In the JSON every network `params` array is replaced by
//! `{"offset": o, "len": n}` pointing into the weight block.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::binio::{put_f64, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::features::{FeatureViewSet, Standardizer};
use crate::fusion::{self, FusionMethod};
use crate::hashcore::train::{encode_one, Stage1, Stage1Epoch, Stage2, Stage2Epoch};
use crate::hashcore::TrainConfig;
use crate::memory;
use crate::retrieval::CodeSet;
use crate::viewrel::ViewClassifier;

const MAGIC: &[u8; 4] = b"MVHM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationSource {
    /// The relation vector measured by stability evaluation during training.
    #[default]
    Exact,
    /// The memory model's prediction over the images being encoded.
    Memory,
}

impl FromStr for RelationSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "memory" => Ok(Self::Memory),
            other => Err(Error::invalid(format!("unknown relation source {other:?} (exact|memory)"))),
        }
    }
}

impl fmt::Display for RelationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Memory => "memory",
        })
    }
}

/// Geometry of the expanded code fed to the fusion projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDescriptor {
    pub method: FusionMethod,
    pub views: Vec<usize>,
    pub q_basic: usize,
    pub q_view: usize,
    pub expanded_len: usize,
    /// Replication counts by rank (replication only).
    pub v: Option<Vec<usize>>,
    /// Total length (view-code only).
    pub budget: Option<usize>,
    /// Expansion factor, window and slot count (pooling only).
    pub k: Option<usize>,
    pub w: Option<usize>,
    pub slots: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: TrainConfig,
    pub standardizer: Standardizer,
    pub classifiers: Vec<ViewClassifier>,
    pub hashing: Stage2,
    pub layout: LayoutDescriptor,
    pub stage1_history: Vec<Stage1Epoch>,
}

impl Model {
    pub fn new(config: TrainConfig, standardizer: Standardizer, stage1: &Stage1, hashing: Stage2) -> Self {
        let views = hashing.subset.views.clone();
        let mut fusion = config.fusion.clone();
        fusion.v = fusion.v.tail(views.len());
        let q_basic = hashing.basic.bits();
        let (mut v, mut budget, mut k, mut w, mut slots) = (None, None, None, None, None);
        match fusion.method {
            FusionMethod::Replication => v = Some(fusion.v.0.clone()),
            FusionMethod::ViewCode => budget = Some(fusion.budget),
            FusionMethod::Pooling => {
                k = Some(fusion.k);
                w = Some(fusion.w);
                slots = Some(fusion.k * config.q_view / fusion.w);
            }
        }
        let layout = LayoutDescriptor {
            method: fusion.method,
            expanded_len: fusion::expanded_len(&fusion, q_basic, config.q_view, views.len()),
            views,
            q_basic,
            q_view: config.q_view,
            v,
            budget,
            k,
            w,
            slots,
        };
        Self {
            config,
            standardizer,
            classifiers: stage1.classifiers.clone(),
            hashing,
            layout,
            stage1_history: stage1.history.clone(),
        }
    }

    pub fn bits(&self) -> usize {
        self.config.q
    }

    pub fn stage2_history(&self) -> &[Stage2Epoch] {
        &self.hashing.history
    }

    /// Normalised relation vector over all views for the given source.
    /// `Memory` averages the memory model's predictions over `standardized`.
    pub fn relation(&self, source: RelationSource, standardized: &[FeatureViewSet]) -> Vec<f64> {
        match source {
            RelationSource::Exact => self.hashing.relation.normalized.clone(),
            RelationSource::Memory => {
                let rows: Vec<Vec<f64>> = standardized.iter().map(FeatureViewSet::concatenated).collect();
                let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
                memory::predict_relation(&self.hashing.memory, &refs)
            }
        }
    }

    /// Relaxed and binary codes for raw (unstandardised) feature sets.
    pub fn encode(&self, raw: &[FeatureViewSet], source: RelationSource) -> Result<CodeSet> {
        let standardized: Vec<FeatureViewSet> = raw.iter().map(|f| self.standardizer.transform(f)).collect();
        let weights = self.hashing.subset.weights(&self.relation(source, &standardized));
        let mut fusion = self.config.fusion.clone();
        fusion.v = fusion.v.tail(self.hashing.subset.views.len());
        let h = &self.hashing;
        let one = |f: &FeatureViewSet| encode_one(&h.basic, &h.view_heads, h.projection.as_ref(), &fusion, &h.view_codes, &weights, f, f.id);
        #[cfg(feature = "parallel")]
        let codes: Vec<Vec<f64>> = {
            use rayon::prelude::*;
            standardized.par_iter().map(one).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let codes: Vec<Vec<f64>> = standardized.iter().map(one).collect::<Result<_>>()?;
        CodeSet::from_relaxed(raw.iter().map(|f| f.id).collect(), codes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut value = serde_json::to_value(self)?;
        let mut payload = Vec::new();
        extract_params(&mut value, &mut payload)?;
        let meta = serde_json::to_vec(&value)?;
        let mut out = Vec::with_capacity(24 + meta.len() + 8 * payload.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u64(&mut out, meta.len() as u64);
        out.extend_from_slice(&meta);
        put_u64(&mut out, payload.len() as u64);
        for v in payload {
            put_f64(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")));
        }
        let meta_len = r.u64()? as usize;
        let mut value: Value = serde_json::from_slice(r.take(meta_len)?)?;
        let n = r.u64()? as usize;
        let payload = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        restore_params(&mut value, &payload)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn extract_params(value: &mut Value, payload: &mut Vec<f64>) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if key == "params" {
                    if let Value::Array(items) = v {
                        let offset = payload.len();
                        for item in items.iter() {
                            payload.push(item.as_f64().ok_or_else(|| Error::Format("non-numeric weight".into()))?);
                        }
                        *v = json!({ "offset": offset, "len": items.len() });
                        continue;
                    }
                }
                extract_params(v, payload)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                extract_params(v, payload)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn restore_params(value: &mut Value, payload: &[f64]) -> Result<()> {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if key == "params" {
                    let (Some(offset), Some(len)) = (v.get("offset").and_then(Value::as_u64), v.get("len").and_then(Value::as_u64)) else {
                        return Err(Error::Format("malformed weight reference".into()));
                    };
                    let (offset, len) = (offset as usize, len as usize);
                    let slice = payload.get(offset..offset + len).ok_or_else(|| Error::Format("weight reference out of range".into()))?;
                    *v = Value::Array(slice.iter().map(|&x| json!(x)).collect());
                    continue;
                }
                restore_params(v, payload)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                restore_params(v, payload)?;
            }
        }
        _ => {}
    }
    Ok(())
}
