//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function wraps a plain Rust function returning JSON so the
//! same logic is testable natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mvhash::features::{self, VIEW_NAMES};
use mvhash::fusion::{self, FusionConfig, FusionMethod, FusionVector, Source};
use mvhash::ingest::{PLANE, SIDE};
use mvhash::synth;
use mvhash::viewrel;

/// Log normalisation of a raw stability vector.
pub fn normalize(raw: &[f64]) -> Result<Vec<f64>, String> {
    if raw.is_empty() {
        return Err("enter at least one value".into());
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(viewrel::normalize(raw))
}

/// Parameters of [`layout`], mirroring [`FusionConfig`].
#[derive(Debug, Clone)]
pub struct LayoutRequest {
    pub method: String,
    pub weights: Vec<f64>,
    pub q_basic: usize,
    pub q_view: usize,
    pub v: Vec<usize>,
    pub budget: usize,
    pub k: usize,
    pub w: usize,
    pub seed: u64,
    pub image_id: u32,
}

/// Expanded code produced from placeholder codes, described element by
/// element: `{"length", "views", "elements": [{"kind", "view", "index"}]}`.
pub fn layout(req: &LayoutRequest) -> Result<Value, String> {
    let method: FusionMethod = req.method.parse().map_err(|e: mvhash::Error| e.to_string())?;
    let m = req.weights.len();
    if m == 0 || m > features::NUM_VIEWS {
        return Err(format!("between 1 and {} view weights required", features::NUM_VIEWS));
    }
    if req.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err("weights must lie in [0, 1]".into());
    }
    if req.q_basic == 0 || req.q_view == 0 || req.q_basic > 256 || req.q_view > 256 {
        return Err("code lengths must be between 1 and 256".into());
    }
    let v = FusionVector::new(req.v.clone()).map_err(|e| e.to_string())?;
    if v.0.len() < m {
        return Err(format!("fusion vector needs at least {m} entries"));
    }
    let cfg = FusionConfig {
        method,
        v: v.tail(m),
        budget: req.budget,
        k: req.k,
        w: req.w,
        seed: req.seed,
    };
    if fusion::expanded_len(&cfg, req.q_basic, req.q_view, m) > 20_000 {
        return Err("expanded code too long to draw".into());
    }
    let basic = vec![0.0; req.q_basic];
    // distinct values per position so pooling picks a definite maximum
    let views: Vec<Vec<f64>> = (0..m).map(|_| (0..req.q_view).map(|i| i as f64 / req.q_view as f64).collect()).collect();
    let refs: Vec<&[f64]> = views.iter().map(Vec::as_slice).collect();
    let view_codes = fusion::draw_view_codes(req.seed, m);
    let expanded = fusion::fuse(&cfg, &basic, &refs, &req.weights, &view_codes, req.image_id).map_err(|e| e.to_string())?;
    let elements: Vec<Value> = expanded
        .sources
        .iter()
        .map(|s| match *s {
            Source::Basic(i) => json!({ "kind": "basic", "index": i }),
            Source::View { view, index } => json!({ "kind": "view", "view": view, "index": index }),
            Source::Constant => json!({ "kind": "constant" }),
        })
        .collect();
    Ok(json!({
        "length": expanded.len(),
        "views": VIEW_NAMES[..m],
        "rank": fusion::rank_views(&req.weights),
        "layout": expanded.layout,
        "elements": elements,
    }))
}

/// RGBA pixels of a procedural image, row major, for a canvas.
pub fn sample_rgba(label: u8, id: u32, seed: u64) -> Result<Vec<u8>, String> {
    let rec = synth::synth_image(id, label, seed).map_err(|e| e.to_string())?;
    let planes = rec.planes();
    let mut out = Vec::with_capacity(4 * PLANE);
    for p in 0..SIDE * SIDE {
        out.extend_from_slice(&[planes[p], planes[PLANE + p], planes[2 * PLANE + p], 255]);
    }
    Ok(out)
}

/// The four view descriptors of a procedural image.
pub fn sample_views(label: u8, id: u32, seed: u64) -> Result<Value, String> {
    let rec = synth::synth_image(id, label, seed).map_err(|e| e.to_string())?;
    let set = features::extract(&rec);
    let views: Vec<Value> = VIEW_NAMES.iter().zip(&set.views).map(|(name, v)| json!({ "name": name, "values": v })).collect();
    Ok(json!({ "label": label, "id": id, "views": views }))
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = normalizeRelation)]
pub fn normalize_relation(raw: &[f64]) -> Result<Vec<f64>, JsError> {
    normalize(raw).map_err(js)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = fusionLayout)]
pub fn fusion_layout(method: &str, weights: &[f64], q_basic: usize, q_view: usize, v: &[usize], budget: usize, k: usize, w: usize, seed: u32, image_id: u32) -> Result<String, JsError> {
    let req = LayoutRequest {
        method: method.to_string(),
        weights: weights.to_vec(),
        q_basic,
        q_view,
        v: v.to_vec(),
        budget,
        k,
        w,
        seed: seed as u64,
        image_id,
    };
    Ok(layout(&req).map_err(js)?.to_string())
}

#[wasm_bindgen(js_name = sampleImage)]
pub fn sample_image(label: u8, id: u32, seed: u32) -> Result<Vec<u8>, JsError> {
    sample_rgba(label, id, seed as u64).map_err(js)
}

#[wasm_bindgen(js_name = sampleFeatures)]
pub fn sample_features(label: u8, id: u32, seed: u32) -> Result<String, JsError> {
    Ok(sample_views(label, id, seed as u64).map_err(js)?.to_string())
}
