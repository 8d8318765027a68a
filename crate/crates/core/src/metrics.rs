//! Average precision, precision within a Hamming radius and ROC curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{CodeSet, HammingIndex, QueryResult};

/// Mean over relevant positions k of (relevant items in the top k) / k.
/// Zero when nothing is relevant, including for an empty ranking.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("mean average precision over zero queries"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep from the highest score down; one point per distinct score,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(scores: &[f64], relevant: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != relevant.len() {
        return Err(Error::shape("one relevance flag per score required"));
    }
    let pos = relevant.iter().filter(|&&r| r).count();
    let neg = relevant.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC needs both relevant and irrelevant items"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if relevant[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under an ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub bits: usize,
    pub fusion: String,
    pub relation: String,
    pub radius: usize,
    /// Ranking depth for full-ranking AP; `None` means the whole gallery.
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusPrecision {
    pub radius: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub queries: usize,
    pub gallery: usize,
    /// mAP over the full Hamming ranking of the gallery.
    pub map_full: f64,
    /// mAP over the radius-pruned, re-ranked candidate lists.
    pub map_radius: f64,
    /// Queries whose radius lookup returned nothing.
    pub empty_radius_queries: usize,
    pub precision_at_radius: Vec<RadiusPrecision>,
    /// Pooled over all query/gallery pairs, scored by negative Hamming
    /// distance. Absent when every pair has the same relevance.
    pub roc: Option<Vec<RocPoint>>,
    pub auc: Option<f64>,
}

struct PerQuery {
    ap_full: f64,
    ap_radius: f64,
    radius_empty: bool,
    within: Vec<(usize, usize)>,
    by_distance: Vec<(usize, usize)>,
}

fn label_lookup(set: &CodeSet, labels: &dyn Fn(u32) -> Option<u8>, what: &str) -> Result<Vec<u8>> {
    set.ids
        .iter()
        .map(|&id| labels(id).ok_or_else(|| Error::data(format!("no label for {what} image {id}"))))
        .collect()
}

fn eval_query(index: &HammingIndex, gallery_labels: &[u8], slot_of: &std::collections::HashMap<u32, usize>, queries: &CodeSet, k: usize, label: u8, cfg: &ReportConfig) -> Result<PerQuery> {
    let q = index.q();
    let full: QueryResult = index.rank_all(queries.ids[k], &queries.binary[k], &queries.continuous[k])?;
    let rel_full: Vec<bool> = full.hits.iter().map(|h| gallery_labels[slot_of[&h.id]] == label).collect();
    let depth = cfg.depth.unwrap_or(rel_full.len()).min(rel_full.len());
    let mut by_distance = vec![(0usize, 0usize); q + 1];
    for (h, &r) in full.hits.iter().zip(&rel_full) {
        let e = &mut by_distance[h.hamming];
        e.0 += 1;
        e.1 += r as usize;
    }
    let pruned = index.query(queries.ids[k], &queries.binary[k], &queries.continuous[k], cfg.radius)?;
    let rel_pruned: Vec<bool> = pruned.hits.iter().map(|h| gallery_labels[slot_of[&h.id]] == label).collect();
    let mut within = Vec::with_capacity(cfg.radius + 1);
    let (mut n, mut r) = (0, 0);
    for &(count, rel) in by_distance.iter().take(cfg.radius + 1) {
        n += count;
        r += rel;
        within.push((n, r));
    }
    Ok(PerQuery {
        ap_full: average_precision(&rel_full[..depth]),
        ap_radius: average_precision(&rel_pruned),
        radius_empty: pruned.hits.is_empty(),
        within,
        by_distance,
    })
}

/// Evaluates query codes against a gallery in both retrieval modes.
pub fn evaluate(gallery: &CodeSet, queries: &CodeSet, labels: &dyn Fn(u32) -> Option<u8>, cfg: ReportConfig) -> Result<EvalReport> {
    if gallery.q != queries.q && !gallery.is_empty() && !queries.is_empty() {
        return Err(Error::shape(format!("gallery codes have {} bits, query codes {}", gallery.q, queries.q)));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no query codes"));
    }
    if cfg.radius > gallery.q {
        return Err(Error::invalid(format!("radius {} exceeds code length {}", cfg.radius, gallery.q)));
    }
    let gallery_labels = label_lookup(gallery, labels, "gallery")?;
    let query_labels = label_lookup(queries, labels, "query")?;
    let slot_of = gallery.ids.iter().enumerate().map(|(s, &id)| (id, s)).collect();
    let index = HammingIndex::build(gallery.clone())?;

    let run = |k: usize| eval_query(&index, &gallery_labels, &slot_of, queries, k, query_labels[k], &cfg);
    #[cfg(feature = "parallel")]
    let per: Vec<PerQuery> = {
        use rayon::prelude::*;
        (0..queries.len()).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per: Vec<PerQuery> = (0..queries.len()).map(run).collect::<Result<_>>()?;

    let map_full = mean_ap(&per.iter().map(|p| p.ap_full).collect::<Vec<_>>())?;
    let map_radius = mean_ap(&per.iter().map(|p| p.ap_radius).collect::<Vec<_>>())?;
    let precision_at_radius = (0..=cfg.radius)
        .map(|r| RadiusPrecision {
            radius: r,
            precision: per
                .iter()
                .map(|p| {
                    let (n, rel) = p.within[r];
                    if n == 0 {
                        0.0
                    } else {
                        rel as f64 / n as f64
                    }
                })
                .sum::<f64>()
                / per.len() as f64,
        })
        .collect();

    let q = gallery.q;
    let mut totals = vec![(0usize, 0usize); q + 1];
    for p in &per {
        for (t, d) in totals.iter_mut().zip(&p.by_distance) {
            t.0 += d.0;
            t.1 += d.1;
        }
    }
    let pos: usize = totals.iter().map(|t| t.1).sum();
    let all: usize = totals.iter().map(|t| t.0).sum();
    let roc = if pos == 0 || pos == all {
        None
    } else {
        let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
        let (mut tp, mut fp) = (0usize, 0usize);
        for (d, &(n, r)) in totals.iter().enumerate() {
            if n == 0 {
                continue;
            }
            tp += r;
            fp += n - r;
            points.push(RocPoint {
                threshold: -(d as f64),
                fpr: fp as f64 / (all - pos) as f64,
                tpr: tp as f64 / pos as f64,
            });
        }
        Some(points)
    };
    let auc = roc.as_deref().map(auc);
    Ok(EvalReport {
        config: cfg,
        queries: queries.len(),
        gallery: gallery.len(),
        map_full,
        map_radius,
        empty_radius_queries: per.iter().filter(|p| p.radius_empty).count(),
        precision_at_radius,
        roc,
        auc,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        s += &format!("bits,{}\nfusion,{}\nrelation,{}\n", self.config.bits, self.config.fusion, self.config.relation);
        s += &format!("queries,{}\ngallery,{}\n", self.queries, self.gallery);
        s += &format!("map_full,{}\nmap_radius,{}\nempty_radius_queries,{}\n", self.map_full, self.map_radius, self.empty_radius_queries);
        for p in &self.precision_at_radius {
            s += &format!("precision@{},{}\n", p.radius, p.precision);
        }
        if let Some(a) = self.auc {
            s += &format!("auc,{a}\n");
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in self.roc.iter().flatten() {
            s += &format!("{},{},{}\n", p.threshold, p.fpr, p.tpr);
        }
        s
    }

    /// Writes `<stem>.json`, `<stem>.csv` and `<stem>_roc.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        for (name, body) in [
            (format!("{stem}.json"), self.to_json()?),
            (format!("{stem}.csv"), self.to_csv()),
            (format!("{stem}_roc.csv"), self.roc_csv()),
        ] {
            let path = dir.join(name);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
