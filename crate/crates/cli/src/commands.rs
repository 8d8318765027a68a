use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvhash::features;
use mvhash::hashcore::TrainConfig;
use mvhash::ingest::{self, DatasetSplit, ImageRecord};
use mvhash::metrics::{self, ReportConfig};
use mvhash::model::Model;
use mvhash::pipeline::{self, Prepared};
use mvhash::retrieval::{CodeSet, HammingIndex};
use mvhash::{synth, Error, RelationSource, Result};

use crate::config::{RunArgs, RunConfig};

pub const CHECKPOINT: &str = "model.ckpt";
pub const RELATION: &str = "relation.json";
pub const LOSSES: &str = "losses.csv";
pub const CONFIG: &str = "config.json";
pub const SPLIT: &str = "split.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetName {
    Train,
    Query,
    Gallery,
}

impl FromStr for SetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "query" => Ok(Self::Query),
            "gallery" => Ok(Self::Gallery),
            other => Err(Error::InvalidArgument(format!("unknown set {other:?} (train|query|gallery)"))),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.into(), source }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

fn load_records(cfg: &RunConfig) -> Result<Vec<ImageRecord>> {
    match (&cfg.data, cfg.synthetic) {
        (_, Some(n)) => synth::synth_dataset(n, cfg.seed),
        (Some(dir), None) => ingest::load_cifar10(dir),
        (None, None) => Err(Error::InvalidArgument("no dataset configured".into())),
    }
}

fn make_split(cfg: &RunConfig, records: &[ImageRecord]) -> Result<DatasetSplit> {
    ingest::make_split_capped(records, cfg.n_train, cfg.n_query, cfg.n_gallery, cfg.seed)
}

fn loss_csv(model: &Model) -> String {
    let mut s = String::from("stage,epoch,L^p,L^c,L,L^w\n");
    for e in &model.stage1_history {
        s += &format!("1,{},{},{},,\n", e.epoch, e.classification, e.basic);
    }
    for e in model.stage2_history() {
        s += &format!("2,{},,,{},{}\n", e.epoch, e.objective, e.memory);
    }
    s
}

fn relation_json(model: &Model) -> Result<String> {
    let r = &model.hashing.relation;
    let value = serde_json::json!({
        "views": features::VIEW_NAMES,
        "raw": r.raw,
        "normalized": r.normalized,
        "per_view_max": r.variant.per_view_max,
        "denominator": r.variant.denominator,
        "eval_seed": r.eval_seed,
        "eval_images": r.eval_images,
    });
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

pub fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    cfg.save(&cfg.out.join(CONFIG))?;
    log::info!("seed {} drives the split, pair, noise, init and pooling streams", cfg.seed);
    let records = load_records(&cfg)?;
    let split = make_split(&cfg, &records)?;
    split.save(cfg.out.join(SPLIT))?;
    let prepared = Prepared::new(&records, &split, &cfg.train)?;
    let model = pipeline::train_model(&prepared, &cfg.train, &cfg.subset())?;
    model.save(cfg.out.join(CHECKPOINT))?;
    write_file(&cfg.out.join(RELATION), &relation_json(&model)?)?;
    write_file(&cfg.out.join(LOSSES), &loss_csv(&model))?;
    let eval = pipeline::evaluate_model(&model, &prepared, cfg.relation, mvhash::retrieval::DEFAULT_RADIUS, None)?;
    eval.report.write(&cfg.out, "eval")?;
    log::info!("mAP {:.4} (full ranking), {:.4} (radius 2)", eval.report.map_full, eval.report.map_radius);
    println!("{}", cfg.out.join(CHECKPOINT).display());
    Ok(())
}

fn run_config_for(model: &Path, run: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    let dir = match run {
        Some(p) if p.is_file() => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        Some(p) => p.to_path_buf(),
        None => model.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let cfg_path = match run {
        Some(p) if p.is_file() => p.to_path_buf(),
        _ => dir.join(CONFIG),
    };
    Ok((RunConfig::load(&cfg_path)?, dir))
}

pub fn encode(model_path: &Path, run: Option<&Path>, set: SetName, relation: RelationSource, out: &Path, labels_out: Option<&Path>) -> Result<()> {
    let model = Model::load(model_path)?;
    let (cfg, dir) = run_config_for(model_path, run)?;
    let records = load_records(&cfg)?;
    let split_path = dir.join(SPLIT);
    let split = if split_path.exists() { DatasetSplit::load(&split_path)? } else { make_split(&cfg, &records)? };
    let ids = match set {
        SetName::Train => &split.train,
        SetName::Query => &split.query,
        SetName::Gallery => &split.gallery,
    };
    let by_id: HashMap<u32, &ImageRecord> = records.iter().map(|r| (r.id, r)).collect();
    let chosen: Vec<ImageRecord> = ids
        .iter()
        .map(|id| by_id.get(id).map(|r| (*r).clone()).ok_or_else(|| Error::Data(format!("split refers to unknown image {id}"))))
        .collect::<Result<_>>()?;
    let feats = features::extract_all(&chosen)?;
    let codes = model.encode(&feats, relation)?;
    codes.save(out)?;
    if let Some(path) = labels_out {
        let mut s = String::from("id,label\n");
        for r in &chosen {
            s += &format!("{},{}\n", r.id, r.label);
        }
        write_file(path, &s)?;
    }
    log::info!("encoded {} images into {}-bit codes ({} relation)", codes.len(), codes.q, relation);
    Ok(())
}

pub fn index(codes: &Path, out: &Path) -> Result<()> {
    let set = CodeSet::load(codes)?;
    let idx = HammingIndex::build(set)?;
    idx.save(out)?;
    log::info!("indexed {} codes of {} bits in {} buckets", idx.len(), idx.q(), idx.buckets().count());
    Ok(())
}

pub fn query(index: &Path, codes: &Path, id: Option<u32>, radius: usize, top: usize) -> Result<()> {
    let idx = HammingIndex::load(index)?;
    let queries = CodeSet::load(codes)?;
    if !idx.is_empty() && queries.q != idx.q() {
        return Err(Error::Shape(format!("{}-bit queries against a {}-bit index", queries.q, idx.q())));
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut found = false;
    for k in 0..queries.len() {
        if id.is_some_and(|want| want != queries.ids[k]) {
            continue;
        }
        found = true;
        let mut result = idx.query(queries.ids[k], &queries.binary[k], &queries.continuous[k], radius)?;
        result.hits.truncate(top);
        writeln!(out, "{}", serde_json::to_string(&result)?).map_err(io_err(Path::new("<stdout>")))?;
    }
    if let (Some(want), false) = (id, found) {
        return Err(Error::Data(format!("query id {want} not in {}", codes.display())));
    }
    Ok(())
}

fn read_labels(path: &Path) -> Result<HashMap<u32, u8>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("id")) {
            continue;
        }
        let bad = || Error::Data(format!("{}:{}: expected id,label", path.display(), n + 1));
        let (id, label) = line.split_once(',').ok_or_else(bad)?;
        out.insert(id.trim().parse().map_err(|_| bad())?, label.trim().parse().map_err(|_| bad())?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn eval(gallery: &Path, queries: &Path, labels: &Path, radius: usize, depth: Option<usize>, fusion: String, relation: String, out: &Path) -> Result<()> {
    let g = CodeSet::load(gallery)?;
    let q = CodeSet::load(queries)?;
    if g.q != q.q {
        return Err(Error::Shape(format!("gallery codes have {} bits, query codes {}", g.q, q.q)));
    }
    let labels = read_labels(labels)?;
    let cfg = ReportConfig {
        bits: g.q,
        fusion,
        relation,
        radius,
        depth,
    };
    let report = metrics::evaluate(&g, &q, &|id| labels.get(&id).copied(), cfg)?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    report.write(out, "eval")?;
    println!("mAP full {:.4} radius {:.4}", report.map_full, report.map_radius);
    Ok(())
}

pub fn ablate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    cfg.save(&cfg.out.join(CONFIG))?;
    let records = load_records(&cfg)?;
    let split = make_split(&cfg, &records)?;
    split.save(cfg.out.join(SPLIT))?;
    let train: &TrainConfig = &cfg.train;
    let prepared = Prepared::new(&records, &split, train)?;
    let rows = pipeline::ablate(&prepared, train, &pipeline::ablation_subsets(), cfg.relation)?;
    let csv = pipeline::ablation_csv(&rows);
    write_file(&cfg.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn synth(out: &Path, count: usize, seed: u64) -> Result<()> {
    let records = synth::synth_dataset(count, seed)?;
    synth::write_corpus(out, &records)?;
    log::info!("wrote {count} images to {}", out.display());
    Ok(())
}
