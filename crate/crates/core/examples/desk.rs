//! Desk-scale comparison of the baseline, the three fusion methods and the
//! memory-predicted relation on the procedural corpus (or CIFAR-10 when
//! `MVHASH_CIFAR10_DIR` is set).
//!
//! cargo run --release -p mvhash-core --example desk -- [train query gallery epochs1 epochs2]

use std::time::Instant;

use mvhash::fusion::FusionMethod;
use mvhash::hashcore::{TrainConfig, ViewSubset};
use mvhash::pipeline::{self, Prepared};
use mvhash::{ingest, synth, RelationSource};

fn main() -> mvhash::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (n_train, n_query, n_gallery) = (arg(0, 5000), arg(1, 1000), arg(2, 10_000));
    let seed = 1;
    let mut cfg = TrainConfig::default().with_seed(seed);
    cfg.stage1_epochs = arg(3, cfg.stage1_epochs);
    cfg.stage2_epochs = arg(4, cfg.stage2_epochs);
    let records = match std::env::var_os("MVHASH_CIFAR10_DIR") {
        Some(dir) => ingest::load_cifar10(dir)?,
        None => synth::synth_dataset(n_train + n_query + n_gallery, seed)?,
    };
    let split = ingest::make_split_capped(&records, n_train, n_query, Some(n_gallery), seed)?;
    let t = Instant::now();
    let prepared = Prepared::new(&records, &split, &cfg)?;
    println!("features: {:.1}s", t.elapsed().as_secs_f64());

    let run = |name: &str, cfg: &TrainConfig, subset: &ViewSubset| -> mvhash::Result<()> {
        let t = Instant::now();
        let model = pipeline::train_model(&prepared, cfg, subset)?;
        let secs = t.elapsed().as_secs_f64();
        let exact = pipeline::evaluate_model(&model, &prepared, RelationSource::Exact, 2, None)?;
        let memory = pipeline::evaluate_model(&model, &prepared, RelationSource::Memory, 2, None)?;
        let e = &model.hashing.relation.normalized;
        let m = model.relation(RelationSource::Memory, &prepared.query.iter().map(|f| model.standardizer.transform(f)).collect::<Vec<_>>());
        println!(
            "{name:10} mAP {:.4} radius {:.4} memory {:.4} | E {:?} |pred-E| {:.4} | {secs:.1}s",
            exact.report.map_full,
            exact.report.map_radius,
            memory.report.map_full,
            e.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            e.iter().zip(&m).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );
        Ok(())
    };
    run("baseline", &cfg, &ViewSubset::baseline())?;
    for method in [FusionMethod::Replication, FusionMethod::ViewCode, FusionMethod::Pooling] {
        let mut c = cfg.clone();
        c.fusion.method = method;
        run(&format!("full +{method}"), &c, &ViewSubset::full())?;
    }
    Ok(())
}
