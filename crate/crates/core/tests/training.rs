use mvhash::fusion::FusionMethod;
use mvhash::hashcore::{TrainConfig, ViewSubset};
use mvhash::pipeline::{self, Prepared};
use mvhash::{ingest, synth, Model, RelationSource};

fn small(cfg: &TrainConfig) -> Prepared {
    let records = synth::synth_dataset(1400, 3).unwrap();
    let split = ingest::make_split_capped(&records, 800, 100, Some(500), 3).unwrap();
    Prepared::new(&records, &split, cfg).unwrap()
}

fn quick() -> TrainConfig {
    let mut cfg = TrainConfig::default().with_seed(3);
    cfg.stage1_epochs = 12;
    cfg.stage2_epochs = 6;
    cfg
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn stage1_losses_fall() {
    let cfg = quick();
    let prepared = small(&cfg);
    let s1 = pipeline::train_stage1_for(&prepared, &cfg).unwrap();
    assert_eq!(s1.history.len(), 12);
    let head = mean(s1.history[..4].iter().map(|e| e.basic));
    let tail = mean(s1.history[8..].iter().map(|e| e.basic));
    assert!(tail < head, "pair loss {head} -> {tail}");
    let head = mean(s1.history[..4].iter().map(|e| e.classification));
    let tail = mean(s1.history[8..].iter().map(|e| e.classification));
    assert!(tail < head, "classification loss {head} -> {tail}");
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let cfg = quick();
    let prepared = small(&cfg);
    let a = pipeline::train_model(&prepared, &cfg, &ViewSubset::full()).unwrap();
    let b = pipeline::train_model(&prepared, &cfg, &ViewSubset::full()).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert_eq!(bytes, b.to_bytes().unwrap());

    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let x = a.encode(&prepared.query, RelationSource::Exact).unwrap();
    let y = back.encode(&prepared.query, RelationSource::Exact).unwrap();
    assert_eq!(x.binary, y.binary);
    assert_eq!(x.continuous, y.continuous);
}

#[test]
fn memory_relation_keeps_code_shape() {
    for method in [FusionMethod::Replication, FusionMethod::ViewCode, FusionMethod::Pooling] {
        let mut cfg = quick();
        cfg.fusion.method = method;
        let prepared = small(&cfg);
        let model = pipeline::train_model(&prepared, &cfg, &ViewSubset::full()).unwrap();
        let exact = model.encode(&prepared.gallery, RelationSource::Exact).unwrap();
        let memory = model.encode(&prepared.gallery, RelationSource::Memory).unwrap();
        assert_eq!(exact.q, memory.q, "{method:?}");
        assert_eq!(exact.len(), memory.len());
        assert_eq!(exact.ids, memory.ids);
    }
}

#[test]
fn stage2_improves_on_stage1_codes() {
    let cfg = quick();
    let prepared = small(&cfg);
    let mut untrained = cfg.clone();
    untrained.stage2_epochs = 0;
    let before = pipeline::train_model(&prepared, &untrained, &ViewSubset::full()).unwrap();
    let after = pipeline::train_model(&prepared, &cfg, &ViewSubset::full()).unwrap();
    assert!(before.stage2_history().is_empty());
    let m0 = pipeline::evaluate_model(&before, &prepared, RelationSource::Exact, 2, None).unwrap().report.map_full;
    let m1 = pipeline::evaluate_model(&after, &prepared, RelationSource::Exact, 2, None).unwrap().report.map_full;
    assert!(m1 > m0, "mAP {m0} -> {m1}");
}

#[test]
fn invalid_configs_are_rejected() {
    let cfg = quick();
    let prepared = small(&cfg);
    let mut bad = cfg.clone();
    bad.lr = -1.0;
    assert!(pipeline::train_model(&prepared, &bad, &ViewSubset::full()).is_err());
    let mut bad = cfg.clone();
    bad.q = 0;
    assert!(pipeline::train_model(&prepared, &bad, &ViewSubset::baseline()).is_err());
}
