mod common;

use common::*;
use ncl_core::data::{generate_dataset, next_batch, AugmentationConfig, DatasetSpec, NcdDataset};
use ncl_core::losses::ce_loss;
use ncl_core::model::{ModelState, OptimizerState, SgdConfig, Upstream};
use ncl_core::pipeline::*;
use ncl_core::Error;
use rand::Rng;

fn tiny_config(preset: Preset, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_preset(preset);
    cfg.seed = seed;
    cfg.dataset.per_class = 40;
    cfg.dataset.separation = 4.0;
    cfg.batch_size = 32;
    cfg.memory_size = 100;
    cfg.hng.k2 = 20;
    cfg.epochs = StageEpochs { pretext: 1, supervised: 2, discovery: 5 };
    cfg
}

fn stage2_model(cfg: &RunConfig) -> (ModelState<f64>, NcdDataset) {
    let ds = generate_dataset(&cfg.dataset, derive_seed(cfg.seed, Stream::Data)).unwrap();
    let mut ms = ModelState::new(cfg.encoder_spec(), 5, 5, derive_seed(cfg.seed, Stream::Init)).unwrap();
    stage2_supervised(&mut ms, &ds, cfg).unwrap();
    (ms, ds)
}

#[test]
fn well_separated_clusters_are_nearest_centroid_separable() {
    let spec = DatasetSpec { input_dim: 16, labeled_classes: 5, unlabeled_classes: 5, per_class: 100, separation: 50.0 };
    let ds = generate_dataset(&spec, 9).unwrap();
    let d = ds.input_dim;
    let mut centroids = vec![vec![0.0; d]; 5];
    for s in &ds.unlabeled {
        for (c, x) in centroids[s.hidden_y].iter_mut().zip(&s.x) {
            *c += x / 100.0;
        }
    }
    let correct = ds
        .unlabeled
        .iter()
        .filter(|s| {
            let dist = |c: &Vec<f64>| c.iter().zip(&s.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..5).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == s.hidden_y
        })
        .count();
    assert!(correct as f64 / ds.unlabeled.len() as f64 >= 0.99);
}

#[test]
fn batch_sampling_is_class_uniform() {
    let spec = DatasetSpec { input_dim: 4, labeled_classes: 5, unlabeled_classes: 5, per_class: 50, separation: 5.0 };
    let ds = generate_dataset(&spec, 3).unwrap();
    let mut r = rng(17);
    let mut counts = [0usize; 5];
    let mut total = 0;
    while total < 10_000 {
        let b = next_batch(&ds, 100, &AugmentationConfig::NONE, &mut r).unwrap();
        for &i in &b.unlabeled_indices {
            counts[ds.unlabeled[i].hidden_y] += 1;
            total += 1;
        }
    }
    for c in counts {
        let freq = c as f64 / total as f64;
        assert!((freq - 0.2).abs() <= 0.03, "class frequency {freq}");
    }
}

#[test]
fn frozen_first_layer_is_bitwise_constant_over_100_steps() {
    let mut ms = small_model(4);
    ms.freeze_prefix(1).unwrap();
    let first = ms.layers()[0].clone();
    let second = ms.layers()[1].clone();
    let mut opt = OptimizerState::new(&SgdConfig::default()).unwrap();
    let mut r = rng(8);
    for _ in 0..100 {
        for _ in 0..4 {
            let f = ms.forward(&gaussian(&mut r, 4)).unwrap();
            let mut up = Upstream::for_model(&ms);
            up.d_logits_l = ce_loss(&f.p_l, r.random_range(0..3)).unwrap().d_logits;
            up.d_z = gaussian(&mut r, EMBED_DIM);
            ms.backward(&f.tape, &up).unwrap();
        }
        opt.sgd_step(&mut ms).unwrap();
    }
    assert_eq!(ms.layers()[0], first);
    assert_ne!(ms.layers()[1], second);
}

#[test]
fn pretext_with_zero_epochs_is_identity() {
    let mut cfg = tiny_config(Preset::Ncl, 0);
    cfg.epochs.pretext = 0;
    let ds = generate_dataset(&cfg.dataset, 1).unwrap();
    let mut ms = ModelState::new(cfg.encoder_spec(), 5, 5, 2).unwrap();
    let before = ms.clone();
    assert_eq!(stage1_pretext(&mut ms, &ds, &cfg).unwrap().heldout_acc, None);
    assert_eq!(ms, before);
}

#[test]
fn pretext_beats_chance_and_is_deterministic() {
    let cfg = RunConfig::default();
    let ds = generate_dataset(&cfg.dataset, 1).unwrap();
    let base = ModelState::new(cfg.encoder_spec(), 5, 5, 2).unwrap();
    let (mut a, mut b) = (base.clone(), base);
    let ra = stage1_pretext(&mut a, &ds, &cfg).unwrap();
    let rb = stage1_pretext(&mut b, &ds, &cfg).unwrap();
    assert!(ra.heldout_acc.unwrap() > 0.25, "{ra:?}");
    assert_eq!(ra, rb);
    assert_eq!(a, b);
}

#[test]
fn supervised_stage_fits_labeled_split_and_keeps_first_layer() {
    let cfg = RunConfig::default();
    let ds = generate_dataset(&cfg.dataset, 1).unwrap();
    let mut ms = ModelState::new(cfg.encoder_spec(), 5, 5, 2).unwrap();
    let first = ms.layers()[0].clone();
    let report = stage2_supervised(&mut ms, &ds, &cfg).unwrap();
    assert!(report.train_acc >= 0.95, "{report:?}");
    assert_eq!(ms.layers()[0], first);

    let mut zero = cfg.clone();
    zero.epochs.supervised = 0;
    let before = ms.clone();
    stage2_supervised(&mut ms, &ds, &zero).unwrap();
    assert_eq!(ms, before);
}

#[test]
fn contrastive_terms_wait_for_their_start_epoch() {
    let cfg = tiny_config(Preset::NclHng, 2);
    let (mut ms, ds) = stage2_model(&cfg);
    let report = stage3_discovery(&mut ms, &ds, &cfg, None).unwrap();
    for s in &report.steps {
        if s.epoch < cfg.ncl_start_epoch {
            assert_eq!((s.report.ncl, s.report.scl), (0.0, 0.0));
        } else {
            assert!(s.report.scl > 0.0);
        }
    }
    assert!(report.steps.iter().any(|s| s.epoch >= cfg.ncl_start_epoch && s.report.ncl > 0.0));
    assert_eq!(report.epochs.len(), 5);
}

#[test]
fn short_queue_skips_contrastive_terms_and_flags_it() {
    let mut cfg = tiny_config(Preset::Ncl, 3);
    cfg.ncl_start_epoch = 0;
    cfg.k1 = Some(50);
    let (mut ms, ds) = stage2_model(&cfg);
    let report = stage3_discovery(&mut ms, &ds, &cfg, None).unwrap();
    // 16 unlabeled rows per step: the queue reaches 50 entries after four steps.
    for s in &report.steps[..4] {
        assert!(s.flags.ncl_warmup_skip);
        assert_eq!(s.report.ncl, 0.0);
    }
    assert!(!report.steps[4].flags.ncl_warmup_skip);
    assert!(report.steps[4].report.ncl > 0.0);
}

#[test]
fn presets_only_change_their_own_terms_at_step_zero() {
    let full = tiny_config(Preset::NclHng, 5);
    let (ms, ds) = stage2_model(&full);
    let first_step = |preset: Preset| {
        let mut cfg = full.clone().with_preset(preset);
        cfg.epochs.discovery = 1;
        cfg.epochs.pretext = full.epochs.pretext;
        let mut m = ms.clone();
        stage3_discovery(&mut m, &ds, &cfg, None).unwrap().steps[0].report
    };
    let reference = first_step(Preset::NclHng);
    for preset in Preset::ALL {
        let r = first_step(preset);
        let flags = preset.flags();
        assert_eq!(r.ce, if flags.drop_ce { 0.0 } else { reference.ce }, "{preset}");
        assert_eq!(r.bce, if flags.drop_bce { 0.0 } else { reference.bce }, "{preset}");
        assert_eq!(r.mse, if flags.drop_cs { 0.0 } else { reference.mse }, "{preset}");
        assert_eq!(r.ramp_weight, reference.ramp_weight);
    }
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Preset::NclHng, 6);
    cfg.hng_debug_dump = true;
    let outcome = run_experiment(&cfg, dir.path()).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();

    let csv = read("metrics.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,acc,ce,bce,mse,ncl,scl,total"));
    assert_eq!(lines.count(), cfg.epochs.discovery);

    let summary: serde_json::Value = serde_json::from_str(&read("summary.json")).unwrap();
    let keys: Vec<&str> = summary.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["best_acc", "final_acc", "preset", "seed"]);
    assert_eq!(summary["preset"], "ncl_hng");
    assert_eq!(summary["seed"], 6);

    let emb = read("embeddings.jsonl");
    assert_eq!(emb.lines().count(), outcome.dataset.unlabeled.len());
    let first: serde_json::Value = serde_json::from_str(emb.lines().next().unwrap()).unwrap();
    assert_eq!(first["z"].as_array().unwrap().len(), cfg.embed_dim);
    assert!(first["hidden_y"].is_u64());

    let prov = read("hng_provenance.jsonl");
    let line: serde_json::Value = serde_json::from_str(prov.lines().next().unwrap()).unwrap();
    assert!(line["epoch"].as_u64().unwrap() >= cfg.hng_start_epoch as u64);
    assert_eq!(line["triples"].as_array().unwrap().len(), cfg.hng.k2);

    let r = eval_checkpoint(&dir.path().join("checkpoint.json"), &dir.path().join("dataset.json")).unwrap();
    assert_eq!(r.acc, outcome.summary.final_acc);
}

#[test]
fn table3_sweep_emits_one_row_per_preset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Preset::Ncl, 0);
    cfg.epochs = StageEpochs { pretext: 0, supervised: 1, discovery: 1 };
    let rows = sweep(&cfg, PresetSet::Table3, 1, dir.path()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.preset.as_str()).collect();
    assert_eq!(names, ["baseline", "ncl_wo_pp", "ncl_wo_ap", "ncl_wo_la", "ncl", "ncl_hng"]);
    for n in names {
        assert!(dir.path().join(n).join("seed_0").join("summary.json").exists());
    }
    assert!(dir.path().join("sweep_table3.json").exists());
}

#[test]
fn config_errors_are_reported_as_config() {
    assert!(matches!(RunConfig::load(std::path::Path::new("/nonexistent/cfg.json")), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_json_str("{not json"), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_json_str(r#"{"batch_size": 7}"#), Err(Error::Config(_))));
}

#[test]
fn divergence_aborts_with_the_term_named() {
    let mut cfg = tiny_config(Preset::Baseline, 1);
    cfg.optimizer.lr = 1e300;
    cfg.optimizer.momentum = 0.0;
    let (mut ms, ds) = stage2_model(&cfg);
    match stage3_discovery(&mut ms, &ds, &cfg, None) {
        Err(Error::NonFinite { term, .. }) => assert!(!term.is_empty()),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|r| r.steps.len())),
    }
}
