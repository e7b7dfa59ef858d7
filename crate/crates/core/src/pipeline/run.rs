use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, NcdDataset};
use crate::error::{Error, Result};
use crate::eval::{assign_clusters, clustering_acc, write_metrics_csv, ClusteringResult};
use crate::model::ModelState;

use super::config::{Preset, PresetSet, RunConfig};
use super::seeds::{derive_seed, Stream};
use super::stages::{
    stage1_pretext, stage2_supervised, stage3_discovery, DiscoveryReport, PretextReport, SupervisedReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_acc: f64,
    pub best_acc: f64,
    pub seed: u64,
    pub preset: String,
}

/// Everything produced by one in-memory run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dataset: NcdDataset,
    pub model: ModelState<f64>,
    pub pretext: PretextReport,
    pub supervised: SupervisedReport,
    pub discovery: DiscoveryReport,
    pub summary: Summary,
}

/// Stages 1–3 without touching the filesystem.
pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    train_with_dump(cfg, None)
}

fn train_with_dump(cfg: &RunConfig, dump: Option<&mut dyn Write>) -> Result<RunOutcome> {
    cfg.validate()?;
    let dataset = generate_dataset(&cfg.dataset, derive_seed(cfg.seed, Stream::Data))?;
    let mut model = ModelState::new(
        cfg.encoder_spec(),
        cfg.dataset.labeled_classes,
        cfg.dataset.unlabeled_classes,
        derive_seed(cfg.seed, Stream::Init),
    )?;
    let pretext = if cfg.ablation().drop_ssl {
        PretextReport { epochs: 0, heldout_acc: None }
    } else {
        stage1_pretext(&mut model, &dataset, cfg)?
    };
    let supervised = stage2_supervised(&mut model, &dataset, cfg)?;
    let discovery = stage3_discovery(&mut model, &dataset, cfg, dump)?;
    let acc_now = || super::stages::unlabeled_acc(&model, &dataset);
    let final_acc = match discovery.final_acc() {
        Some(a) => a,
        None => acc_now()?,
    };
    let best_acc = discovery.best_acc().unwrap_or(final_acc);
    let summary = Summary { final_acc, best_acc, seed: cfg.seed, preset: cfg.preset_label() };
    Ok(RunOutcome { dataset, model, pretext, supervised, discovery, summary })
}

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    z: &'a [f64],
    hidden_y: usize,
}

/// Runs all stages and writes `dataset.json`, `metrics.csv`,
/// `checkpoint.json`, `embeddings.jsonl` and `summary.json` into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    let outcome = if cfg.hng_debug_dump {
        let mut dump = BufWriter::new(File::create(out_dir.join("hng_provenance.jsonl"))?);
        let o = train_with_dump(cfg, Some(&mut dump))?;
        dump.flush()?;
        o
    } else {
        train_with_dump(cfg, None)?
    };

    outcome.dataset.save_json(&out_dir.join("dataset.json"))?;
    let rows: Vec<_> = outcome.discovery.epochs.iter().map(|e| e.metrics_row()).collect();
    write_metrics_csv(BufWriter::new(File::create(out_dir.join("metrics.csv"))?), &rows)?;
    outcome.model.save_checkpoint(&out_dir.join("checkpoint.json"))?;

    let mut emb = BufWriter::new(File::create(out_dir.join("embeddings.jsonl"))?);
    for s in &outcome.dataset.unlabeled {
        let z = outcome.model.embed(&s.x)?;
        serde_json::to_writer(&mut emb, &EmbeddingLine { z: &z, hidden_y: s.hidden_y })?;
        emb.write_all(b"\n")?;
    }
    emb.flush()?;

    let mut text = serde_json::to_string_pretty(&outcome.summary)?;
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text)?;
    Ok(outcome)
}

/// Mean and spread of one preset over a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub preset: String,
    pub seeds: Vec<u64>,
    pub final_acc: Vec<f64>,
    pub mean_final_acc: f64,
    pub std_final_acc: f64,
}

/// Runs every preset of `set` for `seeds` consecutive seeds starting at
/// `base.seed`. Each run writes into `out_dir/<preset>/seed_<s>/`, and the
/// aggregate goes to `out_dir/sweep_<set>.json`.
pub fn sweep(base: &RunConfig, set: PresetSet, seeds: usize, out_dir: &Path) -> Result<Vec<SweepRow>> {
    if seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut rows = Vec::new();
    for &preset in set.presets() {
        let mut row = SweepRow {
            preset: preset.name().to_string(),
            seeds: Vec::new(),
            final_acc: Vec::new(),
            mean_final_acc: 0.0,
            std_final_acc: 0.0,
        };
        for i in 0..seeds as u64 {
            let mut cfg = base.clone().with_preset(preset);
            cfg.seed = base.seed + i;
            let dir: PathBuf = out_dir.join(preset.name()).join(format!("seed_{}", cfg.seed));
            let outcome = run_experiment(&cfg, &dir)?;
            row.seeds.push(cfg.seed);
            row.final_acc.push(outcome.summary.final_acc);
        }
        let n = row.final_acc.len() as f64;
        row.mean_final_acc = row.final_acc.iter().sum::<f64>() / n;
        row.std_final_acc =
            (row.final_acc.iter().map(|a| (a - row.mean_final_acc).powi(2)).sum::<f64>() / n).sqrt();
        rows.push(row);
    }
    let name = match set {
        PresetSet::Table2 => "sweep_table2.json",
        PresetSet::Table3 => "sweep_table3.json",
    };
    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    fs::write(out_dir.join(name), text)?;
    Ok(rows)
}

/// Clusters a saved dataset's unlabeled split with a saved checkpoint.
pub fn eval_checkpoint(checkpoint: &Path, dataset: &Path) -> Result<ClusteringResult> {
    let model = ModelState::<f64>::load_checkpoint(checkpoint)?;
    let ds = NcdDataset::load_json(dataset)?;
    if model.spec().input_dim != ds.input_dim || model.unlabeled_classes() != ds.unlabeled_classes {
        return Err(Error::Config("checkpoint does not match the dataset dimensions".into()));
    }
    let pred = assign_clusters(&model, &ds.unlabeled_inputs())?;
    clustering_acc(&ds.hidden_labels(), &pred, ds.unlabeled_classes)
}

/// Convenience for callers holding a preset name.
pub fn config_for(preset: Preset, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_preset(preset);
    cfg.seed = seed;
    cfg
}
