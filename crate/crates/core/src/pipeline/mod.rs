//! Three-stage training protocol, run configuration, ablation presets and
//! experiment outputs.

mod config;
mod run;
mod seeds;
mod stages;

pub use config::{Ablation, Preset, PresetSet, RunConfig, StageEpochs};
pub use run::{config_for, eval_checkpoint, run_experiment, sweep, train, RunOutcome, Summary, SweepRow};
pub use seeds::{derive_seed, splitmix64, Stream};
pub use stages::{
    labeled_accuracy, random_orthogonal_set, stage1_pretext, stage2_supervised, stage3_discovery, unlabeled_acc,
    DiscoveryReport, EpochRecord, PretextReport, StepFlags, StepRecord, SupervisedReport, PRETEXT_TRANSFORMS,
};
