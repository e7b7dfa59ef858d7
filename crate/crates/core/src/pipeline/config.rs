use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, DatasetSpec};
use crate::error::{Error, Result};
use crate::hng::HngConfig;
use crate::losses::RampConfig;
use crate::model::{EncoderSpec, SgdConfig};

/// Which loss terms a run uses. Each named [`Preset`] maps to one row of the
/// baseline or contrastive ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Skip the label-agnostic pretext stage.
    pub drop_ssl: bool,
    pub drop_ce: bool,
    pub drop_bce: bool,
    /// Drop the consistency term.
    pub drop_cs: bool,
    /// Enable the neighborhood contrastive terms at all.
    pub ncl: bool,
    /// No pseudo-positives: `α = 1`.
    pub drop_pp: bool,
    /// No augmented positive: `α = 0`.
    pub drop_ap: bool,
    /// No supervised contrastive term on labeled data.
    pub drop_scl: bool,
    pub enable_hng: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Preset::NclHng.flags()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Baseline,
    BaselWoSsl,
    BaselWoCe,
    BaselWoBce,
    BaselWoCs,
    NclWoPp,
    NclWoAp,
    NclWoLa,
    Ncl,
    NclHng,
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Baseline,
        Preset::BaselWoSsl,
        Preset::BaselWoCe,
        Preset::BaselWoBce,
        Preset::BaselWoCs,
        Preset::NclWoPp,
        Preset::NclWoAp,
        Preset::NclWoLa,
        Preset::Ncl,
        Preset::NclHng,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::BaselWoSsl => "basel_wo_ssl",
            Preset::BaselWoCe => "basel_wo_ce",
            Preset::BaselWoBce => "basel_wo_bce",
            Preset::BaselWoCs => "basel_wo_cs",
            Preset::NclWoPp => "ncl_wo_pp",
            Preset::NclWoAp => "ncl_wo_ap",
            Preset::NclWoLa => "ncl_wo_la",
            Preset::Ncl => "ncl",
            Preset::NclHng => "ncl_hng",
        }
    }

    pub fn flags(self) -> Ablation {
        let baseline = Ablation {
            drop_ssl: false,
            drop_ce: false,
            drop_bce: false,
            drop_cs: false,
            ncl: false,
            drop_pp: false,
            drop_ap: false,
            drop_scl: false,
            enable_hng: false,
        };
        let ncl = Ablation { ncl: true, ..baseline };
        match self {
            Preset::Baseline => baseline,
            Preset::BaselWoSsl => Ablation { drop_ssl: true, ..baseline },
            Preset::BaselWoCe => Ablation { drop_ce: true, ..baseline },
            Preset::BaselWoBce => Ablation { drop_bce: true, ..baseline },
            Preset::BaselWoCs => Ablation { drop_cs: true, ..baseline },
            Preset::NclWoPp => Ablation { drop_pp: true, ..ncl },
            Preset::NclWoAp => Ablation { drop_ap: true, ..ncl },
            Preset::NclWoLa => Ablation { drop_scl: true, ..ncl },
            Preset::Ncl => ncl,
            Preset::NclHng => Ablation { enable_hng: true, ..ncl },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Rows of the two ablation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetSet {
    Table2,
    Table3,
}

impl PresetSet {
    pub fn presets(self) -> &'static [Preset] {
        match self {
            PresetSet::Table2 => &[
                Preset::BaselWoSsl,
                Preset::BaselWoCe,
                Preset::BaselWoBce,
                Preset::BaselWoCs,
                Preset::Baseline,
            ],
            PresetSet::Table3 => &[
                Preset::Baseline,
                Preset::NclWoPp,
                Preset::NclWoAp,
                Preset::NclWoLa,
                Preset::Ncl,
                Preset::NclHng,
            ],
        }
    }
}

impl FromStr for PresetSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(PresetSet::Table2),
            "table3" => Ok(PresetSet::Table3),
            other => Err(Error::Config(format!("unknown preset set `{other}` (expected table2 or table3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEpochs {
    pub pretext: usize,
    pub supervised: usize,
    pub discovery: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self { pretext: 10, supervised: 20, discovery: 60 }
    }
}

/// Everything a run depends on. Missing keys take the defaults below;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    /// Overrides the preset's flags when present.
    pub ablation: Option<Ablation>,
    pub dataset: DatasetSpec,
    pub augmentation: AugmentationConfig,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    /// Optimizer for the pretext and supervised stages.
    pub pretrain_optimizer: SgdConfig,
    /// Optimizer for the discovery stage; milestones count discovery epochs.
    pub optimizer: SgdConfig,
    pub epochs: StageEpochs,
    pub batch_size: usize,
    pub memory_size: usize,
    pub temperature: f64,
    pub pairwise_threshold: f64,
    pub alpha: f64,
    /// Pseudo-positive count; `None` uses `max(1, ⌊|M|/C_u/2⌋)`.
    pub k1: Option<usize>,
    pub hng: HngConfig,
    pub ramp: RampConfig,
    pub ncl_start_epoch: usize,
    pub hng_start_epoch: usize,
    /// Encoder layers frozen during the supervised and discovery stages.
    pub frozen_layers: usize,
    /// Write `hng_provenance.jsonl` during discovery.
    pub hng_debug_dump: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::NclHng,
            ablation: None,
            dataset: DatasetSpec {
                input_dim: 16,
                labeled_classes: 5,
                unlabeled_classes: 5,
                per_class: 200,
                separation: 8.0,
            },
            augmentation: AugmentationConfig { noise_sigma: 0.5, scale_jitter: 0.1 },
            hidden_dims: vec![64, 64],
            embed_dim: 32,
            pretrain_optimizer: SgdConfig { lr: 0.1, momentum: 0.9, milestones: Vec::new(), decay: 0.1 },
            optimizer: SgdConfig { lr: 0.1, momentum: 0.9, milestones: vec![40, 55], decay: 0.1 },
            epochs: StageEpochs::default(),
            batch_size: 128,
            memory_size: 2000,
            temperature: 0.05,
            pairwise_threshold: 0.95,
            alpha: 0.2,
            k1: None,
            hng: HngConfig::default(),
            ramp: RampConfig { gamma: 5.0, length: 15.0 },
            ncl_start_epoch: 2,
            hng_start_epoch: 4,
            frozen_layers: 1,
            hng_debug_dump: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return bad(format!("batch_size must be even and at least 4, got {}", self.batch_size));
        }
        if self.memory_size == 0 {
            return bad("memory_size must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if !(self.pairwise_threshold > 0.0 && self.pairwise_threshold < 1.0) {
            return bad("pairwise_threshold must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]".into());
        }
        if self.k1 == Some(0) {
            return bad("k1 must be at least 1".into());
        }
        if self.frozen_layers > self.hidden_dims.len() {
            return bad(format!("frozen_layers must be below the encoder depth {}", self.hidden_dims.len() + 1));
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.encoder_spec().validate().map_err(wrap)?;
        self.augmentation.validate().map_err(wrap)?;
        self.hng.validate().map_err(wrap)?;
        self.ramp.validate().map_err(wrap)?;
        crate::model::OptimizerState::<f64>::new(&self.optimizer).map_err(wrap)?;
        crate::model::OptimizerState::<f64>::new(&self.pretrain_optimizer).map_err(wrap)?;
        let d = &self.dataset;
        if d.input_dim == 0 || d.labeled_classes == 0 || d.unlabeled_classes == 0 || d.per_class == 0 {
            return bad("dataset counts must be positive".into());
        }
        if !(d.separation > 0.0) {
            return bad("dataset separation must be positive".into());
        }
        Ok(())
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec { input_dim: self.dataset.input_dim, hidden_dims: self.hidden_dims.clone(), embed_dim: self.embed_dim }
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation.unwrap_or_else(|| self.preset.flags())
    }

    /// Label recorded in summaries: the preset name, or `custom` when flags
    /// were given explicitly.
    pub fn preset_label(&self) -> String {
        match self.ablation {
            Some(a) if a != self.preset.flags() => "custom".to_string(),
            _ => self.preset.name().to_string(),
        }
    }

    pub fn k1(&self) -> usize {
        self.k1.unwrap_or_else(|| (self.memory_size / self.dataset.unlabeled_classes / 2).max(1))
    }

    /// `α` after the augmented-positive / pseudo-positive ablations.
    pub fn effective_alpha(&self) -> f64 {
        let a = self.ablation();
        if a.drop_pp {
            1.0
        } else if a.drop_ap {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = preset;
        self.ablation = None;
        self
    }
}
