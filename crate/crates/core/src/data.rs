//! Seeded synthetic datasets with disjoint labeled/unlabeled class sets, and
//! the stochastic view augmentation used during training.
//!
//! Hidden labels of the unlabeled split live only in [`UnlabeledSample`];
//! [`Batch`] carries inputs and sample indices, never hidden labels.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSample {
    pub x: Vec<f64>,
    /// Ground-truth cluster, consumed only by evaluation.
    pub hidden_y: usize,
}

/// Labeled split over classes `[0, C_l)` and unlabeled split over `[0, C_u)`,
/// drawn from disjoint generative clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdDataset {
    #[serde(rename = "D")]
    pub input_dim: usize,
    #[serde(rename = "C_l")]
    pub labeled_classes: usize,
    #[serde(rename = "C_u")]
    pub unlabeled_classes: usize,
    pub seed: u64,
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
}

impl NcdDataset {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ds: Self = serde_json::from_reader(file)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.input_dim > 0, "input dimension must be positive");
        contract!(!self.labeled.is_empty() && !self.unlabeled.is_empty(), "both splits must be nonempty");
        for s in &self.labeled {
            contract!(s.x.len() == self.input_dim, "labeled sample has dimension {}", s.x.len());
            contract!(s.y < self.labeled_classes, "labeled class {} out of range", s.y);
        }
        for s in &self.unlabeled {
            contract!(s.x.len() == self.input_dim, "unlabeled sample has dimension {}", s.x.len());
            contract!(s.hidden_y < self.unlabeled_classes, "hidden class {} out of range", s.hidden_y);
        }
        Ok(())
    }

    pub fn unlabeled_inputs(&self) -> Vec<&[f64]> {
        self.unlabeled.iter().map(|s| s.x.as_slice()).collect()
    }

    pub fn hidden_labels(&self) -> Vec<usize> {
        self.unlabeled.iter().map(|s| s.hidden_y).collect()
    }
}

/// Parameters of the mixture the dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub input_dim: usize,
    pub labeled_classes: usize,
    pub unlabeled_classes: usize,
    pub per_class: usize,
    pub separation: f64,
}

/// Draws `C_l + C_u` unit-covariance Gaussian clusters whose means lie on a
/// sphere of radius `separation`; the first `C_l` form the labeled split.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<NcdDataset> {
    let DatasetSpec { input_dim, labeled_classes, unlabeled_classes, per_class, separation } = *spec;
    contract!(
        input_dim > 0 && labeled_classes > 0 && unlabeled_classes > 0 && per_class > 0,
        "dataset counts must be positive"
    );
    contract!(separation > 0.0 && separation.is_finite(), "separation must be positive, got {separation}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(input_dim, labeled_classes + unlabeled_classes, separation, &mut rng);

    let draw = |mean: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        mean.iter().map(|&m| { let e: f64 = StandardNormal.sample(rng); m + e }).collect::<Vec<f64>>()
    };
    let mut labeled = Vec::with_capacity(labeled_classes * per_class);
    for (y, mean) in means[..labeled_classes].iter().enumerate() {
        for _ in 0..per_class {
            labeled.push(LabeledSample { x: draw(mean, &mut rng), y });
        }
    }
    let mut unlabeled = Vec::with_capacity(unlabeled_classes * per_class);
    for (y, mean) in means[labeled_classes..].iter().enumerate() {
        for _ in 0..per_class {
            unlabeled.push(UnlabeledSample { x: draw(mean, &mut rng), hidden_y: y });
        }
    }

    Ok(NcdDataset { input_dim, labeled_classes, unlabeled_classes, seed, labeled, unlabeled })
}

fn class_means(dim: usize, count: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                break v.into_iter().map(|x| radius * x / n).collect();
            }
        })
        .collect()
}

/// Multiplicative jitter plus isotropic Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub noise_sigma: f64,
    /// Half-range of the uniform scale factor `1 + u`.
    pub scale_jitter: f64,
}

impl AugmentationConfig {
    pub const NONE: Self = Self { noise_sigma: 0.0, scale_jitter: 0.0 };

    pub fn validate(&self) -> Result<()> {
        contract!(self.noise_sigma >= 0.0, "noise_sigma must be nonnegative");
        contract!((0.0..1.0).contains(&self.scale_jitter), "scale_jitter must lie in [0, 1)");
        Ok(())
    }
}

/// Returns `(1 + u)·x + ε` with `u ~ U(−j, j)` and `ε ~ N(0, σ²I)`.
pub fn make_view<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Vec<f64> {
    let scale = if cfg.scale_jitter > 0.0 {
        1.0 + rng.random_range(-cfg.scale_jitter..cfg.scale_jitter)
    } else {
        1.0
    };
    if cfg.noise_sigma > 0.0 {
        x.iter()
            .map(|&v| {
                let eps: f64 = StandardNormal.sample(rng);
                scale * v + cfg.noise_sigma * eps
            })
            .collect()
    } else {
        x.iter().map(|&v| scale * v).collect()
    }
}

/// Even split of labeled and unlabeled samples, each with two views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub labeled_x: Vec<Vec<f64>>,
    pub labeled_x2: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub unlabeled_x: Vec<Vec<f64>>,
    pub unlabeled_x2: Vec<Vec<f64>>,
    /// Positions in the unlabeled split the rows were drawn from.
    pub unlabeled_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len() + self.unlabeled_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples `B/2` labeled and `B/2` unlabeled rows uniformly with replacement;
/// both views of every row are built with [`make_view`].
pub fn next_batch<R: Rng + ?Sized>(
    ds: &NcdDataset,
    batch_size: usize,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Batch> {
    contract!(batch_size > 0 && batch_size % 2 == 0, "batch size must be even and positive, got {batch_size}");
    contract!(!ds.labeled.is_empty() && !ds.unlabeled.is_empty(), "both splits must be nonempty");
    let half = batch_size / 2;
    let mut batch = Batch {
        labeled_x: Vec::with_capacity(half),
        labeled_x2: Vec::with_capacity(half),
        labels: Vec::with_capacity(half),
        unlabeled_x: Vec::with_capacity(half),
        unlabeled_x2: Vec::with_capacity(half),
        unlabeled_indices: Vec::with_capacity(half),
    };
    for _ in 0..half {
        let s = &ds.labeled[rng.random_range(0..ds.labeled.len())];
        batch.labeled_x.push(make_view(&s.x, cfg, rng));
        batch.labeled_x2.push(make_view(&s.x, cfg, rng));
        batch.labels.push(s.y);
    }
    for _ in 0..half {
        let i = rng.random_range(0..ds.unlabeled.len());
        let x = &ds.unlabeled[i].x;
        batch.unlabeled_x.push(make_view(x, cfg, rng));
        batch.unlabeled_x2.push(make_view(x, cfg, rng));
        batch.unlabeled_indices.push(i);
    }
    Ok(batch)
}
