use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::{make_view, next_batch, NcdDataset};
use crate::error::{contract, Error, Result};
use crate::eval::{assign_clusters, clustering_acc, MetricsRow};
use crate::hng;
use crate::losses::{
    bce_loss, ce_loss, consistency_loss, ncl_loss, pairwise_pseudo_label, ramp_weight, scl_loss, total_loss,
    ContrastiveContext, LossComponents, LossReport, PairwiseConfig,
};
use crate::memory::{FeatureQueue, LabeledQueue};
use crate::model::{Forward, Linear, ModelState, OptimizerState, Upstream};
use crate::numerics::{argmax, dot, norm, Matrix};

use super::config::RunConfig;
use super::seeds::{derive_seed, Stream};

type Model = ModelState<f64>;

/// Number of transforms the pretext head distinguishes.
pub const PRETEXT_TRANSFORMS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretextReport {
    pub epochs: usize,
    /// Transform-prediction accuracy on the held-out tenth of the inputs,
    /// each scored under all transforms. `None` when no epochs ran.
    pub heldout_acc: Option<f64>,
}

/// `n` random orthogonal `d×d` matrices (Gram-Schmidt on Gaussian draws).
pub fn random_orthogonal_set<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Vec<Matrix<f64>> {
    (0..n)
        .map(|_| loop {
            if let Some(m) = gram_schmidt(d, rng) {
                break m;
            }
        })
        .collect()
}

fn gram_schmidt<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Option<Matrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for r in &rows {
            let proj = dot(&v, r);
            for (x, &b) in v.iter_mut().zip(r) {
                *x -= proj * b;
            }
        }
        let n = norm(&v);
        if n < 1e-8 {
            return None;
        }
        rows.push(v.into_iter().map(|x| x / n).collect());
    }
    Matrix::from_vec(d, d, rows.concat()).ok()
}

/// Label-agnostic pretraining: every input is multiplied by one of four fixed
/// random orthogonal matrices and an auxiliary head on `z` predicts which.
/// All encoder layers train; the auxiliary head is dropped afterwards.
pub fn stage1_pretext(ms: &mut Model, ds: &NcdDataset, cfg: &RunConfig) -> Result<PretextReport> {
    let epochs = cfg.epochs.pretext;
    if epochs == 0 {
        return Ok(PretextReport { epochs, heldout_acc: None });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Pretext));
    let transforms = random_orthogonal_set(ds.input_dim, PRETEXT_TRANSFORMS, &mut rng);
    let mut aux: Linear<f64> = Linear::init_uniform(PRETEXT_TRANSFORMS, ms.embed_dim(), &mut rng);

    let mut inputs: Vec<&[f64]> = ds.labeled.iter().map(|s| s.x.as_slice()).collect();
    inputs.extend(ds.unlabeled.iter().map(|s| s.x.as_slice()));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    shuffle(&mut order, &mut rng);
    let n_held = (inputs.len() / 10).max(1).min(inputs.len() - 1);
    let (held, train) = order.split_at(n_held);

    let saved_prefix = ms.frozen_prefix();
    ms.freeze_prefix(0)?;
    let mut opt = OptimizerState::new(&cfg.pretrain_optimizer)?;
    let mut aux_opt = OptimizerState::new(&cfg.pretrain_optimizer)?;
    let steps = train.len().div_ceil(cfg.batch_size);
    for epoch in 0..epochs {
        opt.set_epoch(epoch);
        aux_opt.set_epoch(epoch);
        for _ in 0..steps {
            let scale = 1.0 / cfg.batch_size as f64;
            for _ in 0..cfg.batch_size {
                let x = inputs[train[rng.random_range(0..train.len())]];
                let k = rng.random_range(0..PRETEXT_TRANSFORMS);
                let view = make_view(x, &cfg.augmentation, &mut rng);
                let fwd = ms.forward(&transforms[k].matvec(&view))?;
                let probs = crate::numerics::softmax(&aux.forward(&fwd.z))?;
                let ce = ce_loss(&probs, k)?;
                let d_logits: Vec<f64> = ce.d_logits.iter().map(|g| g * scale).collect();
                let mut up = Upstream::for_model(ms);
                up.d_z = aux.backward(&fwd.z, &d_logits, true);
                ms.backward(&fwd.tape, &up)?;
            }
            opt.sgd_step(ms)?;
            aux_opt.sgd_step(&mut aux)?;
        }
    }
    ms.freeze_prefix(saved_prefix)?;

    let mut correct = 0usize;
    for &i in held {
        for (k, t) in transforms.iter().enumerate() {
            let z = ms.embed(&t.matvec(inputs[i]))?;
            if argmax(&aux.forward(&z)) == k {
                correct += 1;
            }
        }
    }
    let heldout_acc = correct as f64 / (held.len() * PRETEXT_TRANSFORMS) as f64;
    Ok(PretextReport { epochs, heldout_acc: Some(heldout_acc) })
}

fn shuffle<T, R: Rng + ?Sized>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupervisedReport {
    pub epochs: usize,
    /// Labeled-head accuracy on the clean labeled split after training.
    pub train_acc: f64,
}

/// Labeled-head cross-entropy on the labeled split with the first
/// `frozen_layers` encoder layers frozen.
pub fn stage2_supervised(ms: &mut Model, ds: &NcdDataset, cfg: &RunConfig) -> Result<SupervisedReport> {
    ms.freeze_prefix(cfg.frozen_layers)?;
    let epochs = cfg.epochs.supervised;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Supervised));
    let mut opt = OptimizerState::new(&cfg.pretrain_optimizer)?;
    let steps = ds.labeled.len().div_ceil(cfg.batch_size);
    let scale = 1.0 / cfg.batch_size as f64;
    for epoch in 0..epochs {
        opt.set_epoch(epoch);
        for _ in 0..steps {
            for _ in 0..cfg.batch_size {
                let s = &ds.labeled[rng.random_range(0..ds.labeled.len())];
                let fwd = ms.forward(&make_view(&s.x, &cfg.augmentation, &mut rng))?;
                let ce = ce_loss(&fwd.p_l, s.y)?;
                let mut up = Upstream::for_model(ms);
                up.d_logits_l = ce.d_logits.iter().map(|g| g * scale).collect();
                ms.backward(&fwd.tape, &up)?;
            }
            opt.sgd_step(ms)?;
        }
    }
    Ok(SupervisedReport { epochs, train_acc: labeled_accuracy(ms, ds)? })
}

/// Labeled-head argmax accuracy on the clean labeled split.
pub fn labeled_accuracy(ms: &Model, ds: &NcdDataset) -> Result<f64> {
    let mut correct = 0usize;
    for s in &ds.labeled {
        let z = ms.embed(&s.x)?;
        if argmax(&ms.head_l().forward(&z)) == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.labeled.len() as f64)
}

/// Degenerate events met during one discovery step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepFlags {
    /// Contrastive terms were due but `|Mᵘ| < k₁`.
    pub ncl_warmup_skip: bool,
    pub ce_clamped: usize,
    pub bce_clamped: usize,
    pub hng_short_queue: usize,
    pub hng_disabled: usize,
    pub hng_skipped_mixes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport<f64>,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Clustering accuracy of the unlabeled head after the epoch.
    pub acc: f64,
    /// Per-term means over the epoch's steps.
    pub mean: LossReport<f64>,
}

impl EpochRecord {
    pub fn metrics_row(&self) -> MetricsRow {
        MetricsRow {
            epoch: self.epoch,
            acc: self.acc,
            ce: self.mean.ce,
            bce: self.mean.bce,
            mse: self.mean.mse,
            ncl: self.mean.ncl,
            scl: self.mean.scl,
            total: self.mean.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscoveryReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl DiscoveryReport {
    pub fn final_acc(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.acc)
    }

    pub fn best_acc(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.acc).reduce(f64::max)
    }
}

/// Clustering accuracy of the unlabeled head on the whole unlabeled split.
pub fn unlabeled_acc(ms: &Model, ds: &NcdDataset) -> Result<f64> {
    let pred = assign_clusters(ms, &ds.unlabeled_inputs())?;
    Ok(clustering_acc(&ds.hidden_labels(), &pred, ds.unlabeled_classes)?.acc)
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    epoch: usize,
    step: usize,
    query: usize,
    pool_size: usize,
    flags: hng::HngFlags,
    triples: Vec<(usize, usize, f64)>,
    similarities: &'a [f64],
}

/// Joint training on both splits with the full loss stack. Queues are pushed
/// with view-1 embeddings after each step's update. When `hng_dump` is given,
/// one JSON line of provenance triples is written per query that used HNG.
pub fn stage3_discovery(
    ms: &mut Model,
    ds: &NcdDataset,
    cfg: &RunConfig,
    mut hng_dump: Option<&mut dyn Write>,
) -> Result<DiscoveryReport> {
    cfg.validate()?;
    contract!(
        ms.labeled_classes() == ds.labeled_classes && ms.unlabeled_classes() == ds.unlabeled_classes,
        "model heads do not match the dataset class counts"
    );
    ms.freeze_prefix(cfg.frozen_layers)?;
    let flags = cfg.ablation();
    let alpha = cfg.effective_alpha();
    let k1 = cfg.k1();
    let pairwise = PairwiseConfig::new(cfg.pairwise_threshold)?;
    let tau = cfg.temperature;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Discovery));
    let hng_seed = derive_seed(cfg.seed, Stream::Hng);
    let mut opt = OptimizerState::new(&cfg.optimizer)?;
    let mut unl_queue = FeatureQueue::new(cfg.memory_size)?;
    let mut lab_queue = LabeledQueue::new(cfg.memory_size, ds.labeled_classes)?;

    let half = cfg.batch_size / 2;
    let steps_per_epoch = ds.labeled.len().max(ds.unlabeled.len()).div_ceil(half);
    let mut report = DiscoveryReport { epochs: Vec::new(), steps: Vec::new() };
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs.discovery {
        opt.set_epoch(epoch);
        let omega = ramp_weight(epoch as f64, &cfg.ramp);
        let contrastive_on = flags.ncl && epoch >= cfg.ncl_start_epoch;
        let hng_on = contrastive_on && flags.enable_hng && epoch >= cfg.hng_start_epoch;
        let first = report.steps.len();

        for step in 0..steps_per_epoch {
            let batch = next_batch(ds, cfg.batch_size, &cfg.augmentation, &mut batch_rng)?;
            let fwd = |xs: &[Vec<f64>]| xs.iter().map(|x| ms.forward(x)).collect::<Result<Vec<Forward<f64>>>>();
            let fl1 = fwd(&batch.labeled_x)?;
            let fl2 = fwd(&batch.labeled_x2)?;
            let fu1 = fwd(&batch.unlabeled_x)?;
            let fu2 = fwd(&batch.unlabeled_x2)?;
            let mut ul1: Vec<Upstream<f64>> = fl1.iter().map(|_| Upstream::for_model(ms)).collect();
            let mut ul2 = ul1.clone();
            let mut uu1 = ul1.clone();
            let mut uu2 = ul1.clone();
            let mut comp = LossComponents { ramp_weight: omega, ..Default::default() };
            let mut sflags = StepFlags::default();
            let nl = fl1.len() as f64;
            let nu = fu1.len() as f64;

            if !flags.drop_ce {
                for (i, f) in fl1.iter().enumerate() {
                    let out = ce_loss(&f.p_l, batch.labels[i])?;
                    comp.ce += out.loss / nl;
                    sflags.ce_clamped += usize::from(out.clamped);
                    axpy_into(&mut ul1[i].d_logits_l, 1.0 / nl, &out.d_logits);
                }
            }

            if !flags.drop_bce && fu1.len() > 1 {
                let pairs = (fu1.len() * (fu1.len() - 1) / 2) as f64;
                for i in 0..fu1.len() {
                    for j in i + 1..fu1.len() {
                        let same = pairwise_pseudo_label(&fu1[i].z, &fu1[j].z, &pairwise)?;
                        let out = bce_loss(&fu1[i].p_u, &fu2[j].p_u, same)?;
                        comp.bce += out.loss / pairs;
                        sflags.bce_clamped += usize::from(out.clamped);
                        axpy_into(&mut uu1[i].d_p_u, 1.0 / pairs, &out.d_pi);
                        axpy_into(&mut uu2[j].d_p_u, 1.0 / pairs, &out.d_pj);
                    }
                }
            }

            if !flags.drop_cs {
                let total = nl + nu;
                let w = omega / total;
                for (a, b, ua, ub) in fl1
                    .iter()
                    .zip(&fl2)
                    .zip(ul1.iter_mut().zip(ul2.iter_mut()))
                    .chain(fu1.iter().zip(&fu2).zip(uu1.iter_mut().zip(uu2.iter_mut())))
                    .map(|((a, b), (ua, ub))| (a, b, ua, ub))
                {
                    let out = consistency_loss(&a.p_l, &b.p_l, &a.p_u, &b.p_u)?;
                    comp.mse += out.loss / total;
                    axpy_into(&mut ua.d_p_l, w, &out.d_p_l);
                    axpy_into(&mut ub.d_p_l, w, &out.d_p_l_hat);
                    axpy_into(&mut ua.d_p_u, w, &out.d_p_u);
                    axpy_into(&mut ub.d_p_u, w, &out.d_p_u_hat);
                }
            }

            if contrastive_on {
                if unl_queue.len() < k1 {
                    sflags.ncl_warmup_skip = true;
                } else {
                    let queue_refs = unl_queue.as_slices();
                    for q in 0..fu1.len() {
                        let z = &fu1[q].z;
                        let pseudo: Vec<usize> = if alpha < 1.0 {
                            unl_queue.topk_similar(z, k1)?.into_iter().map(|n| n.index).collect()
                        } else {
                            Vec::new()
                        };
                        let synthetic = if hng_on {
                            let mut qrng = ChaCha8Rng::seed_from_u64(hng_seed ^ splitmix(global_step * half as u64 + q as u64));
                            let set = hng::generate(&unl_queue, &lab_queue, z, &cfg.hng, &mut qrng)?;
                            sflags.hng_short_queue += usize::from(set.flags.short_queue);
                            sflags.hng_disabled += usize::from(set.flags.disabled);
                            sflags.hng_skipped_mixes += set.flags.skipped_mixes;
                            if let Some(out) = hng_dump.as_deref_mut() {
                                write_provenance(out, epoch, step, q, &set)?;
                            }
                            Some(set)
                        } else {
                            None
                        };
                        let negatives = match &synthetic {
                            Some(set) => hng::augmented_negatives(&unl_queue, set),
                            None => queue_refs.clone(),
                        };
                        let ctx =
                            ContrastiveContext { query: z, augmented: &fu2[q].z, negatives: &negatives, temperature: tau };
                        let out = ncl_loss(&ctx, &pseudo, alpha)?;
                        comp.ncl += out.grad.loss / nu;
                        comp.contrastive_aug += out.aug.unwrap_or(0.0) / nu;
                        comp.contrastive_pp += out.pp.unwrap_or(0.0) / nu;
                        axpy_into(&mut uu1[q].d_z, 1.0 / nu, &out.grad.d_query);
                        axpy_into(&mut uu2[q].d_z, 1.0 / nu, &out.grad.d_augmented);
                    }
                }
                if !flags.drop_scl {
                    let lab_refs = lab_queue.features().as_slices();
                    for (i, &y) in batch.labels.iter().enumerate() {
                        let same = lab_queue.indices_with_label(y);
                        let ctx = ContrastiveContext {
                            query: &fl1[i].z,
                            augmented: &fl2[i].z,
                            negatives: &lab_refs,
                            temperature: tau,
                        };
                        let out = scl_loss(&ctx, &same)?;
                        comp.scl += out.loss / nl;
                        axpy_into(&mut ul1[i].d_z, 1.0 / nl, &out.d_query);
                        axpy_into(&mut ul2[i].d_z, 1.0 / nl, &out.d_augmented);
                    }
                }
            }

            let loss = total_loss(&comp)?;
            for (f, u) in fl1.iter().zip(&ul1).chain(fl2.iter().zip(&ul2)).chain(fu1.iter().zip(&uu1)).chain(fu2.iter().zip(&uu2)) {
                ms.backward(&f.tape, u)?;
            }
            opt.sgd_step(ms)?;

            let zu: Vec<&[f64]> = fu1.iter().map(|f| f.z.as_slice()).collect();
            let zl: Vec<&[f64]> = fl1.iter().map(|f| f.z.as_slice()).collect();
            unl_queue.push(&zu)?;
            lab_queue.push(&zl, &batch.labels)?;

            report.steps.push(StepRecord { epoch, step, report: loss, flags: sflags });
            global_step += 1;
        }

        let acc = unlabeled_acc(ms, ds)?;
        let mean = mean_report(&report.steps[first..]);
        report.epochs.push(EpochRecord { epoch, acc, mean });
    }
    Ok(report)
}

fn axpy_into(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn splitmix(x: u64) -> u64 {
    super::seeds::splitmix64(x)
}

fn mean_report(steps: &[StepRecord]) -> LossReport<f64> {
    let n = steps.len().max(1) as f64;
    let mut m = LossReport::default();
    for s in steps {
        let r = &s.report;
        m.ce += r.ce / n;
        m.bce += r.bce / n;
        m.mse += r.mse / n;
        m.ramp_weight += r.ramp_weight / n;
        m.contrastive_aug += r.contrastive_aug / n;
        m.contrastive_pp += r.contrastive_pp / n;
        m.ncl += r.ncl / n;
        m.scl += r.scl / n;
        m.total += r.total / n;
    }
    m
}

fn write_provenance(out: &mut dyn Write, epoch: usize, step: usize, query: usize, set: &hng::SyntheticNegativeSet<f64>) -> Result<()> {
    let line = ProvenanceLine {
        epoch,
        step,
        query,
        pool_size: set.pool_size,
        flags: set.flags,
        triples: set.provenance.iter().map(|p| (p.unlabeled_index, p.labeled_index, p.mu)).collect(),
        similarities: &set.similarities,
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n").map_err(Error::from)
}
