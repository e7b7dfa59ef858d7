//! Loss terms of the discovery objective, each returning its value together
//! with exact gradients with respect to the live quantities it consumes.
//!
//! Contrastive terms take raw (unnormalized) query and augmented-view
//! embeddings; the L2 normalization is part of the differentiated graph.
//! Queue entries passed as negatives are constants and must already be unit
//! vectors.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{cosine_similarity, dot, l2_normalize, log_sum_exp, norm, normalize_vjp};
use crate::scalar::Scalar;

/// Lower clamp applied to the labeled-head probability inside `ce_loss`.
pub const CE_PROB_FLOOR: f64 = 1e-30;
/// Clamp applied to the pairwise probability inside `bce_loss`.
pub const BCE_PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CeOutput<F> {
    pub loss: F,
    pub d_logits: Vec<F>,
    /// `p[y]` fell below [`CE_PROB_FLOOR`].
    pub clamped: bool,
}

/// Cross-entropy against a one-hot label, scaled by `1/C` over the `C`
/// labeled classes. The gradient is returned with respect to the logits.
pub fn ce_loss<F: Scalar>(p: &[F], y: usize) -> Result<CeOutput<F>> {
    contract!(y < p.len(), "label {y} out of range for {} classes", p.len());
    let c = F::from_usize(p.len()).unwrap();
    let floor = F::lit(CE_PROB_FLOOR);
    let clamped = p[y] < floor;
    let loss = -p[y].max(floor).ln() / c;
    let d_logits = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| (if i == y { pi - F::one() } else { pi }) / c)
        .collect();
    Ok(CeOutput { loss, d_logits, clamped })
}

/// Threshold `λ` on cosine similarity for same-cluster pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseConfig {
    pub threshold: f64,
}

impl PairwiseConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        contract!(threshold > 0.0 && threshold < 1.0, "pairwise threshold must lie in (0, 1), got {threshold}");
        Ok(Self { threshold })
    }
}

/// `1` iff the cosine similarity of the two embeddings is at least `λ`.
pub fn pairwise_pseudo_label<F: Scalar>(zi: &[F], zj: &[F], cfg: &PairwiseConfig) -> Result<bool> {
    Ok(cosine_similarity(zi, zj)? >= F::lit(cfg.threshold))
}

#[derive(Debug, Clone)]
pub struct BceOutput<F> {
    pub loss: F,
    pub d_pi: Vec<F>,
    pub d_pj: Vec<F>,
    pub clamped: bool,
}

/// Binary cross-entropy between a pairwise pseudo-label and the inner product
/// of two unlabeled-head distributions.
pub fn bce_loss<F: Scalar>(pi: &[F], pj: &[F], same: bool) -> Result<BceOutput<F>> {
    contract!(pi.len() == pj.len(), "head outputs differ in length: {} vs {}", pi.len(), pj.len());
    let eps = F::lit(BCE_PROB_EPS).max(F::epsilon());
    let raw = dot(pi, pj);
    let p = raw.max(eps).min(F::one() - eps);
    let clamped = p != raw;
    let (loss, d_p) = if same { (-p.ln(), -p.recip()) } else { (-(F::one() - p).ln(), (F::one() - p).recip()) };
    let d_p = if clamped { F::zero() } else { d_p };
    Ok(BceOutput {
        loss,
        d_pi: pj.iter().map(|&b| d_p * b).collect(),
        d_pj: pi.iter().map(|&a| d_p * a).collect(),
        clamped,
    })
}

#[derive(Debug, Clone)]
pub struct ConsistencyOutput<F> {
    pub loss: F,
    pub d_p_l: Vec<F>,
    pub d_p_l_hat: Vec<F>,
    pub d_p_u: Vec<F>,
    pub d_p_u_hat: Vec<F>,
}

/// Mean squared difference between the two views' predictions, per head,
/// summed over heads.
pub fn consistency_loss<F: Scalar>(p_l: &[F], p_l_hat: &[F], p_u: &[F], p_u_hat: &[F]) -> Result<ConsistencyOutput<F>> {
    contract!(p_l.len() == p_l_hat.len() && !p_l.is_empty(), "labeled-head views differ in length");
    contract!(p_u.len() == p_u_hat.len() && !p_u.is_empty(), "unlabeled-head views differ in length");
    let half = |a: &[F], b: &[F]| {
        let c = F::from_usize(a.len()).unwrap();
        let diff: Vec<F> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        let loss = diff.iter().map(|&d| d * d).sum::<F>() / c;
        let two = F::lit(2.0);
        let da: Vec<F> = diff.iter().map(|&d| two * d / c).collect();
        let db: Vec<F> = da.iter().map(|&g| -g).collect();
        (loss, da, db)
    };
    let (ll, d_p_l, d_p_l_hat) = half(p_l, p_l_hat);
    let (lu, d_p_u, d_p_u_hat) = half(p_u, p_u_hat);
    Ok(ConsistencyOutput { loss: ll + lu, d_p_l, d_p_l_hat, d_p_u, d_p_u_hat })
}

/// Sigmoid-shaped ramp `γ·exp(−5(1 − min(t, T)/T)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub gamma: f64,
    pub length: f64,
}

impl RampConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.gamma > 0.0, "ramp weight must be positive");
        contract!(self.length >= 1.0, "ramp length must be at least one epoch");
        Ok(())
    }
}

pub fn ramp_weight<F: Scalar>(t: F, cfg: &RampConfig) -> F {
    let len = F::lit(cfg.length);
    let frac = t.max(F::zero()).min(len) / len;
    let gap = F::one() - frac;
    F::lit(cfg.gamma) * (F::lit(-5.0) * gap * gap).exp()
}

/// Query, its augmented view, and the constant negatives of one contrastive term.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveContext<'a, F> {
    pub query: &'a [F],
    pub augmented: &'a [F],
    /// Unit-norm constants, typically queue entries.
    pub negatives: &'a [&'a [F]],
    pub temperature: F,
}

/// Loss value with gradients for the query and augmented-view embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveGrad<F> {
    pub loss: F,
    pub d_query: Vec<F>,
    pub d_augmented: Vec<F>,
}

/// Negative log-ratio of the augmented positive against all negatives.
pub fn contrastive_aug<F: Scalar>(ctx: &ContrastiveContext<'_, F>) -> Result<ContrastiveGrad<F>> {
    contrastive_kernel(ctx, true, &[])
}

/// Average negative log-ratio over pseudo-positives. `pseudo_positives`
/// index into `ctx.negatives`: each one also stays in the denominator.
pub fn contrastive_pp<F: Scalar>(ctx: &ContrastiveContext<'_, F>, pseudo_positives: &[usize]) -> Result<ContrastiveGrad<F>> {
    contract!(!pseudo_positives.is_empty(), "pseudo-positive set is empty");
    contrastive_kernel(ctx, false, pseudo_positives)
}

/// Weight `α` of the augmented-positive term and pseudo-positive count `k₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NclConfig {
    pub k1: usize,
    pub alpha: f64,
}

impl NclConfig {
    pub fn new(k1: usize, alpha: f64) -> Result<Self> {
        contract!(k1 >= 1, "k1 must be at least 1");
        contract!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1], got {alpha}");
        Ok(Self { k1, alpha })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NclOutput<F> {
    pub grad: ContrastiveGrad<F>,
    /// Value of the augmented-positive term, when evaluated (`α > 0`).
    pub aug: Option<F>,
    /// Value of the pseudo-positive term, when evaluated (`α < 1`).
    pub pp: Option<F>,
}

/// `α·contrastive_aug + (1 − α)·contrastive_pp`. A term whose weight is
/// zero is not evaluated, so `α = 1` tolerates an empty pseudo-positive set.
pub fn ncl_loss<F: Scalar>(ctx: &ContrastiveContext<'_, F>, pseudo_positives: &[usize], alpha: F) -> Result<NclOutput<F>> {
    contract!(alpha >= F::zero() && alpha <= F::one(), "alpha must lie in [0, 1]");
    let aug = if alpha > F::zero() { Some(contrastive_aug(ctx)?) } else { None };
    let pp = if alpha < F::one() { Some(contrastive_pp(ctx, pseudo_positives)?) } else { None };
    let beta = F::one() - alpha;
    let grad = match (&aug, &pp) {
        (Some(a), None) => scale_grad(a, alpha),
        (None, Some(p)) => scale_grad(p, beta),
        (Some(a), Some(p)) => ContrastiveGrad {
            loss: alpha * a.loss + beta * p.loss,
            d_query: a.d_query.iter().zip(&p.d_query).map(|(&x, &y)| alpha * x + beta * y).collect(),
            d_augmented: a.d_augmented.iter().zip(&p.d_augmented).map(|(&x, &y)| alpha * x + beta * y).collect(),
        },
        (None, None) => unreachable!("alpha is either > 0 or < 1"),
    };
    Ok(NclOutput { aug: aug.map(|g| g.loss), pp: pp.map(|g| g.loss), grad })
}

/// Supervised contrastive term. `ctx.negatives` is the labeled queue and
/// `same_label` lists the queue indices sharing the query's label; the
/// augmented view is always a positive.
pub fn scl_loss<F: Scalar>(ctx: &ContrastiveContext<'_, F>, same_label: &[usize]) -> Result<ContrastiveGrad<F>> {
    contrastive_kernel(ctx, true, same_label)
}

fn scale_grad<F: Scalar>(g: &ContrastiveGrad<F>, w: F) -> ContrastiveGrad<F> {
    ContrastiveGrad {
        loss: w * g.loss,
        d_query: g.d_query.iter().map(|&x| w * x).collect(),
        d_augmented: g.d_augmented.iter().map(|&x| w * x).collect(),
    }
}

/// `LSE(s/τ) − mean_{p∈P}(s_p/τ)` where the logits are the augmented-view
/// similarity followed by the negatives' similarities, and `P` is the
/// numerator set (the augmented view if `aug_positive`, plus the listed
/// negatives).
fn contrastive_kernel<F: Scalar>(
    ctx: &ContrastiveContext<'_, F>,
    aug_positive: bool,
    positives: &[usize],
) -> Result<ContrastiveGrad<F>> {
    let dim = ctx.query.len();
    contract!(ctx.temperature > F::zero(), "temperature must be positive");
    contract!(ctx.augmented.len() == dim, "augmented view has dimension {}, query {dim}", ctx.augmented.len());
    contract!(ctx.negatives.iter().all(|n| n.len() == dim), "negative dimension mismatch");
    contract!(
        positives.iter().all(|&i| i < ctx.negatives.len()),
        "positive index out of range for {} negatives",
        ctx.negatives.len()
    );
    let n_pos = positives.len() + usize::from(aug_positive);
    contract!(n_pos > 0, "contrastive numerator set is empty");

    let q_norm = norm(ctx.query);
    let a_norm = norm(ctx.augmented);
    let u = l2_normalize(ctx.query)?;
    let ua = l2_normalize(ctx.augmented)?;
    let inv_tau = ctx.temperature.recip();

    let mut logits = Vec::with_capacity(ctx.negatives.len() + 1);
    logits.push(dot(&u, &ua) * inv_tau);
    logits.extend(ctx.negatives.iter().map(|n| dot(&u, n) * inv_tau));
    let lse = log_sum_exp(&logits)?;

    let inv_p = F::from_usize(n_pos).unwrap().recip();
    let mut numer = if aug_positive { logits[0] } else { F::zero() };
    for &i in positives {
        numer += logits[i + 1];
    }
    let loss = lse - numer * inv_p;

    // dL/ds_j = (softmax_j − multiplicity_j/|P|)/τ
    let mut coef: Vec<F> = logits.iter().map(|&l| (l - lse).exp()).collect();
    if aug_positive {
        coef[0] -= inv_p;
    }
    for &i in positives {
        coef[i + 1] -= inv_p;
    }
    for c in &mut coef {
        *c *= inv_tau;
    }

    let mut d_u: Vec<F> = ua.iter().map(|&x| coef[0] * x).collect();
    for (n, &c) in ctx.negatives.iter().zip(&coef[1..]) {
        if c != F::zero() {
            for (d, &x) in d_u.iter_mut().zip(n.iter()) {
                *d += c * x;
            }
        }
    }
    let d_ua: Vec<F> = u.iter().map(|&x| coef[0] * x).collect();

    Ok(ContrastiveGrad {
        loss,
        d_query: normalize_vjp(&u, q_norm, &d_u),
        d_augmented: normalize_vjp(&ua, a_norm, &d_ua),
    })
}

/// Scalar inputs of the overall objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents<F> {
    pub ce: F,
    pub bce: F,
    pub mse: F,
    /// Ramp weight `ω(t)` applied to `mse`.
    pub ramp_weight: F,
    pub contrastive_aug: F,
    pub contrastive_pp: F,
    pub ncl: F,
    pub scl: F,
}

/// Every term of the objective plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport<F> {
    pub ce: F,
    pub bce: F,
    pub mse: F,
    pub ramp_weight: F,
    pub contrastive_aug: F,
    pub contrastive_pp: F,
    pub ncl: F,
    pub scl: F,
    pub total: F,
}

impl<F: Scalar> LossReport<F> {
    /// `ce + bce + ω·mse + ncl + scl`.
    pub fn composed_total(&self) -> F {
        self.ce + self.bce + self.ramp_weight * self.mse + self.ncl + self.scl
    }
}

/// Sums the objective, rejecting any non-finite component by name.
pub fn total_loss<F: Scalar>(c: &LossComponents<F>) -> Result<LossReport<F>> {
    let named = [
        ("ce", c.ce),
        ("bce", c.bce),
        ("mse", c.mse),
        ("ramp_weight", c.ramp_weight),
        ("contrastive_aug", c.contrastive_aug),
        ("contrastive_pp", c.contrastive_pp),
        ("ncl", c.ncl),
        ("scl", c.scl),
    ];
    for (term, v) in named {
        if !v.is_finite() {
            return Err(Error::NonFinite { term, value: v.to_f64_lossy() });
        }
    }
    let mut report = LossReport {
        ce: c.ce,
        bce: c.bce,
        mse: c.mse,
        ramp_weight: c.ramp_weight,
        contrastive_aug: c.contrastive_aug,
        contrastive_pp: c.contrastive_pp,
        ncl: c.ncl,
        scl: c.scl,
        total: F::zero(),
    };
    report.total = report.composed_total();
    if !report.total.is_finite() {
        return Err(Error::NonFinite { term: "total", value: report.total.to_f64_lossy() });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: f64 = 0.05;

    /// Unit vector at angle `theta` in the plane, padded to 3-D.
    fn at(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin(), 0.0]
    }

    fn fd<Fn1: Fn(&[f64]) -> f64>(f: Fn1, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            assert!((a - n).abs() / a.abs().max(1.0) < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn ce_examples() {
        let u = vec![0.2; 5];
        assert!((ce_loss(&u, 3).unwrap().loss - 5f64.ln() / 5.0).abs() < 1e-15);
        assert_eq!(ce_loss(&[0.0, 1.0, 0.0], 1).unwrap().loss, 0.0);
        let l = ce_loss(&[0.9, 0.1], 0).unwrap().loss;
        assert!((l - 0.5 * -(0.9f64.ln())).abs() < 1e-15);
        assert!((l - 0.052680).abs() < 1e-6);
        assert!(ce_loss(&[1.0, 0.0], 1).unwrap().clamped);
        assert!(ce_loss(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn pseudo_label_threshold_is_inclusive() {
        let cfg = PairwiseConfig::new(0.95).unwrap();
        assert!(pairwise_pseudo_label(&[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap());
        assert!(!pairwise_pseudo_label(&[1.0, 0.0], &[0.0, 1.0], &cfg).unwrap());
        // δ exactly representable: angle chosen so cos θ == λ after clamping
        let zj = [0.95, (1.0f64 - 0.95 * 0.95).sqrt()];
        let delta = cosine_similarity(&[1.0, 0.0], &zj).unwrap();
        let exact = PairwiseConfig { threshold: delta };
        assert!(pairwise_pseudo_label(&[1.0, 0.0], &zj, &exact).unwrap());
        assert!(PairwiseConfig::new(1.0).is_err());
        assert!(PairwiseConfig::new(0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let out = bce_loss(&[0.5, 0.5], &[0.5, 0.5], true).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        let out = bce_loss(&[1.0, 0.0], &[1.0, 0.0], true).unwrap();
        assert!(out.clamped && out.loss < 1e-11);
        let out = bce_loss(&[0.9, 0.1], &[0.1, 0.9], false).unwrap();
        assert!((out.loss + 0.82f64.ln()).abs() < 1e-15);
        assert!((out.loss - 0.19845).abs() < 1e-5);
    }

    #[test]
    fn bce_is_symmetric() {
        let a = [0.7, 0.2, 0.1];
        let b = [0.3, 0.3, 0.4];
        for y in [true, false] {
            let ab = bce_loss(&a, &b, y).unwrap();
            let ba = bce_loss(&b, &a, y).unwrap();
            assert_eq!(ab.loss, ba.loss);
            assert_eq!(ab.d_pi, ba.d_pj);
        }
    }

    #[test]
    fn consistency_examples() {
        let p = [0.3, 0.7];
        assert_eq!(consistency_loss(&p, &p, &p, &p).unwrap().loss, 0.0);
        let l = consistency_loss::<f64>(&[1.0, 0.0], &[0.5, 0.5], &p, &p).unwrap().loss;
        assert!((l - 0.25).abs() < 1e-15);
        let l = consistency_loss::<f64>(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap().loss;
        assert!((l - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ramp_examples() {
        let cfg = RampConfig { gamma: 5.0, length: 15.0 };
        assert_eq!(ramp_weight(15.0, &cfg), 5.0);
        assert_eq!(ramp_weight(40.0, &cfg), 5.0);
        assert!((ramp_weight(0.0, &cfg) - 5.0 * (-5f64).exp()).abs() < 1e-15);
        assert!((ramp_weight(0.0f64, &cfg) / 5.0 - 0.006738).abs() < 1e-6);
        let mut prev = 0.0;
        for i in 0..=100 {
            let w = ramp_weight(15.0 * i as f64 / 100.0, &cfg);
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn contrastive_aug_examples() {
        let z = at(0.0);
        let ctx = ContrastiveContext { query: &z, augmented: &z, negatives: &[], temperature: TAU };
        assert_eq!(contrastive_aug(&ctx).unwrap().loss, 0.0);

        let za = at(0.3);
        let n = at(-0.3);
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&n], temperature: TAU };
        assert!((contrastive_aug(&ctx).unwrap().loss - 2f64.ln()).abs() < 1e-12);

        let orth = at(std::f64::consts::FRAC_PI_2);
        let ctx = ContrastiveContext { query: &z, augmented: &z, negatives: &[&orth], temperature: TAU };
        let want = (-20f64).exp().ln_1p();
        let got = contrastive_aug(&ctx).unwrap().loss;
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        assert!((got - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn contrastive_pp_examples() {
        let z = at(0.0);
        let za = at(0.4);
        let n = at(-0.4);
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&n], temperature: TAU };
        assert!((contrastive_pp(&ctx, &[0]).unwrap().loss - 2f64.ln()).abs() < 1e-12);

        let negs: Vec<Vec<f64>> = (0..6).map(|_| za.clone()).collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &refs, temperature: TAU };
        for k in 1..=6 {
            let idx: Vec<usize> = (0..k).collect();
            assert!((contrastive_pp(&ctx, &idx).unwrap().loss - 7f64.ln()).abs() < 1e-12);
        }
        assert!(contrastive_pp(&ctx, &[]).is_err());
    }

    #[test]
    fn contrastive_pp_direct_evaluation() {
        let z = at(0.0);
        let za = at(0.9f64.acos());
        let pp = at(0.8f64.acos());
        let extra = at(0.1f64.acos());
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&pp, &extra], temperature: TAU };
        let got = contrastive_pp(&ctx, &[0]).unwrap().loss;
        let want = -(0.8 / TAU) + log_sum_exp(&[0.9 / TAU, 0.8 / TAU, 0.1 / TAU]).unwrap();
        assert!((got - want).abs() < 1e-10);

        let aug = contrastive_aug(&ctx).unwrap().loss;
        let ncl = ncl_loss(&ctx, &[0], 0.2).unwrap().grad.loss;
        assert!((ncl - (0.2 * aug + 0.8 * got)).abs() < 1e-12);
    }

    #[test]
    fn ncl_collapses() {
        let z = [0.3, -0.5, 0.8];
        let za = [0.25, -0.4, 0.9];
        let n1 = l2_normalize(&[1.0, 0.2, 0.1]).unwrap();
        let n2 = l2_normalize(&[0.3, -0.6, 0.7]).unwrap();
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&n1, &n2], temperature: TAU };
        let aug = contrastive_aug(&ctx).unwrap();
        let pp = contrastive_pp(&ctx, &[1]).unwrap();
        assert_eq!(ncl_loss(&ctx, &[1], 1.0).unwrap().grad, aug);
        assert_eq!(ncl_loss(&ctx, &[1], 0.0).unwrap().grad, pp);
        assert_eq!(ncl_loss(&ctx, &[], 1.0).unwrap().grad, aug);
    }

    #[test]
    fn scl_examples() {
        let z = [0.3, -0.5, 0.8];
        let za = [0.25, -0.4, 0.9];
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[], temperature: TAU };
        assert_eq!(scl_loss(&ctx, &[]).unwrap().loss, 0.0);

        let n1 = l2_normalize(&[1.0, 0.2, 0.1]).unwrap();
        let n2 = l2_normalize(&[0.3, -0.6, 0.7]).unwrap();
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&n1, &n2], temperature: TAU };
        let a = contrastive_aug(&ctx).unwrap();
        let s = scl_loss(&ctx, &[]).unwrap();
        assert!((a.loss - s.loss).abs() < 1e-12);
    }

    #[test]
    fn scl_two_positives_two_negatives() {
        // similarities: aug 0.9, same-label 0.7, negatives 0.2 and -0.1
        let z = at(0.0);
        let za = at(0.9f64.acos());
        let pos = at(0.7f64.acos());
        let n1 = at(0.2f64.acos());
        let n2 = at((-0.1f64).acos());
        let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&pos, &n1, &n2], temperature: TAU };
        let got = scl_loss(&ctx, &[0]).unwrap().loss;
        let lse = log_sum_exp(&[0.9 / TAU, 0.7 / TAU, 0.2 / TAU, -0.1 / TAU]).unwrap();
        let want = lse - 0.5 * (0.9 / TAU + 0.7 / TAU);
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn contrastive_grads_match_finite_differences() {
        let z = vec![0.3, -0.5, 0.8];
        let za = vec![0.25, -0.4, 0.9];
        let negs: Vec<Vec<f64>> = [[1.0, 0.2, 0.1], [0.3, -0.6, 0.7], [-0.2, 0.1, 0.5]]
            .iter()
            .map(|v| l2_normalize(v).unwrap())
            .collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let eval = |q: &[f64], a: &[f64]| {
            let ctx = ContrastiveContext { query: q, augmented: a, negatives: &refs, temperature: 0.1 };
            ncl_loss(&ctx, &[1, 2], 0.3).unwrap()
        };
        let g = eval(&z, &za).grad;
        assert_grad_close(&g.d_query, &fd(|q| eval(q, &za).grad.loss, &z));
        assert_grad_close(&g.d_augmented, &fd(|a| eval(&z, a).grad.loss, &za));
    }

    #[test]
    fn each_negative_increases_loss() {
        let z = at(0.0);
        let za = at(0.2);
        let negs: Vec<Vec<f64>> = (1..6).map(|i| at(0.5 * i as f64)).collect();
        let mut prev = 0.0;
        for m in 1..=negs.len() {
            let refs: Vec<&[f64]> = negs[..m].iter().map(Vec::as_slice).collect();
            let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &refs, temperature: 0.5 };
            let l = contrastive_aug(&ctx).unwrap().loss;
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn temperature_monotonicity() {
        let z = at(0.0);
        let za = at(0.3);
        let n1 = at(1.0);
        let n2 = at(2.0);
        let mut prev = f64::INFINITY;
        for tau in [0.5, 0.1, 0.05, 0.02] {
            let ctx = ContrastiveContext { query: &z, augmented: &za, negatives: &[&n1, &n2], temperature: tau };
            let l = contrastive_aug(&ctx).unwrap().loss;
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(&LossComponents::<f64>::default()).unwrap().total, 0.0);
        let only_ce = LossComponents { ce: 1.0, ..Default::default() };
        assert_eq!(total_loss(&only_ce).unwrap().total, 1.0);
        let c = LossComponents::<f64> { ce: 0.3, bce: 0.2, mse: 0.5, ramp_weight: 2.0, ncl: 0.1, scl: 0.4, ..Default::default() };
        assert!((total_loss(&c).unwrap().total - 2.0).abs() < 1e-15);
        let bad = LossComponents { bce: f64::NAN, ..Default::default() };
        assert!(matches!(total_loss(&bad), Err(Error::NonFinite { term: "bce", .. })));
    }
}
