//! Hard negative generation.
//!
//! For one unlabeled query: take the `k₂` least similar unlabeled queue
//! entries (easy negatives), interpolate each with randomly drawn labeled
//! queue entries for every mixing coefficient, repeat `N` times, and keep the
//! `k₂` synthetic vectors most similar to the query. The result extends the
//! negative set of that query only; the queues themselves are never modified.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::memory::{rank_top, FeatureQueue, LabeledQueue, Neighbor, Order};
use crate::numerics::{dot, l2_normalize, norm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HngConfig {
    /// Easy negatives selected, and synthetic negatives kept.
    pub k2: usize,
    /// Mixing rounds over the easy negatives.
    pub iterations: usize,
    pub mix_coefficients: Vec<f64>,
}

impl Default for HngConfig {
    fn default() -> Self {
        Self { k2: 400, iterations: 5, mix_coefficients: vec![1.0 / 3.0, 2.0 / 3.0] }
    }
}

impl HngConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(self.k2 >= 1, "k2 must be at least 1");
        contract!(self.iterations >= 1, "HNG iterations must be at least 1");
        contract!(!self.mix_coefficients.is_empty(), "at least one mixing coefficient is required");
        contract!(
            self.mix_coefficients.iter().all(|&m| m > 0.0 && m < 1.0),
            "mixing coefficients must lie in (0, 1)"
        );
        Ok(())
    }
}

/// Origin of one synthetic negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance<F> {
    pub unlabeled_index: usize,
    pub labeled_index: usize,
    pub mu: F,
    /// Interpolation before renormalization.
    pub raw: Vec<F>,
}

/// Synthetic negatives retained for one query, unit-norm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticNegativeSet<F> {
    pub vectors: Vec<Vec<F>>,
    pub provenance: Vec<Provenance<F>>,
    /// Similarity of each retained vector to the query.
    pub similarities: Vec<F>,
    /// Size of the pool the vectors were filtered from.
    pub pool_size: usize,
    pub flags: HngFlags,
}

impl<F> SyntheticNegativeSet<F> {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Degenerate conditions met while generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct HngFlags {
    /// Fewer than `k₂` unlabeled entries were available.
    pub short_queue: bool,
    /// The labeled queue was empty; nothing was generated.
    pub disabled: bool,
    /// Some interpolations cancelled to the zero vector and were skipped.
    pub skipped_mixes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EasyNegatives<F> {
    pub neighbors: Vec<Neighbor<F>>,
    pub short_queue: bool,
}

/// The `k₂` unlabeled entries least similar to `z`. Uses the whole queue
/// (and sets `short_queue`) when it holds fewer than `k₂` entries.
pub fn select_easy_negatives<F: Scalar>(unlabeled: &FeatureQueue<F>, z: &[F], k2: usize) -> Result<EasyNegatives<F>> {
    contract!(!unlabeled.is_empty(), "unlabeled queue is empty");
    contract!(k2 >= 1, "k2 must be at least 1");
    let short_queue = k2 > unlabeled.len();
    let neighbors = unlabeled.bottomk_similar(z, k2.min(unlabeled.len()))?;
    Ok(EasyNegatives { neighbors, short_queue })
}

/// Normalized interpolation of two unit vectors. Returns the raw mix and
/// `None` for the normalized one when the mix is (numerically) zero.
pub fn mix<F: Scalar>(zu: &[F], zl: &[F], mu: F) -> Result<(Vec<F>, Option<Vec<F>>)> {
    contract!(zu.len() == zl.len(), "mix inputs differ in length");
    contract!(mu > F::zero() && mu < F::one(), "mixing coefficient must lie in (0, 1)");
    let raw: Vec<F> = zu.iter().zip(zl).map(|(&a, &b)| mu * a + (F::one() - mu) * b).collect();
    let unit = if norm(&raw) > F::lit(1e-12).max(F::epsilon()) { Some(l2_normalize(&raw)?) } else { None };
    Ok((raw, unit))
}

/// Every synthetic candidate generated for one query, in generation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixPool<F> {
    pub vectors: Vec<Vec<F>>,
    pub provenance: Vec<Provenance<F>>,
    pub flags: HngFlags,
}

/// Runs `N` rounds over the easy negatives of `z`, pairing each with a
/// uniformly drawn labeled entry and mixing once per coefficient.
pub fn build_pool<F: Scalar, R: Rng + ?Sized>(
    unlabeled: &FeatureQueue<F>,
    labeled: &LabeledQueue<F>,
    z: &[F],
    cfg: &HngConfig,
    rng: &mut R,
) -> Result<MixPool<F>> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Ok(MixPool { flags: HngFlags { disabled: true, ..Default::default() }, ..Default::default() });
    }
    let easy = select_easy_negatives(unlabeled, z, cfg.k2)?;
    let mus: Vec<F> = cfg.mix_coefficients.iter().map(|&m| F::lit(m)).collect();

    let cap = easy.neighbors.len() * cfg.iterations * mus.len();
    let mut pool = MixPool {
        vectors: Vec::with_capacity(cap),
        provenance: Vec::with_capacity(cap),
        flags: HngFlags { short_queue: easy.short_queue, ..Default::default() },
    };
    for _ in 0..cfg.iterations {
        for e in &easy.neighbors {
            let zu = unlabeled.get(e.index).expect("index from the same queue");
            let li = rng.random_range(0..labeled.len());
            let zl = labeled.features().get(li).expect("index in range");
            for &mu in &mus {
                let (raw, unit) = mix(zu, zl, mu)?;
                match unit {
                    Some(u) => {
                        pool.vectors.push(u);
                        pool.provenance.push(Provenance { unlabeled_index: e.index, labeled_index: li, mu, raw });
                    }
                    None => pool.flags.skipped_mixes += 1,
                }
            }
        }
    }
    Ok(pool)
}

/// Keeps the `k` pool members most similar to `z`; ties by generation order.
pub fn filter_hardest<F: Scalar>(pool: MixPool<F>, z: &[F], k: usize) -> Result<SyntheticNegativeSet<F>> {
    let query = l2_normalize(z)?;
    let sims: Vec<F> = pool.vectors.iter().map(|v| dot(v, &query)).collect();
    let kept = rank_top(&sims, k, Order::Descending);
    let pool_size = pool.vectors.len();
    let mut vectors: Vec<Option<Vec<F>>> = pool.vectors.into_iter().map(Some).collect();
    let mut provenance: Vec<Option<Provenance<F>>> = pool.provenance.into_iter().map(Some).collect();
    let mut out = SyntheticNegativeSet {
        vectors: Vec::with_capacity(kept.len()),
        provenance: Vec::with_capacity(kept.len()),
        similarities: Vec::with_capacity(kept.len()),
        pool_size,
        flags: pool.flags,
    };
    for n in kept {
        out.vectors.push(vectors[n.index].take().expect("rank_top yields distinct indices"));
        out.provenance.push(provenance[n.index].take().expect("rank_top yields distinct indices"));
        out.similarities.push(n.similarity);
    }
    Ok(out)
}

/// Same result as [`build_pool`] followed by [`filter_hardest`] with
/// `k = k₂`, and the same random draws, without materializing the pool.
///
/// For unit inputs the similarity of a mix to the query has the closed form
/// `(μ·s_u + (1−μ)·s_l) / √(μ² + (1−μ)² + 2μ(1−μ)·zu·zl)`. Candidates are
/// ranked by that estimate; every candidate within [`SCREEN_MARGIN`] of the
/// `k₂`-th estimate (and any near-cancelling mix) is then mixed for real
/// and ranked exactly, so the output is bitwise identical to the pooled path.
pub fn generate<F: Scalar, R: Rng + ?Sized>(
    unlabeled: &FeatureQueue<F>,
    labeled: &LabeledQueue<F>,
    z: &[F],
    cfg: &HngConfig,
    rng: &mut R,
) -> Result<SyntheticNegativeSet<F>> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Ok(SyntheticNegativeSet { flags: HngFlags { disabled: true, ..Default::default() }, ..Default::default() });
    }
    let easy = select_easy_negatives(unlabeled, z, cfg.k2)?;
    let query = l2_normalize(z)?;
    let mus: Vec<F> = cfg.mix_coefficients.iter().map(|&m| F::lit(m)).collect();
    let two = F::lit(2.0);
    let near_zero = F::lit(1e-6);

    struct Candidate<F> {
        ui: usize,
        li: usize,
        mu: F,
        estimate: F,
        exact_only: bool,
    }
    let mut candidates = Vec::with_capacity(easy.neighbors.len() * cfg.iterations * mus.len());
    let mut labeled_sim: Vec<Option<F>> = vec![None; labeled.len()];
    for _ in 0..cfg.iterations {
        for e in &easy.neighbors {
            let zu = unlabeled.get(e.index).expect("index from the same queue");
            let li = rng.random_range(0..labeled.len());
            let zl = labeled.features().get(li).expect("index in range");
            let s_l = *labeled_sim[li].get_or_insert_with(|| dot(zl, &query));
            let s_u = dot(zu, &query);
            let cross = dot(zu, zl);
            for &mu in &mus {
                let nu = F::one() - mu;
                let sq = mu * mu + nu * nu + two * mu * nu * cross;
                let exact_only = sq < near_zero;
                let estimate = if exact_only { F::zero() } else { (mu * s_u + nu * s_l) / sq.sqrt() };
                candidates.push(Candidate { ui: e.index, li, mu, estimate, exact_only });
            }
        }
    }

    let k = cfg.k2.min(candidates.len());
    let estimates: Vec<F> = candidates.iter().map(|c| if c.exact_only { F::neg_infinity() } else { c.estimate }).collect();
    let cutoff = rank_top(&estimates, k, Order::Descending).last().map(|n| n.similarity).unwrap_or(F::neg_infinity());
    let margin = F::lit(SCREEN_MARGIN).max(F::epsilon() * F::lit(1e5));

    let mut pool = MixPool { vectors: Vec::new(), provenance: Vec::new(), flags: HngFlags { short_queue: easy.short_queue, ..Default::default() } };
    let mut pool_size = 0usize;
    for c in &candidates {
        let needed = c.exact_only || c.estimate >= cutoff - margin;
        if !needed {
            pool_size += 1;
            continue;
        }
        let zu = unlabeled.get(c.ui).expect("index from the same queue");
        let zl = labeled.features().get(c.li).expect("index in range");
        let (raw, unit) = mix(zu, zl, c.mu)?;
        match unit {
            Some(u) => {
                pool_size += 1;
                pool.vectors.push(u);
                pool.provenance.push(Provenance { unlabeled_index: c.ui, labeled_index: c.li, mu: c.mu, raw });
            }
            None => pool.flags.skipped_mixes += 1,
        }
    }
    let mut out = filter_hardest(pool, z, cfg.k2)?;
    out.pool_size = pool_size;
    Ok(out)
}

/// Least slack between the closed-form similarity estimate and the exact
/// value; widened for low-precision scalars.
pub const SCREEN_MARGIN: f64 = 1e-9;

/// The unlabeled queue followed by the synthetic negatives, as borrowed
/// slices for a single query's loss.
pub fn augmented_negatives<'a, F: Scalar>(
    unlabeled: &'a FeatureQueue<F>,
    synthetic: &'a SyntheticNegativeSet<F>,
) -> Vec<&'a [F]> {
    let mut out = Vec::with_capacity(unlabeled.len() + synthetic.len());
    out.extend(unlabeled.iter());
    out.extend(synthetic.vectors.iter().map(Vec::as_slice));
    out
}
