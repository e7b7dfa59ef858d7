//! Oracles shared by the integration tests: central finite differences,
//! a sort-based ranking, and random instance builders.
#![allow(dead_code)]

use ncl_core::model::{EncoderSpec, ModelState, Parameters};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Embedding width of [`small_model`].
pub const EMBED_DIM: usize = 5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Strictly positive probability vector.
pub fn probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn small_model(seed: u64) -> ModelState<f64> {
    let spec = EncoderSpec { input_dim: 4, hidden_dims: vec![6], embed_dim: EMBED_DIM };
    ModelState::new(spec, 3, 4, seed).unwrap()
}

/// Compares the gradient buffers filled by `f(ms, true)` with central
/// differences of `f(ms, false)` over every parameter. `f` must run its own
/// forward passes and, when asked, its backward passes.
pub fn model_fd_max_err(ms: &mut ModelState<f64>, f: &dyn Fn(&mut ModelState<f64>, bool) -> f64) -> f64 {
    ms.zero_grads();
    f(ms, true);
    let analytic: Vec<Vec<f64>> = ms.param_tensors().iter().map(|t| t.grads.to_vec()).collect();
    ms.zero_grads();
    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = ms.param_tensors()[ti].values[j];
            ms.param_tensors()[ti].values[j] = orig + FD_STEP;
            let up = f(ms, false);
            ms.param_tensors()[ti].values[j] = orig - FD_STEP;
            let down = f(ms, false);
            ms.param_tensors()[ti].values[j] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Indices of `scores` ordered by a full stable sort, ties by index.
pub fn sort_oracle(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending { o.reverse() } else { o }
    });
    idx
}
