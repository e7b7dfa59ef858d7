//! Cluster assignment from the unlabeled head and clustering accuracy under
//! the best cluster-to-class permutation.

use std::io::Write;

use serde::Serialize;

use crate::error::{contract, Result};
use crate::model::ModelState;
use crate::numerics::argmax;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub acc: f64,
    /// `permutation[cluster] = class` maximizing agreement.
    pub permutation: Vec<usize>,
    /// `confusion[cluster][class]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Argmax of the unlabeled head for each input; ties go to the lowest class.
pub fn assign_clusters<F: Scalar, X: AsRef<[F]>>(ms: &ModelState<F>, inputs: &[X]) -> Result<Vec<usize>> {
    inputs
        .iter()
        .map(|x| {
            let z = ms.embed(x.as_ref())?;
            Ok(argmax(&ms.unlabeled_probs(&z)?))
        })
        .collect()
}

fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    contract!(y_true.len() == y_pred.len(), "label arrays differ in length: {} vs {}", y_true.len(), y_pred.len());
    contract!(!y_true.is_empty(), "label arrays are empty");
    contract!(classes > 0, "number of classes must be positive");
    let mut m = vec![vec![0usize; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        contract!(t < classes && p < classes, "label out of range [0, {classes})");
        m[p][t] += 1;
    }
    Ok(m)
}

/// Accuracy under the best one-to-one mapping of clusters to classes,
/// found with the Hungarian algorithm on the confusion matrix.
pub fn clustering_acc(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ClusteringResult> {
    let conf = confusion(y_true, y_pred, classes)?;
    let max = conf.iter().flatten().copied().max().unwrap_or(0) as i64;
    let costs: Vec<Vec<i64>> = conf.iter().map(|row| row.iter().map(|&c| max - c as i64).collect()).collect();
    let permutation = hungarian(&costs);
    let matched: usize = permutation.iter().enumerate().map(|(c, &k)| conf[c][k]).sum();
    Ok(ClusteringResult {
        assignments: y_pred.to_vec(),
        acc: matched as f64 / y_true.len() as f64,
        permutation,
        confusion: conf,
    })
}

/// Exhaustive maximum over all permutations; limited to 8 classes.
pub fn acc_bruteforce(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    contract!(classes <= 8, "brute-force accuracy supports at most 8 classes, got {classes}");
    let conf = confusion(y_true, y_pred, classes)?;
    let mut perm: Vec<usize> = (0..classes).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let m: usize = p.iter().enumerate().map(|(c, &k)| conf[c][k]).sum();
        best = best.max(m);
    });
    Ok(best as f64 / y_true.len() as f64)
}

fn permute(p: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

/// Minimum-cost assignment on a square matrix (O(n³) potentials method).
/// Returns `assignment[row] = col`.
pub fn hungarian(costs: &[Vec<i64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(costs.iter().all(|row| row.len() == n));
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    // p[col] = row matched to col (1-based, 0 = none)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub acc: f64,
    pub ce: f64,
    pub bce: f64,
    pub mse: f64,
    pub ncl: f64,
    pub scl: f64,
    pub total: f64,
}

pub const METRICS_HEADER: [&str; 8] = ["epoch", "acc", "ce", "bce", "mse", "ncl", "scl", "total"];

/// Writes the fixed header followed by one line per row.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderSpec;

    #[test]
    fn perfect_and_permuted() {
        let y = [0, 1, 2, 2, 1, 0];
        let r = clustering_acc(&y, &y, 3).unwrap();
        assert_eq!(r.acc, 1.0);
        assert_eq!(r.permutation, vec![0, 1, 2]);
        let relabel = [2, 0, 1];
        let yp: Vec<usize> = y.iter().map(|&c| relabel[c]).collect();
        assert_eq!(clustering_acc(&y, &yp, 3).unwrap().acc, 1.0);
    }

    #[test]
    fn hand_case() {
        let r = clustering_acc(&[0, 0, 1, 1], &[1, 1, 1, 0], 2).unwrap();
        assert_eq!(r.acc, 0.75);
        assert_eq!(r.permutation, vec![1, 0]);
        assert_eq!(acc_bruteforce(&[0, 0, 1, 1], &[1, 1, 1, 0], 2).unwrap(), 0.75);
    }

    #[test]
    fn bruteforce_edges() {
        assert_eq!(acc_bruteforce(&[3], &[1], 4).unwrap(), 1.0);
        assert_eq!(acc_bruteforce(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        assert!(acc_bruteforce(&[0], &[0], 9).is_err());
    }

    #[test]
    fn contract_errors() {
        assert!(clustering_acc(&[0, 1], &[0], 2).is_err());
        assert!(clustering_acc(&[0, 2], &[0, 1], 2).is_err());
    }

    #[test]
    fn single_cluster_bound() {
        let y = [0, 0, 0, 1, 2, 2];
        let r = clustering_acc(&y, &[1; 6], 3).unwrap();
        assert_eq!(r.acc, 3.0 / 6.0);
    }

    #[test]
    fn uniform_head_assigns_class_zero() {
        let ms = ModelState::<f64>::zeros(EncoderSpec { input_dim: 2, hidden_dims: vec![3], embed_dim: 2 }, 2, 4).unwrap();
        let a = assign_clusters(&ms, &[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(a, vec![0, 0]);
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        let row = MetricsRow { epoch: 0, acc: 0.5, ce: 1.0, bce: 0.25, mse: 0.0, ncl: 0.0, scl: 0.0, total: 1.25 };
        write_metrics_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,acc,ce,bce,mse,ncl,scl,total");
        assert_eq!(lines.next().unwrap(), "0,0.5,1.0,0.25,0.0,0.0,0.0,1.25");
    }
}
