//! Fixed-capacity FIFO feature queues and similarity-ranked retrieval.
//!
//! Entries are stored L2-normalized, so cosine similarity against a
//! normalized query is a dot product. Index 0 is the oldest entry.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::error::{contract, Result};
use crate::numerics::{clamp_unit, dot, l2_normalize};
use crate::scalar::Scalar;

/// One retrieval hit: queue index and cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<F> {
    pub index: usize,
    pub similarity: F,
}

/// Unlabeled feature queue.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQueue<F> {
    capacity: usize,
    entries: VecDeque<Vec<F>>,
}

impl<F: Scalar> FeatureQueue<F> {
    pub fn new(capacity: usize) -> Result<Self> {
        contract!(capacity > 0, "queue capacity must be positive");
        Ok(Self { capacity, entries: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[F]> {
        self.entries.get(index).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[F]> + '_ {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Borrowed view of all entries, oldest first.
    pub fn as_slices(&self) -> Vec<&[F]> {
        self.iter().collect()
    }

    /// Normalizes and appends every feature, evicting the oldest past capacity.
    /// Nothing is pushed if any feature has zero norm.
    pub fn push<V: AsRef<[F]>>(&mut self, features: &[V]) -> Result<()> {
        let normalized = features.iter().map(|f| l2_normalize(f.as_ref())).collect::<Result<Vec<_>>>()?;
        for f in normalized {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(f);
        }
        Ok(())
    }

    /// Cosine similarity of `query` to every entry.
    pub fn similarities(&self, query: &[F]) -> Result<Vec<F>> {
        let q = l2_normalize(query)?;
        if let Some(first) = self.entries.front() {
            contract!(first.len() == q.len(), "query dimension {} != stored dimension {}", q.len(), first.len());
        }
        Ok(self.entries.iter().map(|e| clamp_unit(dot(e, &q))).collect())
    }

    /// The `k` entries most similar to `query`, descending; ties go to the lower index.
    pub fn topk_similar(&self, query: &[F], k: usize) -> Result<Vec<Neighbor<F>>> {
        contract!(k >= 1 && k <= self.len(), "k = {k} out of range for queue of length {}", self.len());
        Ok(rank_top(&self.similarities(query)?, k, Order::Descending))
    }

    /// The `k` entries least similar to `query`, ascending; ties go to the lower index.
    pub fn bottomk_similar(&self, query: &[F], k: usize) -> Result<Vec<Neighbor<F>>> {
        contract!(k >= 1 && k <= self.len(), "k = {k} out of range for queue of length {}", self.len());
        Ok(rank_top(&self.similarities(query)?, k, Order::Ascending))
    }
}

/// Feature queue whose entries carry class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQueue<F> {
    features: FeatureQueue<F>,
    labels: VecDeque<usize>,
    num_classes: usize,
}

impl<F: Scalar> LabeledQueue<F> {
    pub fn new(capacity: usize, num_classes: usize) -> Result<Self> {
        contract!(num_classes > 0, "labeled queue needs at least one class");
        Ok(Self { features: FeatureQueue::new(capacity)?, labels: VecDeque::with_capacity(capacity), num_classes })
    }

    pub fn features(&self) -> &FeatureQueue<F> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied()
    }

    pub fn push<V: AsRef<[F]>>(&mut self, features: &[V], labels: &[usize]) -> Result<()> {
        contract!(features.len() == labels.len(), "{} features but {} labels", features.len(), labels.len());
        contract!(labels.iter().all(|&y| y < self.num_classes), "label out of range [0, {})", self.num_classes);
        self.features.push(features)?;
        for &y in labels {
            if self.labels.len() == self.features.capacity() {
                self.labels.pop_front();
            }
            self.labels.push_back(y);
        }
        Ok(())
    }

    /// Queue indices of every entry with `label`, oldest first.
    pub fn indices_with_label(&self, label: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &y)| y == label).map(|(i, _)| i).collect()
    }

    /// Stored features with `label`, oldest first.
    pub fn positives_by_label(&self, label: usize) -> Vec<&[F]> {
        self.indices_with_label(label).into_iter().filter_map(|i| self.features.get(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Descending,
    Ascending,
}

/// Indices of the `k` extreme values of `scores` in the given order, ties
/// broken by lower index. `k` is clamped to `scores.len()`.
pub fn rank_top<F: Scalar>(scores: &[F], k: usize, order: Order) -> Vec<Neighbor<F>> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let cmp = |a: &usize, b: &usize| -> Ordering {
        let (sa, sb) = (scores[*a], scores[*b]);
        let by_score = match order {
            Order::Descending => sb.partial_cmp(&sa),
            Order::Ascending => sa.partial_cmp(&sb),
        };
        by_score.unwrap_or(Ordering::Equal).then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx.into_iter().map(|index| Neighbor { index, similarity: scores[index] }).collect()
}
