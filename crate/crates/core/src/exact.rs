//! Exhaustive k-NN, used as ground truth for recall measurements.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::vector::DistanceMetric;

struct Entry<'a> {
    distance: f64,
    key: &'a str,
}

impl PartialEq for Entry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry<'_> {}

impl PartialOrd for Entry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.key.cmp(other.key))
    }
}

/// The `k` items nearest to `query`, ascending by `(distance, key)`.
pub fn knn<'a, I>(metric: DistanceMetric, items: I, query: &[f64], k: usize) -> Vec<(String, f64)>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (key, vector) in items {
        let entry = Entry {
            distance: metric.eval(query, vector),
            key,
        };
        if heap.len() < k {
            heap.push(entry);
        } else if heap.peek().is_some_and(|worst| entry < *worst) {
            heap.pop();
            heap.push(entry);
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|e| (e.key.to_owned(), e.distance))
        .collect()
}

/// Fraction of `truth` present in `found`.
pub fn recall(found: &[String], truth: &[String]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hits = truth.iter().filter(|t| found.contains(t)).count();
    hits as f64 / truth.len() as f64
}
