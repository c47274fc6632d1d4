#![allow(dead_code)]

use std::sync::Arc;

use burrow::{exact, CacheConfig, DistanceMetric, HnswConfig, Index, MemoryStore, StoreRecord, Vector, VectorStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(n: usize, dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vector::new((0..dim).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect()
}

pub fn keys(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i:06}")).collect()
}

pub fn build(config: HnswConfig, vectors: &[Vector], cache: CacheConfig) -> Index {
    let dim = vectors[0].dimension();
    let store: Arc<dyn VectorStore> = Arc::new(MemoryStore::new(dim).unwrap());
    let mut index = Index::new(config, store, cache).unwrap();
    let keys = keys(vectors.len());
    let records: Vec<_> = keys.iter().zip(vectors).map(|(k, v)| StoreRecord::new(k, v)).collect();
    index.bulk_insert(&records).unwrap();
    index
}

/// Ground truth over the vectors as the store keeps them (`f32`-rounded).
pub struct Truth {
    keys: Vec<String>,
    stored: Vec<Vector>,
    metric: DistanceMetric,
}

impl Truth {
    pub fn new(metric: DistanceMetric, vectors: &[Vector]) -> Self {
        Self::with_keys(metric, keys(vectors.len()), vectors)
    }

    pub fn with_keys(metric: DistanceMetric, keys: Vec<String>, vectors: &[Vector]) -> Self {
        Self {
            keys,
            stored: vectors.iter().map(|v| v.to_stored().unwrap()).collect(),
            metric,
        }
    }

    pub fn knn(&self, q: &Vector, k: usize) -> Vec<(String, f64)> {
        let items = self.keys.iter().map(String::as_str).zip(self.stored.iter().map(Vector::as_slice));
        exact::knn(self.metric, items, q.as_slice(), k)
    }
}
