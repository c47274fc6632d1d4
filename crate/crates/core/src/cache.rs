//! Bounded vector cache with prefetch-on-miss over graph neighborhoods.
//!
//! A miss on key `k` at layer `l` does not read `k` alone: it reads `k`
//! together with up to `p - 1` of `k`'s layer-`l` neighbors that are not yet
//! resident, in one store transaction. Greedy search expands exactly those
//! neighbors next, so most of the follow-up reads become hits.
//!
//! The cache never changes what a search returns. Every vector it hands out
//! is the store's copy, bit for bit; only [`CacheStats`] and the store's
//! transaction counters depend on `p` and the capacity.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hnsw::{HnswGraph, NodeId};
use crate::store::VectorStore;
use crate::vector::Vector;

const PREFETCH_TARGET_BYTES: usize = 1 << 20;
const MIN_P: usize = 8;
const MAX_P: usize = 2048;

/// Prefetch batch size for a dimension: about 1 MiB of `f32` data,
/// clamped to `[8, 2048]`.
pub fn default_p(dimension: usize) -> usize {
    let dimension = dimension.max(1);
    (PREFETCH_TARGET_BYTES / (4 * dimension)).clamp(MIN_P, MAX_P)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    /// Vectors read per miss.
    pub p: usize,
    /// Maximum resident vectors.
    pub capacity: usize,
}

impl CacheConfig {
    /// `p = default_p(dimension)`, `capacity = 8p`.
    pub fn for_dimension(dimension: usize) -> Self {
        Self::with_p(default_p(dimension))
    }

    /// The given `p` with the default capacity of `8p`.
    pub fn with_p(p: usize) -> Self {
        Self {
            p,
            capacity: p.saturating_mul(8),
        }
    }

    /// Resolves optional overrides against the dimension defaults.
    pub fn resolve(dimension: usize, p: Option<usize>, capacity: Option<usize>) -> Result<Self> {
        let mut config = Self::with_p(p.unwrap_or_else(|| default_p(dimension)));
        if let Some(capacity) = capacity {
            config.capacity = capacity;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn unbounded(mut self) -> Self {
        self.capacity = usize::MAX;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidConfig("prefetch size p must be at least 1".into()));
        }
        if self.capacity < self.p {
            return Err(Error::InvalidConfig(format!(
                "cache capacity ({}) must be at least p ({})",
                self.capacity, self.p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub prefetch_batches: u64,
    /// Vectors loaded by prefetch batches, including the missed one.
    pub prefetched_vectors: u64,
    pub resident: usize,
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    batches: AtomicU64,
    loaded: AtomicU64,
}

#[derive(Debug)]
struct Slot {
    vector: Arc<Vector>,
    stamp: u64,
}

/// LRU bookkeeping: `order` holds `(stamp, key)` in touch order, and an
/// entry is live only while its stamp matches the slot's. Stale entries are
/// skipped on eviction and purged when they outnumber live ones.
#[derive(Debug, Default)]
struct Lru {
    slots: HashMap<Arc<str>, Slot>,
    order: VecDeque<(u64, Arc<str>)>,
    clock: u64,
}

impl Lru {
    fn get(&mut self, key: &str) -> Option<Arc<Vector>> {
        let slot = self.slots.get_mut(key)?;
        self.clock += 1;
        slot.stamp = self.clock;
        let vector = slot.vector.clone();
        let (key, _) = self.slots.get_key_value(key).expect("slot just found");
        self.order.push_back((self.clock, key.clone()));
        self.compact();
        Some(vector)
    }

    fn contains(&self, key: &str) -> bool {
        self.slots.contains_key(key)
    }

    fn put(&mut self, key: Arc<str>, vector: Arc<Vector>) {
        self.clock += 1;
        self.order.push_back((self.clock, key.clone()));
        self.slots.insert(
            key,
            Slot {
                vector,
                stamp: self.clock,
            },
        );
    }

    fn evict_to(&mut self, capacity: usize) {
        while self.slots.len() > capacity {
            let Some((stamp, key)) = self.order.pop_front() else {
                break;
            };
            if self.slots.get(&key).is_some_and(|s| s.stamp == stamp) {
                self.slots.remove(&key);
            }
        }
        self.compact();
    }

    fn compact(&mut self) {
        if self.order.len() > 2 * self.slots.len() + 1024 {
            let slots = &self.slots;
            self.order
                .retain(|(stamp, key)| slots.get(key).is_some_and(|s| s.stamp == *stamp));
        }
    }
}

/// Thread-safe prefetching cache. All state changes, including the store
/// read on a miss, happen under one lock, so at most one store transaction
/// per cache is in flight.
#[derive(Debug)]
pub struct PrefetchCache {
    config: CacheConfig,
    lru: Mutex<Lru>,
    counters: Counters,
}

impl PrefetchCache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            lru: Mutex::new(Lru::default()),
            counters: Counters::default(),
        })
    }

    pub fn for_dimension(dimension: usize) -> Self {
        Self::new(CacheConfig::for_dimension(dimension)).expect("default cache config is valid")
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.lru.lock().slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.lru.lock().contains(key)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            prefetch_batches: self.counters.batches.load(Ordering::Relaxed),
            prefetched_vectors: self.counters.loaded.load(Ordering::Relaxed),
            resident: self.len(),
        }
    }

    /// Drops every resident vector. Counters are kept.
    pub fn clear(&self) {
        let mut lru = self.lru.lock();
        *lru = Lru::default();
    }

    /// Returns the vector stored under `key`, prefetching `key`'s neighbors
    /// on `layer` when it is not resident.
    pub fn fetch(
        &self,
        key: &str,
        layer: usize,
        graph: &HnswGraph,
        store: &dyn VectorStore,
    ) -> Result<Arc<Vector>> {
        match graph.id_of(key) {
            Some(id) => self.fetch_node(id, layer, graph, store),
            None => {
                // not linked yet: nothing to prefetch alongside it
                let mut lru = self.lru.lock();
                if let Some(v) = lru.get(key) {
                    self.counters.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(v);
                }
                self.load(&mut lru, vec![Arc::from(key)], store)
            }
        }
    }

    pub(crate) fn fetch_node(
        &self,
        id: NodeId,
        layer: usize,
        graph: &HnswGraph,
        store: &dyn VectorStore,
    ) -> Result<Arc<Vector>> {
        let key = &graph.node(id).key;
        let mut lru = self.lru.lock();
        if let Some(v) = lru.get(key) {
            self.counters.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        let mut batch = Vec::with_capacity(self.config.p.min(64));
        batch.push(key.clone());
        for &n in graph.links(id, layer) {
            if batch.len() >= self.config.p {
                break;
            }
            let neighbor = &graph.node(n).key;
            if !lru.contains(neighbor) {
                batch.push(neighbor.clone());
            }
        }
        self.load(&mut lru, batch, store)
    }

    /// One store read for `batch`; `batch[0]` is the key that missed.
    fn load(&self, lru: &mut Lru, batch: Vec<Arc<str>>, store: &dyn VectorStore) -> Result<Arc<Vector>> {
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        self.counters.batches.fetch_add(1, Ordering::Relaxed);
        let keys: Vec<&str> = batch.iter().map(|k| &**k).collect();
        let read = store.get_batch(&keys)?;
        if read.missing.iter().any(|m| *m == *batch[0]) {
            return Err(Error::GraphCorruption(format!(
                "key {:?} is in the graph but not in the store",
                batch[0]
            )));
        }
        self.counters.loaded.fetch_add(read.found.len() as u64, Ordering::Relaxed);
        let mut wanted = None;
        let mut found = read.found.into_iter();
        for key in &batch {
            // found preserves request order and skips missing keys
            if read.missing.iter().any(|m| **m == **key) {
                continue;
            }
            let (_, vector) = found.next().expect("store returned fewer entries than requested");
            let vector = Arc::new(vector);
            if wanted.is_none() {
                wanted = Some(vector.clone());
            }
            lru.put(key.clone(), vector);
        }
        lru.evict_to(self.config.capacity);
        Ok(wanted.expect("requested key was found"))
    }

    /// Warms the cache with `keys` using a single store read. Entries are
    /// ordinary LRU residents afterwards; if more keys are pinned than fit,
    /// the last `capacity` of them remain.
    pub fn pin_batch(&self, keys: &[&str], store: &dyn VectorStore) -> Result<()> {
        if keys.is_empty() {
            return Ok(());
        }
        let read = store.get_batch(keys)?;
        if let Some(missing) = read.missing.first() {
            return Err(Error::GraphCorruption(format!("cannot pin {missing:?}: not in the store")));
        }
        let mut lru = self.lru.lock();
        for (key, vector) in read.found {
            lru.put(Arc::from(key), Arc::new(vector));
        }
        lru.evict_to(self.config.capacity);
        Ok(())
    }

    /// Inserts a vector the caller has just written, without a store read.
    /// `vector` must already be in its stored (`f32`-rounded) form.
    pub(crate) fn admit(&self, key: Arc<str>, vector: Arc<Vector>) {
        let mut lru = self.lru.lock();
        lru.put(key, vector);
        lru.evict_to(self.config.capacity);
    }
}
