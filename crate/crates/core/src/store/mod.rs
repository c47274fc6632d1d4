//! Persistent key→vector storage with batched, transactional access.
//!
//! Only keys and graph topology are meant to stay resident in RAM; vector
//! payloads live behind a [`VectorStore`]. Every `*_batch` call maps to one
//! backend transaction, and the [`StoreStats`] counters record exactly that,
//! which is what the prefetch cache is measured against.
//!
//! Vectors are stored as little-endian `f32` (`dimension * 4` bytes per
//! record). Raw document text lives in a separate keyspace under the same
//! key.

mod disk;
mod memory;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};

pub use disk::DiskStore;
pub use memory::MemoryStore;

use crate::error::{Error, Result};
use crate::vector::Vector;

/// One record handed to [`VectorStore::put_batch`].
#[derive(Debug, Clone, Copy)]
pub struct StoreRecord<'a> {
    pub key: &'a str,
    pub vector: &'a Vector,
    pub payload: Option<&'a str>,
}

impl<'a> StoreRecord<'a> {
    pub fn new(key: &'a str, vector: &'a Vector) -> Self {
        Self {
            key,
            vector,
            payload: None,
        }
    }

    pub fn with_payload(mut self, payload: Option<&'a str>) -> Self {
        self.payload = payload;
        self
    }
}

/// Result of a batched read: entries in request order plus the keys that
/// were not present.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRead<T> {
    pub found: Vec<(String, T)>,
    pub missing: Vec<String>,
}

impl<T> Default for BatchRead<T> {
    fn default() -> Self {
        Self {
            found: Vec::new(),
            missing: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StoreStats {
    pub count: usize,
    pub dimension: usize,
    pub transactions_read: u64,
    pub transactions_write: u64,
}

/// Batched key→vector storage.
///
/// Read-side batch calls (`get_batch`, `get_payloads`, `missing_keys`) each
/// count as one read transaction; `put_batch` and `remove_batch` each count
/// as one write transaction. Empty batches never touch the backend and are
/// not counted. `len` and `keys` are bookkeeping and are not counted either.
pub trait VectorStore: Send + Sync {
    fn dimension(&self) -> usize;

    fn len(&self) -> Result<usize>;

    fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    /// Writes all records atomically. Duplicate keys, within the batch or
    /// against stored keys, fail the whole batch.
    fn put_batch(&self, records: &[StoreRecord<'_>]) -> Result<()>;

    /// Reads vectors for `keys`, preserving request order.
    fn get_batch(&self, keys: &[&str]) -> Result<BatchRead<Vector>>;

    /// Reads document text for `keys`. A key that is stored without text
    /// comes back as `None`; a key that is not stored at all is `missing`.
    fn get_payloads(&self, keys: &[&str]) -> Result<BatchRead<Option<String>>>;

    /// Which of `keys` are not stored, in request order.
    fn missing_keys(&self, keys: &[&str]) -> Result<Vec<String>>;

    /// Deletes the given keys (vectors and payloads) atomically and returns
    /// how many were present. Used to roll back interrupted builds.
    fn remove_batch(&self, keys: &[&str]) -> Result<usize>;

    /// All stored keys in ascending order.
    fn keys(&self) -> Result<Vec<String>>;

    fn stats(&self) -> StoreStats;
}

#[derive(Debug, Default)]
pub(crate) struct Counters {
    reads: AtomicU64,
    writes: AtomicU64,
}

impl Counters {
    pub(crate) fn read(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn write(&self) {
        self.writes.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self, count: usize, dimension: usize) -> StoreStats {
        StoreStats {
            count,
            dimension,
            transactions_read: self.reads.load(Ordering::Relaxed),
            transactions_write: self.writes.load(Ordering::Relaxed),
        }
    }
}

/// Checks a batch against the store schema and narrows vectors to `f32`.
pub(crate) fn prepare_batch(records: &[StoreRecord<'_>], dimension: usize) -> Result<Vec<Vec<f32>>> {
    let mut seen = HashSet::with_capacity(records.len());
    records
        .iter()
        .map(|r| {
            if r.key.is_empty() {
                return Err(Error::Argument("store keys must be non-empty".into()));
            }
            if !seen.insert(r.key) {
                return Err(Error::DuplicateKey(r.key.to_owned()));
            }
            if r.vector.dimension() != dimension {
                return Err(Error::Dimension {
                    expected: dimension,
                    actual: r.vector.dimension(),
                });
            }
            r.vector.to_f32()
        })
        .collect()
}

pub(crate) fn encode(components: &[f32]) -> Vec<u8> {
    components.iter().flat_map(|c| c.to_le_bytes()).collect()
}

pub(crate) fn decode(bytes: &[u8], dimension: usize, key: &str) -> Result<Vector> {
    if bytes.len() != dimension * 4 {
        return Err(Error::Storage(format!(
            "record {key:?} holds {} bytes, expected {}",
            bytes.len(),
            dimension * 4
        )));
    }
    let components: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Vector::new(components)
}

#[cfg(test)]
pub(crate) mod contract {
    //! Behaviour every backend must share; run against each implementation.

    use super::*;

    pub fn vec(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    pub fn put(store: &dyn VectorStore, items: &[(&str, &[f64])]) -> Result<()> {
        let vectors: Vec<Vector> = items.iter().map(|(_, c)| vec(c)).collect();
        let records: Vec<_> = items
            .iter()
            .zip(&vectors)
            .map(|((k, _), v)| StoreRecord::new(k, v))
            .collect();
        store.put_batch(&records)
    }

    pub fn batch_accounting(store: &dyn VectorStore) {
        let before = store.stats();
        put(store, &[("a", &[1.0, 2.0]), ("b", &[3.0, 4.0]), ("c", &[5.0, 6.0])]).unwrap();
        let after = store.stats();
        assert_eq!(after.count, 3);
        assert_eq!(after.transactions_write, before.transactions_write + 1);

        let read = store.get_batch(&["b", "a"]).unwrap();
        assert_eq!(read.found, vec![("b".into(), vec(&[3.0, 4.0])), ("a".into(), vec(&[1.0, 2.0]))]);
        assert!(read.missing.is_empty());

        let read = store.get_batch(&["a", "z"]).unwrap();
        assert_eq!(read.found.len(), 1);
        assert_eq!(read.missing, vec!["z".to_string()]);

        let r0 = store.stats().transactions_read;
        for _ in 0..100 {
            store.get_batch(&["a"]).unwrap();
        }
        assert_eq!(store.stats().transactions_read, r0 + 100);
        let keys: Vec<&str> = std::iter::repeat_n("a", 100).collect();
        store.get_batch(&keys).unwrap();
        assert_eq!(store.stats().transactions_read, r0 + 101);

        // empty batches never reach the backend
        store.get_batch(&[]).unwrap();
        store.put_batch(&[]).unwrap();
        assert_eq!(store.stats().transactions_read, r0 + 101);
        assert_eq!(store.stats().transactions_write, after.transactions_write);
    }

    pub fn duplicate_keys_are_atomic(store: &dyn VectorStore) {
        put(store, &[("a", &[1.0, 2.0])]).unwrap();
        let err = put(store, &[("x", &[1.0, 1.0]), ("x", &[2.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey(k) if k == "x"));
        let err = put(store, &[("y", &[1.0, 1.0]), ("a", &[2.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey(k) if k == "a"));
        assert_eq!(store.len().unwrap(), 1);
        assert_eq!(store.get_batch(&["x", "y"]).unwrap().missing.len(), 2);
        assert_eq!(store.get_batch(&["a"]).unwrap().found[0].1, vec(&[1.0, 2.0]));
    }

    pub fn rejects_wrong_dimension(store: &dyn VectorStore) {
        let err = put(store, &[("a", &[1.0, 2.0, 3.0])]).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 2, actual: 3 }));
        assert_eq!(store.len().unwrap(), 0);
    }

    pub fn payloads(store: &dyn VectorStore) {
        let va = vec(&[1.0, 0.0]);
        let vb = vec(&[0.0, 1.0]);
        store
            .put_batch(&[
                StoreRecord::new("a", &va).with_payload(Some("hello")),
                StoreRecord::new("b", &vb),
            ])
            .unwrap();
        let read = store.get_payloads(&["a", "b", "zz"]).unwrap();
        assert_eq!(
            read.found,
            vec![("a".to_string(), Some("hello".to_string())), ("b".to_string(), None)]
        );
        assert_eq!(read.missing, vec!["zz".to_string()]);
        assert_eq!(store.get_payloads(&[]).unwrap(), BatchRead::default());
    }

    pub fn stores_f32_precision(store: &dyn VectorStore) {
        let v = vec(&[0.1, 1.0 / 3.0]);
        store.put_batch(&[StoreRecord::new("k", &v)]).unwrap();
        let got = store.get_batch(&["k"]).unwrap().found.remove(0).1;
        assert_eq!(got, v.to_stored().unwrap());
        assert_ne!(got, v);
    }

    pub fn remove_and_keys(store: &dyn VectorStore) {
        put(store, &[("b", &[1.0, 2.0]), ("a", &[3.0, 4.0]), ("c", &[5.0, 6.0])]).unwrap();
        assert_eq!(store.keys().unwrap(), vec!["a", "b", "c"]);
        assert_eq!(store.missing_keys(&["c", "q", "a"]).unwrap(), vec!["q".to_string()]);
        assert_eq!(store.remove_batch(&["b", "nope"]).unwrap(), 1);
        assert_eq!(store.keys().unwrap(), vec!["a", "c"]);
        assert_eq!(store.len().unwrap(), 2);
    }
}
