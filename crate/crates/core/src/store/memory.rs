use std::collections::HashMap;

use parking_lot::RwLock;

use super::{decode, encode, prepare_batch, BatchRead, Counters, StoreRecord, StoreStats, VectorStore};
use crate::error::{Error, Result};
use crate::vector::Vector;

/// Heap-backed store with the same semantics as [`super::DiskStore`],
/// including `f32` narrowing and transaction accounting.
#[derive(Debug)]
pub struct MemoryStore {
    dimension: usize,
    inner: RwLock<Inner>,
    counters: Counters,
}

#[derive(Debug, Default)]
struct Inner {
    vectors: HashMap<String, Vec<u8>>,
    payloads: HashMap<String, String>,
}

impl MemoryStore {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        Ok(Self {
            dimension,
            inner: RwLock::new(Inner::default()),
            counters: Counters::default(),
        })
    }
}

impl VectorStore for MemoryStore {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn len(&self) -> Result<usize> {
        Ok(self.inner.read().vectors.len())
    }

    fn put_batch(&self, records: &[StoreRecord<'_>]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let narrowed = prepare_batch(records, self.dimension)?;
        self.counters.write();
        let mut inner = self.inner.write();
        if let Some(dup) = records.iter().find(|r| inner.vectors.contains_key(r.key)) {
            return Err(Error::DuplicateKey(dup.key.to_owned()));
        }
        for (record, components) in records.iter().zip(narrowed) {
            inner.vectors.insert(record.key.to_owned(), encode(&components));
            if let Some(text) = record.payload {
                inner.payloads.insert(record.key.to_owned(), text.to_owned());
            }
        }
        Ok(())
    }

    fn get_batch(&self, keys: &[&str]) -> Result<BatchRead<Vector>> {
        let mut out = BatchRead::default();
        if keys.is_empty() {
            return Ok(out);
        }
        self.counters.read();
        let inner = self.inner.read();
        for &key in keys {
            match inner.vectors.get(key) {
                Some(bytes) => out.found.push((key.to_owned(), decode(bytes, self.dimension, key)?)),
                None => out.missing.push(key.to_owned()),
            }
        }
        Ok(out)
    }

    fn get_payloads(&self, keys: &[&str]) -> Result<BatchRead<Option<String>>> {
        let mut out = BatchRead::default();
        if keys.is_empty() {
            return Ok(out);
        }
        self.counters.read();
        let inner = self.inner.read();
        for &key in keys {
            if inner.vectors.contains_key(key) {
                out.found.push((key.to_owned(), inner.payloads.get(key).cloned()));
            } else {
                out.missing.push(key.to_owned());
            }
        }
        Ok(out)
    }

    fn missing_keys(&self, keys: &[&str]) -> Result<Vec<String>> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        self.counters.read();
        let inner = self.inner.read();
        Ok(keys
            .iter()
            .filter(|k| !inner.vectors.contains_key(**k))
            .map(|k| (*k).to_owned())
            .collect())
    }

    fn remove_batch(&self, keys: &[&str]) -> Result<usize> {
        if keys.is_empty() {
            return Ok(0);
        }
        self.counters.write();
        let mut inner = self.inner.write();
        let mut removed = 0;
        for &key in keys {
            if inner.vectors.remove(key).is_some() {
                removed += 1;
            }
            inner.payloads.remove(key);
        }
        Ok(removed)
    }

    fn keys(&self) -> Result<Vec<String>> {
        let mut keys: Vec<String> = self.inner.read().vectors.keys().cloned().collect();
        keys.sort_unstable();
        Ok(keys)
    }

    fn stats(&self) -> StoreStats {
        self.counters.snapshot(self.inner.read().vectors.len(), self.dimension)
    }
}
