use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use redb::{Database, ReadableDatabase, ReadableTable, ReadableTableMetadata, TableDefinition};

use super::{decode, encode, prepare_batch, BatchRead, Counters, StoreRecord, StoreStats, VectorStore};
use crate::error::{Error, Result};
use crate::vector::Vector;

const VECTORS: TableDefinition<&str, &[u8]> = TableDefinition::new("vectors");
const PAYLOADS: TableDefinition<&str, &str> = TableDefinition::new("payloads");
const META: TableDefinition<&str, u64> = TableDefinition::new("meta");

const DIMENSION_KEY: &str = "dimension";
const FILE_NAME: &str = "vectors.redb";

/// Store backed by a single redb file inside a directory.
///
/// Each batch call is one redb transaction, so a batch write is durable and
/// all-or-nothing, and a concurrent batch read sees either all of it or none
/// of it.
pub struct DiskStore {
    db: Database,
    path: PathBuf,
    dimension: usize,
    count: AtomicUsize,
    counters: Counters,
}

impl std::fmt::Debug for DiskStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiskStore")
            .field("path", &self.path)
            .field("dimension", &self.dimension)
            .field("count", &self.count)
            .finish()
    }
}

impl DiskStore {
    /// Opens the store in `dir`, creating it if absent.
    ///
    /// Fails with [`Error::StoreSchema`] if the directory already holds a
    /// store of a different dimension.
    pub fn open(dir: impl AsRef<Path>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(FILE_NAME);
        let db = Database::create(&path)?;

        let txn = db.begin_write()?;
        let count = {
            let mut meta = txn.open_table(META)?;
            let existing = meta.get(DIMENSION_KEY)?.map(|g| g.value());
            match existing {
                Some(stored) if stored as usize != dimension => {
                    return Err(Error::StoreSchema(format!(
                        "store at {} has dimension {stored}, requested {dimension}",
                        dir.display()
                    )));
                }
                Some(_) => {}
                None => {
                    meta.insert(DIMENSION_KEY, dimension as u64)?;
                }
            }
            let vectors = txn.open_table(VECTORS)?;
            txn.open_table(PAYLOADS)?;
            vectors.len()? as usize
        };
        txn.commit()?;

        Ok(Self {
            db,
            path: dir.to_path_buf(),
            dimension,
            count: AtomicUsize::new(count),
            counters: Counters::default(),
        })
    }

    /// Opens an existing store, taking its dimension from disk.
    pub fn open_existing(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no store at {}", dir.display()),
            )));
        }
        let dimension = {
            let db = Database::open(&path)?;
            let txn = db.begin_read()?;
            let meta = txn.open_table(META)?;
            let dimension = meta.get(DIMENSION_KEY)?.map(|g| g.value());
            dimension.ok_or_else(|| Error::StoreSchema(format!("store at {} has no dimension", dir.display())))?
        };
        Self::open(dir, dimension as usize)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl VectorStore for DiskStore {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn len(&self) -> Result<usize> {
        Ok(self.count.load(Ordering::Acquire))
    }

    fn put_batch(&self, records: &[StoreRecord<'_>]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let narrowed = prepare_batch(records, self.dimension)?;
        self.counters.write();
        let txn = self.db.begin_write()?;
        {
            let mut vectors = txn.open_table(VECTORS)?;
            let mut payloads = txn.open_table(PAYLOADS)?;
            for (record, components) in records.iter().zip(&narrowed) {
                if vectors.get(record.key)?.is_some() {
                    // dropping the uncommitted transaction discards the batch
                    return Err(Error::DuplicateKey(record.key.to_owned()));
                }
                vectors.insert(record.key, encode(components).as_slice())?;
                if let Some(text) = record.payload {
                    payloads.insert(record.key, text)?;
                }
            }
        }
        txn.commit()?;
        self.count.fetch_add(records.len(), Ordering::AcqRel);
        Ok(())
    }

    fn get_batch(&self, keys: &[&str]) -> Result<BatchRead<Vector>> {
        let mut out = BatchRead::default();
        if keys.is_empty() {
            return Ok(out);
        }
        self.counters.read();
        let txn = self.db.begin_read()?;
        let vectors = txn.open_table(VECTORS)?;
        out.found.reserve(keys.len());
        for &key in keys {
            match vectors.get(key)? {
                Some(bytes) => out.found.push((key.to_owned(), decode(bytes.value(), self.dimension, key)?)),
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
        let txn = self.db.begin_read()?;
        let vectors = txn.open_table(VECTORS)?;
        let payloads = txn.open_table(PAYLOADS)?;
        for &key in keys {
            if vectors.get(key)?.is_none() {
                out.missing.push(key.to_owned());
                continue;
            }
            let text = payloads.get(key)?.map(|g| g.value().to_owned());
            out.found.push((key.to_owned(), text));
        }
        Ok(out)
    }

    fn missing_keys(&self, keys: &[&str]) -> Result<Vec<String>> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        self.counters.read();
        let txn = self.db.begin_read()?;
        let vectors = txn.open_table(VECTORS)?;
        let mut missing = Vec::new();
        for &key in keys {
            if vectors.get(key)?.is_none() {
                missing.push(key.to_owned());
            }
        }
        Ok(missing)
    }

    fn remove_batch(&self, keys: &[&str]) -> Result<usize> {
        if keys.is_empty() {
            return Ok(0);
        }
        self.counters.write();
        let txn = self.db.begin_write()?;
        let mut removed = 0;
        {
            let mut vectors = txn.open_table(VECTORS)?;
            let mut payloads = txn.open_table(PAYLOADS)?;
            for &key in keys {
                if vectors.remove(key)?.is_some() {
                    removed += 1;
                }
                payloads.remove(key)?;
            }
        }
        txn.commit()?;
        self.count.fetch_sub(removed, Ordering::AcqRel);
        Ok(removed)
    }

    fn keys(&self) -> Result<Vec<String>> {
        let txn = self.db.begin_read()?;
        let vectors = txn.open_table(VECTORS)?;
        let mut keys = Vec::with_capacity(self.count.load(Ordering::Acquire));
        for entry in vectors.iter()? {
            let (key, _) = entry?;
            keys.push(key.value().to_owned());
        }
        Ok(keys)
    }

    fn stats(&self) -> StoreStats {
        self.counters.snapshot(self.count.load(Ordering::Acquire), self.dimension)
    }
}
