//! An [`HnswGraph`] bundled with its store and cache, plus on-disk layout.
//!
//! An index directory holds two things: `vectors.redb` (the [`DiskStore`])
//! and `graph.ndjson`, a topology-only snapshot. The snapshot is replaced
//! atomically after each completed build, so the directory always holds a
//! graph whose every key is in the store. Vectors written by a build that
//! never finished are orphans; [`Index::open_dir`] removes them.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::cache::{CacheConfig, PrefetchCache};
use crate::error::{Error, Result};
use crate::hnsw::{BuildOutcome, BuildProgress, HnswConfig, HnswGraph, SearchResult};
use crate::snapshot::{export_index, load_index};
use crate::store::{DiskStore, StoreRecord, VectorStore};
use crate::vector::Vector;

pub const GRAPH_FILE: &str = "graph.ndjson";
pub const STORE_FILE: &str = "vectors.redb";

/// Key-set comparison between graph and store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub graph_keys: usize,
    pub store_keys: usize,
    /// In the graph but not in the store. Queries touching them fail.
    pub missing_from_store: Vec<String>,
    /// In the store but not linked into the graph.
    pub orphaned_in_store: Vec<String>,
}

pub struct Index {
    graph: HnswGraph,
    store: Arc<dyn VectorStore>,
    cache: PrefetchCache,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("len", &self.graph.len())
            .field("dimension", &self.graph.dimension())
            .field("config", self.graph.config())
            .field("cache", &self.cache.config())
            .finish()
    }
}

impl Index {
    /// Empty index over `store`, which must be empty too.
    pub fn new(config: HnswConfig, store: Arc<dyn VectorStore>, cache: CacheConfig) -> Result<Self> {
        if !store.is_empty()? {
            return Err(Error::Argument("a new index needs an empty store".into()));
        }
        let graph = HnswGraph::new(config, store.dimension())?;
        Self::from_parts(graph, store, cache)
    }

    pub fn from_parts(graph: HnswGraph, store: Arc<dyn VectorStore>, cache: CacheConfig) -> Result<Self> {
        if graph.dimension() != store.dimension() {
            return Err(Error::StoreSchema(format!(
                "graph dimension {} does not match store dimension {}",
                graph.dimension(),
                store.dimension()
            )));
        }
        Ok(Self {
            graph,
            store,
            cache: PrefetchCache::new(cache)?,
        })
    }

    pub fn graph(&self) -> &HnswGraph {
        &self.graph
    }

    pub fn store(&self) -> &Arc<dyn VectorStore> {
        &self.store
    }

    pub fn cache(&self) -> &PrefetchCache {
        &self.cache
    }

    /// Replaces the cache with an empty one.
    pub fn reset_cache(&mut self, config: CacheConfig) -> Result<()> {
        self.cache = PrefetchCache::new(config)?;
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.graph.dimension()
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn insert(&mut self, key: &str, vector: &Vector) -> Result<()> {
        self.graph.insert(key, vector, &*self.store, &self.cache)
    }

    pub fn bulk_insert(&mut self, records: &[StoreRecord<'_>]) -> Result<()> {
        self.graph.bulk_insert(records, &*self.store, &self.cache)
    }

    pub fn bulk_insert_with<F>(&mut self, records: &[StoreRecord<'_>], on_progress: F) -> Result<BuildOutcome>
    where
        F: FnMut(BuildProgress) -> ControlFlow<()>,
    {
        self.graph.bulk_insert_with(records, &*self.store, &self.cache, on_progress)
    }

    pub fn query(&self, query: &Vector, k: usize, ef: Option<usize>) -> Result<SearchResult> {
        self.graph.query(query, k, ef, &*self.store, &self.cache)
    }

    /// Document texts for `keys`, aligned by position.
    pub fn texts(&self, keys: &[String]) -> Result<Vec<Option<String>>> {
        let refs: Vec<&str> = keys.iter().map(String::as_str).collect();
        let read = self.store.get_payloads(&refs)?;
        if let Some(key) = read.missing.first() {
            return Err(Error::GraphCorruption(format!("key {key:?} is not in the store")));
        }
        Ok(read.found.into_iter().map(|(_, t)| t).collect())
    }

    pub fn export(&self, include_vectors: bool, sink: &mut dyn Write) -> Result<()> {
        export_index(&self.graph, &*self.store, include_vectors, sink)
    }

    pub fn consistency(&self) -> Result<ConsistencyReport> {
        let store_keys = self.store.keys()?;
        let stored: HashSet<&str> = store_keys.iter().map(String::as_str).collect();
        let mut missing: Vec<String> = self
            .graph
            .keys()
            .filter(|k| !stored.contains(k))
            .map(str::to_owned)
            .collect();
        missing.sort_unstable();
        let orphaned: Vec<String> = store_keys
            .iter()
            .filter(|k| !self.graph.contains(k))
            .cloned()
            .collect();
        Ok(ConsistencyReport {
            consistent: missing.is_empty() && orphaned.is_empty(),
            graph_keys: self.graph.len(),
            store_keys: store_keys.len(),
            missing_from_store: missing,
            orphaned_in_store: orphaned,
        })
    }

    /// Removes store records that are not linked into the graph.
    pub fn remove_orphans(&self) -> Result<usize> {
        if self.store.len()? == self.graph.len() {
            return Ok(0);
        }
        let orphans = self.consistency()?.orphaned_in_store;
        let refs: Vec<&str> = orphans.iter().map(String::as_str).collect();
        self.store.remove_batch(&refs)
    }

    /// Creates an index directory. Fails if `dir` already holds a store.
    pub fn create_dir(dir: impl AsRef<Path>, config: HnswConfig, dimension: usize, cache: CacheConfig) -> Result<Self> {
        let dir = dir.as_ref();
        if dir.join(STORE_FILE).exists() || dir.join(GRAPH_FILE).exists() {
            return Err(Error::Argument(format!("{} already holds an index", dir.display())));
        }
        config.validate()?;
        let store = DiskStore::open(dir, dimension)?;
        let index = Self::new(config, Arc::new(store), cache)?;
        index.save_dir(dir)?;
        Ok(index)
    }

    /// Opens an index directory written by [`Index::create_dir`] and
    /// [`Index::save_dir`], dropping any orphaned store records.
    ///
    /// A store without a graph snapshot means the first build never
    /// completed: that is [`Error::IncompleteBuild`].
    pub fn open_dir(dir: impl AsRef<Path>, cache: Option<CacheConfig>) -> Result<(Self, usize)> {
        let dir = dir.as_ref();
        if !dir.join(STORE_FILE).exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} is not an index directory", dir.display()),
            )));
        }
        let graph_path = dir.join(GRAPH_FILE);
        if !graph_path.exists() {
            return Err(Error::IncompleteBuild(format!(
                "{} has a vector store but no graph; the build did not complete",
                dir.display()
            )));
        }
        let store = DiskStore::open_existing(dir)?;
        let graph = {
            // load checks every graph key against the store
            let file = BufReader::new(File::open(&graph_path)?);
            load_index(file, &store)?
        };
        let cache = cache.unwrap_or_else(|| CacheConfig::for_dimension(graph.dimension()));
        let index = Self::from_parts(graph, Arc::new(store), cache)?;
        let removed = index.remove_orphans()?;
        if removed > 0 {
            tracing::warn!(removed, dir = %dir.display(), "removed vectors of an unfinished build");
        }
        Ok((index, removed))
    }

    /// Atomically replaces the directory's graph snapshot with the current
    /// topology.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tmp = dir.join(format!("{GRAPH_FILE}.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            self.export(false, &mut out)?;
            let file = out.into_inner().map_err(|e| e.into_error())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, dir.join(GRAPH_FILE))?;
        sync_dir(dir)?;
        Ok(())
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    #[cfg(unix)]
    File::open(dir)?.sync_all()?;
    #[cfg(not(unix))]
    let _ = dir;
    Ok(())
}

/// Path of the graph snapshot inside an index directory.
pub fn graph_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(GRAPH_FILE)
}
