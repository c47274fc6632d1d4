//! Named collections persisted under a data directory.
//!
//! Each collection is an index directory (`<data>/collections/<name>/`).
//! Builds run one at a time per collection on a blocking thread that holds
//! the collection's write lock; queries take the read lock, so they wait for
//! a running build and otherwise proceed concurrently.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};
use std::sync::Arc;

use burrow::snapshot::{parse_header, SnapshotLoader};
use burrow::{
    CacheConfig, ConsistencyReport, DiskStore, DistanceMetric, Error, HnswConfig, HnswParams, Index, SearchResult,
    StoreRecord, Vector, VectorStore,
};
use bytes::Bytes;
use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::{mpsc, watch, RwLock};
use tokio::task::JoinHandle;

use crate::error::ApiError;

const COLLECTIONS_DIR: &str = "collections";
const PROGRESS_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildState {
    Idle,
    Running,
    Completed,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildStatus {
    pub state: BuildState,
    pub inserted: usize,
    pub total: usize,
    /// `inserted / total`, 1 when there is nothing to do.
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BuildStatus {
    fn idle() -> Self {
        Self {
            state: BuildState::Idle,
            inserted: 0,
            total: 0,
            progress: 0.0,
            error: None,
        }
    }

    fn at(state: BuildState, inserted: usize, total: usize) -> Self {
        let progress = if total == 0 { 1.0 } else { inserted as f64 / total as f64 };
        Self {
            state,
            inserted,
            total,
            progress,
            error: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Descriptor {
    pub name: String,
    pub dimension: usize,
    pub metric: DistanceMetric,
    pub m: usize,
    pub m_max0: usize,
    pub ef_construction: usize,
    pub ml: f64,
    pub seed: u64,
    pub count: usize,
    pub max_level: i64,
    pub building: bool,
}

/// One document to add. Without a vector, the text is embedded first.
#[derive(Debug, Clone)]
pub struct Document {
    pub key: String,
    pub vector: Vector,
    pub text: Option<String>,
}

pub struct Collection {
    name: String,
    dir: PathBuf,
    config: HnswConfig,
    dimension: usize,
    index: Arc<RwLock<Index>>,
    count: AtomicUsize,
    max_level: AtomicI64,
    building: AtomicBool,
    cancel: Arc<AtomicBool>,
    status: watch::Sender<BuildStatus>,
    task: Mutex<Option<JoinHandle<()>>>,
}

impl Collection {
    fn new(name: String, dir: PathBuf, index: Index) -> Self {
        Self {
            config: index.graph().config().clone(),
            dimension: index.dimension(),
            count: AtomicUsize::new(index.len()),
            max_level: AtomicI64::new(index.graph().max_level()),
            index: Arc::new(RwLock::new(index)),
            name,
            dir,
            building: AtomicBool::new(false),
            cancel: Arc::new(AtomicBool::new(false)),
            status: watch::Sender::new(BuildStatus::idle()),
            task: Mutex::new(None),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn descriptor(&self) -> Descriptor {
        let c = &self.config;
        Descriptor {
            name: self.name.clone(),
            dimension: self.dimension,
            metric: c.metric,
            m: c.m,
            m_max0: c.m_max0,
            ef_construction: c.ef_construction,
            ml: c.ml,
            seed: c.seed,
            count: self.count.load(Ordering::Acquire),
            max_level: self.max_level.load(Ordering::Acquire),
            building: self.building.load(Ordering::Acquire),
        }
    }

    pub fn build_status(&self) -> BuildStatus {
        self.status.borrow().clone()
    }

    /// Resolves once the current build, if any, has finished.
    pub async fn wait_for_build(&self) -> BuildStatus {
        let mut rx = self.status.subscribe();
        let status = rx
            .wait_for(|s| s.state != BuildState::Running)
            .await
            .map(|s| s.clone());
        status.unwrap_or_else(|_| self.build_status())
    }

    /// Validates `docs` and starts a background build. Errors that concern
    /// the request are reported here, before anything is written.
    pub async fn start_build(self: &Arc<Self>, docs: Vec<Document>) -> Result<usize, ApiError> {
        if self
            .building
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(ApiError::conflict(
                "build_in_progress",
                format!("collection {:?} is already building", self.name),
            ));
        }
        if let Err(err) = self.validate(&docs).await {
            self.building.store(false, Ordering::Release);
            return Err(err);
        }
        let total = docs.len();
        self.cancel.store(false, Ordering::Release);
        self.status.send_replace(BuildStatus::at(BuildState::Running, 0, total));

        let this = Arc::clone(self);
        let handle = tokio::spawn(async move {
            let worker = Arc::clone(&this);
            let outcome = tokio::task::spawn_blocking(move || worker.build(docs)).await;
            let status = match outcome {
                Ok(status) => status,
                Err(join) => BuildStatus {
                    error: Some(format!("build task failed: {join}")),
                    ..BuildStatus::at(BuildState::Failed, 0, total)
                },
            };
            this.building.store(false, Ordering::Release);
            this.status.send_replace(status);
        });
        *self.task.lock() = Some(handle);
        Ok(total)
    }

    async fn validate(&self, docs: &[Document]) -> Result<(), ApiError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in docs {
            if doc.key.is_empty() {
                return Err(ApiError::bad_request("document keys must be non-empty"));
            }
            if !seen.insert(doc.key.as_str()) {
                return Err(Error::DuplicateKey(doc.key.clone()).into());
            }
            if doc.vector.dimension() != self.dimension {
                return Err(ApiError::from(Error::Dimension {
                    expected: self.dimension,
                    actual: doc.vector.dimension(),
                }));
            }
            self.config.metric.validate(&doc.vector)?;
        }
        let index = self.index.read().await;
        if let Some(doc) = docs.iter().find(|d| index.graph().contains(&d.key)) {
            return Err(Error::DuplicateKey(doc.key.clone()).into());
        }
        Ok(())
    }

    /// Runs on a blocking thread.
    fn build(&self, docs: Vec<Document>) -> BuildStatus {
        let mut index = self.index.blocking_write();
        let records: Vec<StoreRecord<'_>> = docs
            .iter()
            .map(|d| StoreRecord::new(&d.key, &d.vector).with_payload(d.text.as_deref()))
            .collect();
        let total = records.len();
        let outcome = index.bulk_insert_with(&records, |p| {
            if p.inserted % PROGRESS_EVERY == 0 || p.inserted == p.total {
                self.status
                    .send_replace(BuildStatus::at(BuildState::Running, p.inserted, p.total));
            }
            if self.cancel.load(Ordering::Acquire) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        // whatever was linked is consistent with the store: persist it
        let saved = index.save_dir(&self.dir);
        self.count.store(index.len(), Ordering::Release);
        self.max_level.store(index.graph().max_level(), Ordering::Release);

        let failed = |inserted: usize, err: String| BuildStatus {
            error: Some(err),
            ..BuildStatus::at(BuildState::Failed, inserted, total)
        };
        match (outcome, saved) {
            (Ok(o), Ok(())) if o.cancelled => BuildStatus::at(BuildState::Cancelled, o.inserted, total),
            (Ok(o), Ok(())) => BuildStatus::at(BuildState::Completed, o.inserted, total),
            (Ok(o), Err(e)) => failed(o.inserted, format!("could not persist the graph: {e}")),
            (Err(e), _) => failed(0, e.to_string()),
        }
    }

    pub async fn query(self: &Arc<Self>, vector: Vector, k: usize, ef: Option<usize>) -> Result<QueryResult, ApiError> {
        let this = Arc::clone(self);
        blocking(move || {
            let index = this.index.blocking_read();
            let result = index.query(&vector, k, ef)?;
            let texts = index.texts(&result.keys)?;
            Ok(QueryResult { result, texts })
        })
        .await
    }

    pub async fn consistency(self: &Arc<Self>) -> Result<ConsistencyReport, ApiError> {
        let this = Arc::clone(self);
        blocking(move || Ok(this.index.blocking_read().consistency()?)).await
    }

    /// Streams a snapshot through `tx` in chunks.
    pub fn export(self: &Arc<Self>, include_vectors: bool, tx: mpsc::Sender<io::Result<Bytes>>) {
        let this = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let index = this.index.blocking_read();
            let mut sink = io::BufWriter::with_capacity(64 * 1024, ChannelWriter { tx: tx.clone() });
            let result = index.export(include_vectors, &mut sink).and_then(|_| Ok(sink.flush()?));
            if let Err(err) = result {
                tracing::warn!(collection = %this.name, %err, "export aborted");
                let _ = tx.blocking_send(Err(io::Error::other(err.to_string())));
            }
        });
    }

    /// Asks a running build to stop after the current insertion.
    pub fn request_cancel(&self) {
        if self.building.load(Ordering::Acquire) {
            self.cancel.store(true, Ordering::Release);
        }
    }

    fn cancel(&self) -> Option<JoinHandle<()>> {
        self.cancel.store(true, Ordering::Release);
        self.task.lock().take()
    }
}

#[derive(Debug, Clone)]
pub struct QueryResult {
    pub result: SearchResult,
    pub texts: Vec<Option<String>>,
}

/// `io::Write` adapter feeding an async body stream.
struct ChannelWriter {
    tx: mpsc::Sender<io::Result<Bytes>>,
}

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .blocking_send(Ok(Bytes::copy_from_slice(buf)))
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "client went away"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Collection names: 1 to 64 ASCII letters, digits, `-` or `_`.
pub fn validate_name(name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!(
            "invalid collection name {name:?}: use 1-64 letters, digits, '-' or '_'"
        )))
    }
}

pub struct Registry {
    root: PathBuf,
    collections: parking_lot::RwLock<BTreeMap<String, Arc<Collection>>>,
    /// Names being created or imported but not registered yet.
    reserved: Mutex<HashSet<String>>,
}

/// Releases a reserved name when creation ends, successfully or not.
struct Reservation<'r> {
    registry: &'r Registry,
    name: String,
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        self.registry.reserved.lock().remove(&self.name);
    }
}

impl Registry {
    /// Opens every collection under `data_dir`. Vectors left behind by a
    /// build that was interrupted are removed; a collection whose creation
    /// never completed is deleted.
    pub fn open(data_dir: impl AsRef<Path>) -> burrow::Result<Self> {
        let root = data_dir.as_ref().join(COLLECTIONS_DIR);
        fs::create_dir_all(&root)?;
        let mut collections = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(&root)?.collect::<io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let dir = entry.path();
            let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
                continue;
            };
            if !dir.is_dir() || validate_name(&name).is_err() {
                continue;
            }
            match Index::open_dir(&dir, None) {
                Ok((index, removed)) => {
                    if removed > 0 {
                        tracing::warn!(collection = %name, removed, "rolled back an interrupted build");
                    }
                    tracing::info!(collection = %name, count = index.len(), "opened collection");
                    collections.insert(name.clone(), Arc::new(Collection::new(name, dir, index)));
                }
                Err(Error::IncompleteBuild(msg)) => {
                    tracing::warn!(collection = %name, %msg, "removing a collection whose creation never completed");
                    fs::remove_dir_all(&dir)?;
                }
                Err(err) => {
                    tracing::error!(collection = %name, %err, "skipping unreadable collection");
                }
            }
        }
        Ok(Self {
            root,
            collections: parking_lot::RwLock::new(collections),
            reserved: Mutex::new(HashSet::new()),
        })
    }

    pub fn get(&self, name: &str) -> Result<Arc<Collection>, ApiError> {
        self.collections
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("collection {name:?}")))
    }

    pub fn list(&self) -> Vec<Descriptor> {
        self.collections.read().values().map(|c| c.descriptor()).collect()
    }

    fn reserve(&self, name: &str) -> Result<Reservation<'_>, ApiError> {
        validate_name(name)?;
        let mut reserved = self.reserved.lock();
        if self.collections.read().contains_key(name) || reserved.contains(name) || self.root.join(name).exists() {
            return Err(ApiError::conflict(
                "collection_exists",
                format!("collection {name:?} already exists"),
            ));
        }
        reserved.insert(name.to_owned());
        Ok(Reservation {
            registry: self,
            name: name.to_owned(),
        })
    }

    fn register(&self, name: &str, dir: PathBuf, index: Index) -> Descriptor {
        let collection = Arc::new(Collection::new(name.to_owned(), dir, index));
        let descriptor = collection.descriptor();
        self.collections.write().insert(name.to_owned(), collection);
        descriptor
    }

    pub async fn create(
        self: &Arc<Self>,
        name: &str,
        dimension: usize,
        metric: DistanceMetric,
        params: HnswParams,
    ) -> Result<Descriptor, ApiError> {
        let _reservation = self.reserve(name)?;
        let config = params.resolve(metric)?;
        if dimension == 0 {
            return Err(ApiError::from(Error::InvalidConfig("dimension must be at least 1".into())));
        }
        let dir = self.root.join(name);
        let index = {
            let dir = dir.clone();
            blocking(move || Ok(Index::create_dir(&dir, config, dimension, CacheConfig::for_dimension(dimension))?))
                .await
        };
        match index {
            Ok(index) => Ok(self.register(name, dir, index)),
            Err(err) => {
                let _ = fs::remove_dir_all(&dir);
                Err(err)
            }
        }
    }

    /// Creates collection `name` from a snapshot arriving through `chunks`.
    pub async fn import(
        self: &Arc<Self>,
        name: &str,
        mut chunks: mpsc::Receiver<io::Result<Bytes>>,
    ) -> Result<Descriptor, ApiError> {
        let _reservation = self.reserve(name)?;
        let dir = self.root.join(name);
        let worker_dir = dir.clone();
        let result = blocking(move || {
            let mut head = Vec::new();
            // the header fixes the store dimension, so read up to its newline first
            let rest = loop {
                let Some(chunk) = chunks.blocking_recv() else {
                    return Err(ApiError::from(Error::Parse {
                        line: 1,
                        message: "empty snapshot: no header record".into(),
                    }));
                };
                let chunk = chunk.map_err(|e| ApiError::bad_request(format!("reading the request body failed: {e}")))?;
                if let Some(pos) = chunk.iter().position(|&b| b == b'\n') {
                    head.extend_from_slice(&chunk[..pos]);
                    break chunk.slice(pos..);
                }
                head.extend_from_slice(&chunk);
                if head.len() > burrow::snapshot::DEFAULT_MAX_RECORD_BYTES {
                    return Err(ApiError::from(Error::Parse {
                        line: 1,
                        message: "header record too long".into(),
                    }));
                }
            };
            let header = parse_header(&head)?;
            header.config().validate().map_err(|e| Error::SnapshotCorruption(e.to_string()))?;
            let store: Arc<dyn VectorStore> = Arc::new(DiskStore::open(&worker_dir, header.dimension)?);
            let graph = {
                let mut loader = SnapshotLoader::new(&*store);
                loader.feed(&head)?;
                loader.feed(&rest)?;
                while let Some(chunk) = chunks.blocking_recv() {
                    let chunk =
                        chunk.map_err(|e| ApiError::bad_request(format!("reading the request body failed: {e}")))?;
                    loader.feed(&chunk)?;
                }
                loader.finish()?
            };
            let dimension = graph.dimension();
            let index = Index::from_parts(graph, store, CacheConfig::for_dimension(dimension))?;
            index.save_dir(&worker_dir)?;
            Ok(index)
        })
        .await;
        match result {
            Ok(index) => Ok(self.register(name, dir, index)),
            Err(err) => {
                if dir.exists() {
                    if let Err(e) = fs::remove_dir_all(&dir) {
                        tracing::warn!(dir = %dir.display(), %e, "could not clean up a failed import");
                    }
                }
                Err(err)
            }
        }
    }

    /// Cancels running builds and waits for them to roll back and persist.
    pub async fn shutdown(&self) {
        let handles: Vec<_> = self.collections.read().values().filter_map(|c| c.cancel()).collect();
        for handle in handles {
            let _ = handle.await;
        }
    }
}
