//! Line-delimited snapshots of an index.
//!
//! A snapshot is UTF-8 text with one JSON object per line: a header, one
//! node record per graph node sorted by key, and, when vectors are
//! included, one vector record per node sorted by key. FORMAT.md in the
//! repository root describes every field.
//!
//! [`SnapshotLoader`] accepts the byte stream in arbitrary chunks and keeps
//! at most one partial record buffered, so a snapshot far larger than RAM
//! can be loaded as long as the graph topology fits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cache::default_p;
use crate::error::{Error, Result};
use crate::hnsw::{HnswConfig, HnswGraph};
use crate::store::{StoreRecord, VectorStore};
use crate::vector::{DistanceMetric, Vector};

pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on a single record line.
pub const DEFAULT_MAX_RECORD_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub dimension: usize,
    pub metric: DistanceMetric,
    pub m: usize,
    pub m_max0: usize,
    pub ef_construction: usize,
    pub ml: f64,
    pub seed: u64,
    pub rng_cursor: u64,
    pub entry_point: Option<String>,
    pub max_level: i64,
    pub node_count: usize,
    pub vectors_included: bool,
}

impl SnapshotHeader {
    pub fn config(&self) -> HnswConfig {
        HnswConfig {
            m: self.m,
            m_max0: self.m_max0,
            ef_construction: self.ef_construction,
            ml: self.ml,
            metric: self.metric,
            seed: self.seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Header(SnapshotHeader),
    Node {
        key: String,
        level: usize,
        neighbors: Vec<Vec<String>>,
    },
    Vector {
        key: String,
        vector: Vec<f32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
    },
}

fn header_of(graph: &HnswGraph, vectors_included: bool) -> SnapshotHeader {
    let c = graph.config();
    SnapshotHeader {
        format_version: FORMAT_VERSION,
        dimension: graph.dimension(),
        metric: c.metric,
        m: c.m,
        m_max0: c.m_max0,
        ef_construction: c.ef_construction,
        ml: c.ml,
        seed: c.seed,
        rng_cursor: graph.rng_cursor(),
        entry_point: graph.entry_point().map(str::to_owned),
        max_level: graph.max_level(),
        node_count: graph.len(),
        vectors_included,
    }
}

fn write_record(sink: &mut dyn Write, record: &Record) -> Result<()> {
    serde_json::to_writer(&mut *sink, record).map_err(|e| Error::Io(e.into()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Writes a snapshot of `graph` to `sink`. With `include_vectors`, vectors
/// and document texts are read from `store` in batches and appended.
///
/// The output depends only on the graph (and the stored vectors), so two
/// exports without an intervening insert are byte-identical.
pub fn export_index(
    graph: &HnswGraph,
    store: &dyn VectorStore,
    include_vectors: bool,
    sink: &mut dyn Write,
) -> Result<()> {
    write_record(sink, &Record::Header(header_of(graph, include_vectors)))?;
    let mut keys: Vec<&str> = graph.keys().collect();
    keys.sort_unstable();
    for &key in &keys {
        let node = graph.node_view(key).expect("key comes from the graph");
        let neighbors = (0..=node.level())
            .map(|l| node.neighbors(l).map(str::to_owned).collect())
            .collect();
        write_record(
            sink,
            &Record::Node {
                key: key.to_owned(),
                level: node.level(),
                neighbors,
            },
        )?;
    }
    if include_vectors {
        for chunk in keys.chunks(default_p(graph.dimension())) {
            let vectors = store.get_batch(chunk)?;
            let texts = store.get_payloads(chunk)?;
            if let Some(key) = vectors.missing.first() {
                return Err(Error::GraphCorruption(format!("key {key:?} is in the graph but not in the store")));
            }
            for ((key, vector), (_, text)) in vectors.found.into_iter().zip(texts.found) {
                write_record(
                    sink,
                    &Record::Vector {
                        key,
                        vector: vector.to_f32()?,
                        text,
                    },
                )?;
            }
        }
    }
    sink.flush()?;
    Ok(())
}

/// Snapshot as a byte vector.
pub fn export_to_vec(graph: &HnswGraph, store: &dyn VectorStore, include_vectors: bool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    export_index(graph, store, include_vectors, &mut out)?;
    Ok(out)
}

/// Loads a snapshot from a reader; see [`SnapshotLoader`].
pub fn load_index(mut source: impl Read, store: &dyn VectorStore) -> Result<HnswGraph> {
    let mut loader = SnapshotLoader::new(store);
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = match source.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        loader.feed(&buf[..n])?;
    }
    loader.finish()
}

/// Parses and version-checks a header line (the first line of a snapshot,
/// without its newline).
pub fn parse_header(line: &[u8]) -> Result<SnapshotHeader> {
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let parse_error = |message: String| Error::Parse { line: 1, message };
    let value: serde_json::Value = serde_json::from_slice(line).map_err(|e| parse_error(e.to_string()))?;
    if value.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Err(parse_error("first record must be the header".into()));
    }
    match value.get("formatVersion").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                supported: FORMAT_VERSION,
            })
        }
        None => return Err(parse_error("header has no formatVersion".into())),
    }
    serde_json::from_value(value).map_err(|e| parse_error(e.to_string()))
}

#[derive(Debug, PartialEq, Eq)]
enum Phase {
    Header,
    Nodes,
    Vectors,
    Done,
    Failed,
}

/// Incremental snapshot reader.
///
/// Feed it chunks as they arrive, then call [`SnapshotLoader::finish`]. The
/// graph is only returned once every record has been read and validated;
/// on any error, or if the loader is dropped before finishing, vectors it
/// already wrote to the store are removed again.
pub struct SnapshotLoader<'s> {
    store: &'s dyn VectorStore,
    phase: Phase,
    max_record_bytes: usize,
    partial: Vec<u8>,
    line: u64,
    header: Option<SnapshotHeader>,
    nodes: Vec<(String, Vec<Vec<String>>)>,
    vectors_read: usize,
    pending: Vec<(String, Vector, Option<String>)>,
    batch_size: usize,
    written: Vec<String>,
    peak_partial: usize,
    peak_pending: usize,
}

impl<'s> SnapshotLoader<'s> {
    pub fn new(store: &'s dyn VectorStore) -> Self {
        Self {
            store,
            phase: Phase::Header,
            max_record_bytes: DEFAULT_MAX_RECORD_BYTES,
            partial: Vec::new(),
            line: 0,
            header: None,
            nodes: Vec::new(),
            vectors_read: 0,
            pending: Vec::new(),
            batch_size: default_p(store.dimension()),
            written: Vec::new(),
            peak_partial: 0,
            peak_pending: 0,
        }
    }

    /// Rejects any line longer than `bytes`.
    pub fn with_max_record_bytes(mut self, bytes: usize) -> Self {
        self.max_record_bytes = bytes;
        self
    }

    /// Header, once the first line has been read.
    pub fn header(&self) -> Option<&SnapshotHeader> {
        self.header.as_ref()
    }

    /// Largest partial line held between chunks, in bytes.
    pub fn peak_buffered_bytes(&self) -> usize {
        self.peak_partial
    }

    /// Largest number of vectors held before a store write.
    pub fn peak_pending_vectors(&self) -> usize {
        self.peak_pending
    }

    pub fn feed(&mut self, mut chunk: &[u8]) -> Result<()> {
        self.check_usable()?;
        while let Some(pos) = chunk.iter().position(|&b| b == b'\n') {
            let (head, rest) = chunk.split_at(pos);
            chunk = &rest[1..];
            let result = if self.partial.is_empty() {
                self.check_length(head.len()).and_then(|_| self.record(head))
            } else {
                self.check_length(self.partial.len() + head.len()).and_then(|_| {
                    let mut line = std::mem::take(&mut self.partial);
                    line.extend_from_slice(head);
                    let r = self.record(&line);
                    line.clear();
                    self.partial = line;
                    r
                })
            };
            self.guard(result)?;
        }
        let len = self.partial.len() + chunk.len();
        let result = self.check_length(len);
        self.guard(result)?;
        self.partial.extend_from_slice(chunk);
        self.peak_partial = self.peak_partial.max(self.partial.len());
        Ok(())
    }

    /// Validates the whole snapshot and returns the graph.
    pub fn finish(mut self) -> Result<HnswGraph> {
        self.check_usable()?;
        let result = self.complete();
        let graph = self.guard(result)?;
        self.phase = Phase::Done;
        self.written = Vec::new();
        Ok(graph)
    }

    fn complete(&mut self) -> Result<HnswGraph> {
        if !self.partial.is_empty() {
            return Err(Error::Parse {
                line: self.line + 1,
                message: "truncated record: stream ended without a newline".into(),
            });
        }
        let Some(header) = self.header.take() else {
            return Err(Error::Parse {
                line: 1,
                message: "empty snapshot: no header record".into(),
            });
        };
        let expected_lines = 1 + header.node_count * if header.vectors_included { 2 } else { 1 };
        if self.nodes.len() < header.node_count || self.vectors_read < header.node_count && header.vectors_included {
            return Err(Error::Parse {
                line: self.line + 1,
                message: format!(
                    "truncated snapshot: expected {expected_lines} records, read {}",
                    self.line
                ),
            });
        }
        self.flush()?;
        let nodes = std::mem::take(&mut self.nodes);
        let graph = HnswGraph::from_parts(
            header.config(),
            header.dimension,
            header.rng_cursor,
            header.entry_point.as_deref(),
            nodes,
        )
        .map_err(|e| match e {
            Error::GraphCorruption(msg) => Error::SnapshotCorruption(msg),
            other => other,
        })?;
        if graph.max_level() != header.max_level {
            return Err(Error::SnapshotCorruption(format!(
                "header maxLevel {} does not match the entry point's level {}",
                header.max_level,
                graph.max_level()
            )));
        }
        if !header.vectors_included {
            let keys: Vec<&str> = graph.keys().collect();
            for chunk in keys.chunks(self.batch_size.max(1024)) {
                if let Some(key) = self.store.missing_keys(chunk)?.first() {
                    return Err(Error::SnapshotCorruption(format!(
                        "snapshot has no vectors and key {key:?} is not in the store"
                    )));
                }
            }
        }
        Ok(graph)
    }

    fn check_usable(&self) -> Result<()> {
        match self.phase {
            Phase::Failed => Err(Error::Argument("snapshot loader already failed".into())),
            Phase::Done => Err(Error::Argument("snapshot loader already finished".into())),
            _ => Ok(()),
        }
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len > self.max_record_bytes {
            return Err(Error::Parse {
                line: self.line + 1,
                message: format!("record exceeds {} bytes", self.max_record_bytes),
            });
        }
        Ok(())
    }

    /// On error: roll back store writes and refuse further input.
    fn guard<T>(&mut self, result: Result<T>) -> Result<T> {
        if result.is_err() {
            self.phase = Phase::Failed;
            self.rollback();
        }
        result
    }

    fn rollback(&mut self) {
        self.pending.clear();
        if self.written.is_empty() {
            return;
        }
        let keys: Vec<&str> = self.written.iter().map(String::as_str).collect();
        if let Err(err) = self.store.remove_batch(&keys) {
            tracing::warn!(%err, "could not roll back vectors written by a failed snapshot load");
        }
        self.written.clear();
    }

    fn corrupt(&self, message: impl std::fmt::Display) -> Error {
        Error::SnapshotCorruption(format!("line {}: {message}", self.line))
    }

    fn record(&mut self, line: &[u8]) -> Result<()> {
        self.line += 1;
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        let parse_error = |message: String| Error::Parse { line: self.line, message };

        if self.phase == Phase::Header {
            let header = parse_header(line)?;
            return self.accept_header(header);
        }

        let record: Record = serde_json::from_slice(line).map_err(|e| parse_error(e.to_string()))?;
        match record {
            Record::Header(_) => Err(self.corrupt("second header record")),
            Record::Node { key, level, neighbors } => self.accept_node(key, level, neighbors),
            Record::Vector { key, vector, text } => self.accept_vector(key, vector, text),
        }
    }

    fn accept_header(&mut self, header: SnapshotHeader) -> Result<()> {
        header.config().validate().map_err(|e| self.corrupt(e))?;
        if header.dimension != self.store.dimension() {
            return Err(Error::StoreSchema(format!(
                "snapshot dimension {} does not match store dimension {}",
                header.dimension,
                self.store.dimension()
            )));
        }
        self.nodes.reserve(header.node_count.min(1 << 20));
        self.phase = Phase::Nodes;
        self.header = Some(header);
        Ok(())
    }

    fn accept_node(&mut self, key: String, level: usize, neighbors: Vec<Vec<String>>) -> Result<()> {
        let header = self.header.as_ref().expect("header read");
        if self.phase != Phase::Nodes {
            return Err(self.corrupt("node record after vector records"));
        }
        if self.nodes.len() == header.node_count {
            return Err(self.corrupt(format!("more node records than nodeCount {}", header.node_count)));
        }
        if neighbors.len() != level + 1 {
            return Err(self.corrupt(format!(
                "node {key:?} has level {level} but {} neighbor lists",
                neighbors.len()
            )));
        }
        if let Some((prev, _)) = self.nodes.last() {
            if *prev >= key {
                return Err(self.corrupt(format!("node {key:?} is out of order or repeated")));
            }
        }
        self.nodes.push((key, neighbors));
        Ok(())
    }

    fn accept_vector(&mut self, key: String, vector: Vec<f32>, text: Option<String>) -> Result<()> {
        let header = self.header.as_ref().expect("header read");
        if !header.vectors_included {
            return Err(self.corrupt("vector record in a snapshot without vectors"));
        }
        if self.nodes.len() < header.node_count {
            return Err(self.corrupt("vector record before all node records"));
        }
        self.phase = Phase::Vectors;
        // node keys are sorted, so the i-th vector must belong to the i-th node
        let Some((expected, _)) = self.nodes.get(self.vectors_read) else {
            return Err(self.corrupt("more vector records than nodes"));
        };
        if *expected != key {
            return Err(self.corrupt(format!("vector record for {key:?}, expected {expected:?}")));
        }
        if vector.len() != header.dimension {
            return Err(self.corrupt(format!(
                "vector for {key:?} has dimension {}, expected {}",
                vector.len(),
                header.dimension
            )));
        }
        let vector = Vector::from_f32(&vector).map_err(|e| self.corrupt(e))?;
        self.vectors_read += 1;
        self.pending.push((key, vector, text));
        self.peak_pending = self.peak_pending.max(self.pending.len());
        if self.pending.len() >= self.batch_size {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let records: Vec<StoreRecord<'_>> = self
            .pending
            .iter()
            .map(|(k, v, t)| StoreRecord::new(k, v).with_payload(t.as_deref()))
            .collect();
        self.store.put_batch(&records)?;
        self.written.extend(self.pending.drain(..).map(|(k, _, _)| k));
        Ok(())
    }
}

impl Drop for SnapshotLoader<'_> {
    fn drop(&mut self) {
        if self.phase != Phase::Done {
            self.rollback();
        }
    }
}
