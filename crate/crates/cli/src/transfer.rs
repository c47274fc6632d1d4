//! Snapshot export and import.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use burrow::index::{GRAPH_FILE, STORE_FILE};
use burrow::snapshot::{load_index, parse_header};
use burrow::{CacheConfig, DiskStore, Index, VectorStore};
use clap::Args;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::{emit, index_exists, open_index};

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Snapshot file to write.
    #[arg(long)]
    pub file: PathBuf,
    /// Include vectors and texts; without it the snapshot holds topology
    /// only and loads against the same store.
    #[arg(long)]
    pub include_vectors: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Index directory. A new directory is created from a full snapshot;
    /// an existing index accepts a topology-only snapshot of its own store.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub file: PathBuf,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ExportRecord {
    record: &'static str,
    index: String,
    file: String,
    bytes: u64,
    nodes: usize,
    vectors_included: bool,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ImportRecord {
    record: &'static str,
    index: String,
    file: String,
    count: usize,
    dimension: usize,
    vectors_included: bool,
    removed_orphans: usize,
}

pub fn export(args: ExportArgs, out: &mut dyn Write) -> CliResult {
    let index = open_index(&args.index, None)?;
    let written = (|| -> CliResult<u64> {
        let mut sink = BufWriter::with_capacity(1 << 20, File::create(&args.file)?);
        index.export(args.include_vectors, &mut sink)?;
        let file = sink.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(file.metadata()?.len())
    })();
    let bytes = match written {
        Ok(bytes) => bytes,
        Err(err) => {
            let _ = fs::remove_file(&args.file);
            return Err(err.context(args.file.display()));
        }
    };
    emit(
        out,
        &ExportRecord {
            record: "export",
            index: args.index.display().to_string(),
            file: args.file.display().to_string(),
            bytes,
            nodes: index.len(),
            vectors_included: args.include_vectors,
        },
    )
}

pub fn import(args: ImportArgs, out: &mut dyn Write) -> CliResult {
    let file = File::open(&args.file).map_err(|e| CliError::from(e).context(args.file.display()))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut head = Vec::new();
    reader.read_until(b'\n', &mut head)?;
    let header_line = head.strip_suffix(b"\n").unwrap_or(&head);
    let header = parse_header(header_line).map_err(|e| CliError::from(e).context(args.file.display()))?;
    let source = Cursor::new(head.clone()).chain(reader);

    let (index, removed) = if index_exists(&args.index) {
        if header.vectors_included {
            return Err(CliError::user(format!(
                "{} already holds an index; import a full snapshot into a new directory",
                args.index.display()
            )));
        }
        into_existing(&args.index, source)?
    } else {
        if args.index.join(GRAPH_FILE).exists() {
            return Err(CliError::user(format!("{} has a graph but no store", args.index.display())));
        }
        let created_dir = !args.index.exists();
        match into_new(&args.index, header.dimension, source) {
            Ok(index) => (index, 0),
            Err(err) => {
                let cleanup = if created_dir {
                    fs::remove_dir_all(&args.index)
                } else {
                    fs::remove_file(args.index.join(STORE_FILE))
                };
                if let Err(e) = cleanup {
                    eprintln!("warning: could not clean up {}: {e}", args.index.display());
                }
                return Err(err.context(args.file.display()));
            }
        }
    };
    emit(
        out,
        &ImportRecord {
            record: "import",
            index: args.index.display().to_string(),
            file: args.file.display().to_string(),
            count: index.len(),
            dimension: index.dimension(),
            vectors_included: header.vectors_included,
            removed_orphans: removed,
        },
    )
}

fn into_new(dir: &Path, dimension: usize, source: impl Read) -> CliResult<Index> {
    let store: Arc<dyn VectorStore> = Arc::new(DiskStore::open(dir, dimension)?);
    let graph = load_index(source, &*store)?;
    let index = Index::from_parts(graph, store, CacheConfig::for_dimension(dimension))?;
    index.save_dir(dir)?;
    Ok(index)
}

/// Replaces the graph of an existing index; store records the snapshot
/// does not reference are dropped.
fn into_existing(dir: &Path, source: impl Read) -> CliResult<(Index, usize)> {
    let store = DiskStore::open_existing(dir)?;
    let graph = load_index(source, &store).map_err(|e| CliError::from(e).context(dir.display()))?;
    let dimension = graph.dimension();
    let index = Index::from_parts(graph, Arc::new(store), CacheConfig::for_dimension(dimension))?;
    let removed = index.remove_orphans()?;
    index.save_dir(dir)?;
    Ok((index, removed))
}
