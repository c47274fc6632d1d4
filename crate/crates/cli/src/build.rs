use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::time::Instant;

use burrow::index::{GRAPH_FILE, STORE_FILE};
use burrow::{CacheConfig, CacheStats, DistanceMetric, HnswParams, Index, StoreRecord, StoreStats};
use clap::Args;
use serde::Serialize;

use crate::corpus::{CorpusReader, CorpusRecord};
use crate::error::{CliError, CliResult};
use crate::{emit, MetricArg};

/// Records inserted per batch; the graph is persisted after each one.
pub const CHUNK: usize = 10_000;

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus file: one {"key", "vector", "text"?} object per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Index directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    pub metric: MetricArg,
    /// Links per node above layer 0 (layer 0 allows 2M).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub ef_construction: Option<usize>,
    /// Seed for level assignment.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Vectors read from the store per cache miss.
    #[arg(long)]
    pub p: Option<usize>,
    /// Vectors the cache may hold (default 8p).
    #[arg(long)]
    pub cache_capacity: Option<usize>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BuildRecord {
    record: &'static str,
    index: String,
    count: usize,
    dimension: usize,
    metric: DistanceMetric,
    m: usize,
    m_max0: usize,
    ef_construction: usize,
    seed: u64,
    max_level: i64,
    level_histogram: Vec<usize>,
    elapsed_ms: f64,
    store: StoreStats,
    cache: CacheStats,
}

pub fn run(args: BuildArgs, out: &mut dyn Write) -> CliResult {
    if args.out.join(STORE_FILE).exists() || args.out.join(GRAPH_FILE).exists() {
        return Err(CliError::user(format!("{} already holds an index", args.out.display())));
    }
    let metric = DistanceMetric::from(args.metric);
    let config = HnswParams {
        m: args.m,
        m_max0: None,
        ef_construction: args.ef_construction,
        ml: None,
        seed: args.seed,
    }
    .resolve(metric)?;

    let file = File::open(&args.input).map_err(|e| CliError::from(e).context(args.input.display()))?;
    let mut reader = CorpusReader::new(BufReader::with_capacity(1 << 20, file), metric);
    let started = Instant::now();
    let first = reader.next_chunk(CHUNK).map_err(|e| e.context(args.input.display()))?;
    let Some(dimension) = reader.dimension() else {
        return Err(CliError::user(format!("{} has no records", args.input.display())));
    };
    let cache = CacheConfig::resolve(dimension, args.p, args.cache_capacity)?;

    let created_dir = !args.out.exists();
    let result = build(&args, &mut reader, first, config, dimension, cache);
    let index = match result {
        Ok(index) => index,
        Err(err) => {
            discard(&args.out, created_dir);
            return Err(err);
        }
    };
    let elapsed = started.elapsed();
    let graph = index.graph();
    let c = graph.config();
    emit(
        out,
        &BuildRecord {
            record: "build",
            index: args.out.display().to_string(),
            count: index.len(),
            dimension,
            metric,
            m: c.m,
            m_max0: c.m_max0,
            ef_construction: c.ef_construction,
            seed: c.seed,
            max_level: graph.max_level(),
            level_histogram: graph.level_histogram(),
            elapsed_ms: elapsed.as_secs_f64() * 1e3,
            store: index.store().stats(),
            cache: index.cache().stats(),
        },
    )
}

fn build(
    args: &BuildArgs,
    reader: &mut CorpusReader<BufReader<File>>,
    first: Vec<CorpusRecord>,
    config: burrow::HnswConfig,
    dimension: usize,
    cache: CacheConfig,
) -> CliResult<Index> {
    let started = Instant::now();
    let mut index = Index::create_dir(&args.out, config, dimension, cache)?;
    let mut chunk = first;
    while !chunk.is_empty() {
        let records: Vec<StoreRecord<'_>> = chunk
            .iter()
            .map(|r| StoreRecord::new(&r.key, &r.vector).with_payload(r.text.as_deref()))
            .collect();
        index.bulk_insert(&records)?;
        index.save_dir(&args.out)?;
        eprintln!(
            "inserted {} records ({:.1}s)",
            index.len(),
            started.elapsed().as_secs_f64()
        );
        chunk = reader.next_chunk(CHUNK).map_err(|e| e.context(args.input.display()))?;
    }
    Ok(index)
}

/// Removes what a failed build created.
fn discard(dir: &std::path::Path, created_dir: bool) {
    let result = if created_dir {
        fs::remove_dir_all(dir)
    } else {
        [STORE_FILE, GRAPH_FILE]
            .iter()
            .map(|f| dir.join(f))
            .filter(|p| p.exists())
            .try_for_each(fs::remove_file)
    };
    if let Err(e) = result {
        eprintln!("warning: could not clean up {}: {e}", dir.display());
    }
}
