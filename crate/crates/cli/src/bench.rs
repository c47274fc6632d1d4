//! Query benchmarks over a grid of `ef` and prefetch sizes `p`.
//!
//! Each cell starts from an empty cache. A cold pass over all queries
//! counts store read transactions and yields the results scored for
//! recall against exhaustive search. A second, warm pass is timed.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use burrow::hnsw::effective_ef;
use burrow::{exact, CacheConfig, DistanceMetric, HnswParams, Index, MemoryStore, StoreRecord, Vector};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::{emit, gen, open_index, MetricArg};

const QUERY_STREAM: u64 = 0x7175_6572_7900;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Synthetic {
    pub n: usize,
    pub dim: usize,
}

impl FromStr for Synthetic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, dim) = s.split_once(',').ok_or("expected N,DIM")?;
        let n = n.trim().parse().map_err(|e| format!("N: {e}"))?;
        let dim: usize = dim.trim().parse().map_err(|e| format!("DIM: {e}"))?;
        if dim == 0 {
            return Err("DIM must be at least 1".into());
        }
        Ok(Self { n, dim })
    }
}

/// A prefetch size, or `default` for the dimension's default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PArg {
    Default,
    Value(usize),
}

impl FromStr for PArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "default" => Ok(PArg::Default),
            v => v.parse().map(PArg::Value).map_err(|e| format!("p: {e}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Records,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("target").required(true))]
pub struct BenchArgs {
    /// Index directory to benchmark.
    #[arg(long, group = "target")]
    pub index: Option<PathBuf>,
    /// Build an in-memory index of N uniform random DIM-dimensional vectors.
    #[arg(long, group = "target", value_name = "N,DIM")]
    pub synthetic: Option<Synthetic>,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    pub ef: Vec<usize>,
    /// Prefetch sizes; `default` stands for the dimension's default.
    #[arg(long, value_delimiter = ',', default_value = "default")]
    pub p: Vec<PArg>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Seed for queries and synthetic data; also the level seed of a
    /// synthetic index.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Metric of a synthetic index.
    #[arg(long, value_enum, default_value = "euclidean-squared")]
    pub metric: MetricArg,
    /// M of a synthetic index.
    #[arg(long)]
    pub m: Option<usize>,
    /// efConstruction of a synthetic index.
    #[arg(long)]
    pub ef_construction: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchRow {
    pub record: &'static str,
    pub target: String,
    pub count: usize,
    pub dimension: usize,
    pub metric: DistanceMetric,
    pub queries: usize,
    pub k: usize,
    pub ef: usize,
    pub effective_ef: usize,
    pub p: usize,
    pub capacity: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub cold_mean_ms: f64,
    pub recall: f64,
    pub transactions_read: u64,
}

struct Workload {
    index: Index,
    label: String,
    queries: Vec<Vector>,
    truth: Vec<Vec<String>>,
}

pub fn run(args: BenchArgs, out: &mut dyn Write) -> CliResult {
    if args.k == 0 {
        return Err(CliError::user("--k must be at least 1"));
    }
    if let Some(ef) = args.ef.iter().find(|&&ef| ef == 0) {
        return Err(CliError::user(format!("--ef values must be positive, got {ef}")));
    }
    let mut workload = match (&args.index, args.synthetic) {
        (Some(dir), _) => from_index(dir, &args)?,
        (None, Some(s)) => synthetic(s, &args)?,
        (None, None) => return Err(CliError::user("pass --index or --synthetic")),
    };
    let rows = measure(&mut workload, &args)?;
    match args.format {
        Format::Records => rows.iter().try_for_each(|row| emit(out, row)),
        Format::Table => write_table(out, &workload, &args, &rows),
    }
}

fn synthetic(s: Synthetic, args: &BenchArgs) -> CliResult<Workload> {
    if s.n == 0 {
        return Err(CliError::user("--synthetic needs N of at least 1"));
    }
    let metric = DistanceMetric::from(args.metric);
    let config = HnswParams {
        m: args.m,
        ef_construction: args.ef_construction,
        seed: Some(args.seed),
        ..HnswParams::default()
    }
    .resolve(metric)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let keys: Vec<String> = (0..s.n).map(|i| gen::key(i, s.n)).collect();
    let vectors: Vec<Vector> = (0..s.n)
        .map(|_| unit_if(metric, Vector::from_f32(&gen::uniform(&mut rng, s.dim))))
        .collect::<burrow::Result<_>>()?;

    let started = Instant::now();
    let store = Arc::new(MemoryStore::new(s.dim)?);
    let mut index = Index::new(config, store, CacheConfig::for_dimension(s.dim))?;
    let records: Vec<StoreRecord<'_>> = keys.iter().zip(&vectors).map(|(k, v)| StoreRecord::new(k, v)).collect();
    index.bulk_insert(&records)?;
    eprintln!(
        "built a synthetic {}x{} index in {:.1}s",
        s.n,
        s.dim,
        started.elapsed().as_secs_f64()
    );

    let mut qrng = ChaCha8Rng::seed_from_u64(args.seed ^ QUERY_STREAM);
    let queries = (0..args.queries)
        .map(|_| unit_if(metric, Vector::from_f32(&gen::uniform(&mut qrng, s.dim))))
        .collect::<burrow::Result<Vec<_>>>()?;
    let truth = oracle(metric, &keys, &vectors, &queries, args.k);
    Ok(Workload {
        index,
        label: format!("synthetic {}x{}", s.n, s.dim),
        queries,
        truth,
    })
}

fn unit_if(metric: DistanceMetric, v: burrow::Result<Vector>) -> burrow::Result<Vector> {
    let v = v?;
    if metric != DistanceMetric::CosineNormalized {
        return Ok(v);
    }
    let norm = v.norm();
    Vector::new(v.as_slice().iter().map(|x| x / norm).collect())?.to_stored()
}

/// Queries are midpoints of random pairs of stored vectors.
fn from_index(dir: &std::path::Path, args: &BenchArgs) -> CliResult<Workload> {
    let index = open_index(dir, None)?;
    if index.is_empty() {
        return Err(CliError::user(format!("{} is empty", dir.display())));
    }
    let metric = index.graph().config().metric;
    let keys: Vec<String> = index.graph().keys().map(str::to_owned).collect();
    let mut vectors = Vec::with_capacity(keys.len());
    for chunk in keys.chunks(4096) {
        let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
        let batch = index.store().get_batch(&refs)?;
        if let Some(missing) = batch.missing.first() {
            return Err(CliError::internal(format!("vector for {missing:?} is missing from the store")));
        }
        vectors.extend(batch.found.into_iter().map(|(_, v)| v));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ QUERY_STREAM);
    let mut queries = Vec::with_capacity(args.queries);
    let mut attempts = 0;
    while queries.len() < args.queries {
        attempts += 1;
        if attempts > args.queries * 100 + 100 {
            return Err(CliError::user("could not draw valid query vectors from the index"));
        }
        let a = &vectors[rng.random_range(0..vectors.len())];
        let b = &vectors[rng.random_range(0..vectors.len())];
        let mid: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x + y) / 2.0).collect();
        let Ok(q) = unit_if(metric, Vector::new(mid)) else { continue };
        if metric.validate(&q).is_ok() {
            queries.push(q);
        }
    }
    let truth = oracle(metric, &keys, &vectors, &queries, args.k);
    Ok(Workload {
        index,
        label: format!("index {}", dir.display()),
        queries,
        truth,
    })
}

fn oracle(metric: DistanceMetric, keys: &[String], vectors: &[Vector], queries: &[Vector], k: usize) -> Vec<Vec<String>> {
    queries
        .iter()
        .map(|q| {
            let items = keys.iter().zip(vectors).map(|(k, v)| (k.as_str(), v.as_slice()));
            exact::knn(metric, items, q.as_slice(), k)
                .into_iter()
                .map(|(key, _)| key)
                .collect()
        })
        .collect()
}

fn measure(w: &mut Workload, args: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::new();
    if w.queries.is_empty() {
        return Ok(rows);
    }
    let dimension = w.index.dimension();
    let metric = w.index.graph().config().metric;
    for p in &args.p {
        let p = match *p {
            PArg::Default => burrow::default_p(dimension),
            PArg::Value(v) => v,
        };
        for &ef in &args.ef {
            let cache = CacheConfig::resolve(dimension, Some(p), None)?;
            w.index.reset_cache(cache)?;
            let before = w.index.store().stats().transactions_read;
            let mut cold = Vec::with_capacity(w.queries.len());
            let mut recall = 0.0;
            for (q, truth) in w.queries.iter().zip(&w.truth) {
                let started = Instant::now();
                let result = w.index.query(q, args.k, Some(ef))?;
                cold.push(started.elapsed().as_secs_f64() * 1e3);
                recall += exact::recall(&result.keys, truth);
            }
            let transactions_read = w.index.store().stats().transactions_read - before;
            let mut warm = Vec::with_capacity(w.queries.len());
            for q in &w.queries {
                let started = Instant::now();
                w.index.query(q, args.k, Some(ef))?;
                warm.push(started.elapsed().as_secs_f64() * 1e3);
            }
            let stats = Stats::of(&mut warm);
            rows.push(BenchRow {
                record: "bench",
                target: w.label.clone(),
                count: w.index.len(),
                dimension,
                metric,
                queries: w.queries.len(),
                k: args.k,
                ef,
                effective_ef: effective_ef(args.k, Some(ef), w.index.len()),
                p,
                capacity: cache.capacity,
                mean_ms: stats.mean,
                median_ms: stats.median,
                p99_ms: stats.p99,
                cold_mean_ms: Stats::of(&mut cold).mean,
                recall: recall / w.queries.len() as f64,
                transactions_read,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
}

impl Stats {
    /// Summary of a non-empty sample; sorts it in place.
    pub fn of(samples: &mut [f64]) -> Self {
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        // nearest rank
        let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            mean,
            median,
            p99: samples[rank - 1],
        }
    }
}

fn write_table(out: &mut dyn Write, w: &Workload, args: &BenchArgs, rows: &[BenchRow]) -> CliResult {
    writeln!(
        out,
        "# {} ({}, {} vectors), {} queries, k={}",
        w.label,
        w.index.graph().config().metric.as_str(),
        w.index.len(),
        w.queries.len(),
        args.k
    )?;
    writeln!(
        out,
        "{:>6} {:>6} {:>9} {:>10} {:>10} {:>10} {:>8} {:>9}",
        "ef", "p", "capacity", "mean_ms", "median_ms", "p99_ms", "recall", "txn_read"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>6} {:>6} {:>9} {:>10.3} {:>10.3} {:>10.3} {:>8.4} {:>9}",
            r.ef, r.p, r.capacity, r.mean_ms, r.median_ms, r.p99_ms, r.recall, r.transactions_read
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let mut s = [5.0, 1.0, 3.0, 2.0];
        let st = Stats::of(&mut s);
        assert_eq!((st.mean, st.median, st.p99), (2.75, 2.5, 5.0));
        let mut many: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(Stats::of(&mut many).p99, 198.0);
    }

    #[test]
    fn argument_parsing() {
        assert_eq!("10000,64".parse::<Synthetic>(), Ok(Synthetic { n: 10_000, dim: 64 }));
        assert!("10000".parse::<Synthetic>().is_err());
        assert!("10,0".parse::<Synthetic>().is_err());
        assert_eq!("default".parse::<PArg>(), Ok(PArg::Default));
        assert_eq!("8".parse::<PArg>(), Ok(PArg::Value(8)));
    }
}
