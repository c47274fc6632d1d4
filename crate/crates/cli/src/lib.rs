//! The `burrow` command-line tool.
//!
//! Every command writes machine-readable records to stdout, one JSON object
//! per line with a `record` field naming its kind (see `CLI.md`). Progress,
//! warnings and errors go to stderr.

pub mod bench;
pub mod build;
pub mod corpus;
pub mod error;
pub mod gen;
pub mod query;
pub mod serve;
pub mod transfer;

use std::io::{self, Write};

use burrow::DistanceMetric;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use error::{CliError, CliResult, EXIT_INTERNAL, EXIT_OK, EXIT_USER};

#[derive(Debug, Parser)]
#[command(name = "burrow", version, about = "HNSW search with RAM-resident graphs and disk-resident vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an index directory from a line-delimited corpus.
    Build(build::BuildArgs),
    /// Query an index directory.
    Query(query::QueryArgs),
    /// Measure latency, recall and store reads over ef and p settings.
    Bench(bench::BenchArgs),
    /// Write an index snapshot to a file.
    Export(transfer::ExportArgs),
    /// Create an index directory from a snapshot file.
    Import(transfer::ImportArgs),
    /// Run the HTTP service.
    Serve(serve::ServeArgs),
    /// Emit a synthetic corpus.
    Gen(gen::GenArgs),
    /// Run deterministic embedding and completion endpoints for testing.
    MockProviders(serve::MockArgs),
}

impl Command {
    pub fn is_long_running(&self) -> bool {
        matches!(self, Command::Serve(_) | Command::MockProviders(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    CosineNormalized,
    EuclideanSquared,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Cosine => DistanceMetric::Cosine,
            MetricArg::CosineNormalized => DistanceMetric::CosineNormalized,
            MetricArg::EuclideanSquared => DistanceMetric::EuclideanSquared,
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Build(args) => build::run(args, &mut out),
        Command::Query(args) => query::run(args, &mut out),
        Command::Bench(args) => bench::run(args, &mut out),
        Command::Export(args) => transfer::export(args, &mut out),
        Command::Import(args) => transfer::import(args, &mut out),
        Command::Serve(args) => {
            drop(out);
            serve::serve(args)
        }
        Command::Gen(args) => gen::run(args, &mut out),
        Command::MockProviders(args) => {
            drop(out);
            serve::mock_providers(args)
        }
    }
}

/// Writes one record line and flushes, so consumers see it immediately.
pub fn emit<T: Serialize>(out: &mut dyn Write, record: &T) -> CliResult {
    serde_json::to_writer(&mut *out, record).map_err(|e| CliError::internal(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub(crate) fn index_exists(dir: &std::path::Path) -> bool {
    dir.join(burrow::index::STORE_FILE).exists()
}

pub(crate) fn open_index(dir: &std::path::Path, cache: Option<burrow::CacheConfig>) -> CliResult<burrow::Index> {
    if !index_exists(dir) {
        return Err(CliError::user(format!("no index at {}", dir.display())));
    }
    let (index, removed) = burrow::Index::open_dir(dir, cache).map_err(|e| CliError::from(e).context(dir.display()))?;
    if removed > 0 {
        eprintln!(
            "warning: removed {removed} vectors left by an interrupted build in {}",
            dir.display()
        );
    }
    Ok(index)
}
