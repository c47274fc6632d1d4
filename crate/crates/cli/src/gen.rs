//! Synthetic corpora for tests and benchmarks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliResult;

const WORDS: &[&str] = &[
    "graph", "vector", "search", "memory", "layer", "neighbor", "query", "index", "cache", "disk", "recall",
    "latency", "embedding", "prompt", "context", "model", "browser", "store", "batch", "node",
];

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of records.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add a short generated text to every record.
    #[arg(long)]
    pub texts: bool,
    /// Scale every vector to unit length.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Serialize)]
struct Line<'a> {
    key: &'a str,
    vector: &'a [f32],
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

/// Key of the `i`-th generated record among `n`.
pub fn key(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(6);
    format!("v{i:0width$}")
}

/// Components drawn uniformly from [0, 1), rounded to f32.
pub fn uniform(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random::<f32>()).collect()
}

pub fn run(args: GenArgs, out: &mut dyn Write) -> CliResult {
    match &args.out {
        Some(path) => {
            let mut file = BufWriter::with_capacity(1 << 20, File::create(path)?);
            write_corpus(&args, &mut file)?;
            file.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        None => {
            let mut buffered = BufWriter::with_capacity(1 << 20, out);
            write_corpus(&args, &mut buffered)?;
            buffered.flush()?;
        }
    }
    Ok(())
}

fn write_corpus(args: &GenArgs, out: &mut dyn Write) -> CliResult {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut text_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x7465_7874);
    for i in 0..args.n {
        let mut vector = uniform(&mut rng, args.dim);
        if args.normalize {
            let norm = vector.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                vector.iter_mut().for_each(|x| *x /= norm);
            }
        }
        let text = args.texts.then(|| {
            let words: Vec<&str> = (0..8).map(|_| WORDS[text_rng.random_range(0..WORDS.len())]).collect();
            format!("document {i}: {}", words.join(" "))
        });
        let k = key(i, args.n);
        serde_json::to_writer(
            &mut *out,
            &Line {
                key: &k,
                vector: &vector,
                text,
            },
        )
        .map_err(|e| crate::CliError::internal(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
