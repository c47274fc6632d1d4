use std::fs;
use std::io::Write;
use std::path::PathBuf;

use burrow::hnsw::effective_ef;
use burrow::Vector;
use clap::Args;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::{emit, open_index};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query-vector").required(true))]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Query vector as a JSON array.
    #[arg(long, group = "query-vector")]
    pub vector_json: Option<String>,
    /// File holding a JSON array, or a corpus record whose `vector` is used.
    #[arg(long, group = "query-vector")]
    pub vector_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Candidate list size (default max(min(10k, count), k)).
    #[arg(long)]
    pub ef: Option<usize>,
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    record: &'static str,
    rank: usize,
    key: &'a str,
    distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
}

/// Parses `[1, 2, 3]` or `{"vector": [1, 2, 3], ...}`.
pub fn parse_vector(text: &str) -> CliResult<Vector> {
    let value: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|e| CliError::user(format!("query vector is not JSON: {e}")))?;
    let array = match &value {
        serde_json::Value::Object(o) => o.get("vector").cloned().unwrap_or(serde_json::Value::Null),
        other => other.clone(),
    };
    let components: Vec<f64> = serde_json::from_value(array)
        .map_err(|e| CliError::user(format!("query vector must be an array of numbers: {e}")))?;
    Ok(Vector::new(components)?)
}

pub fn run(args: QueryArgs, out: &mut dyn Write) -> CliResult {
    let text = match (&args.vector_json, &args.vector_file) {
        (Some(json), _) => json.clone(),
        (None, Some(path)) => fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?,
        (None, None) => return Err(CliError::user("pass --vector-json or --vector-file")),
    };
    let vector = parse_vector(&text)?;
    let index = open_index(&args.index, None)?;
    if let Some(ef) = args.ef {
        if ef < args.k {
            eprintln!(
                "warning: --ef {ef} is below --k {}; searching with ef = {}",
                args.k,
                effective_ef(args.k, Some(ef), index.len())
            );
        }
    }
    let result = index.query(&vector, args.k, args.ef)?;
    let texts = index.texts(&result.keys)?;
    for (rank, ((key, distance), text)) in result.iter().zip(&texts).enumerate() {
        emit(
            out,
            &ResultRecord {
                record: "result",
                rank: rank + 1,
                key,
                distance,
                text: text.as_deref(),
            },
        )?;
    }
    Ok(())
}
