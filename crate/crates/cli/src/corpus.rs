//! Line-delimited corpus input: one `{"key", "vector", "text"?}` object per
//! line. Blank lines are skipped.

use std::collections::HashSet;
use std::io::BufRead;

use burrow::{DistanceMetric, Vector};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    key: String,
    vector: Vec<f64>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub key: String,
    pub vector: Vector,
    pub text: Option<String>,
}

/// Reads and validates records in chunks. Checks that every line parses,
/// that keys are unique and non-empty, that dimensions agree and that
/// vectors are valid under `metric`. Errors name the 1-based line.
pub struct CorpusReader<R> {
    input: R,
    metric: DistanceMetric,
    dimension: Option<usize>,
    seen: HashSet<String>,
    line: u64,
    buf: String,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(input: R, metric: DistanceMetric) -> Self {
        Self {
            input,
            metric,
            dimension: None,
            seen: HashSet::new(),
            line: 0,
            buf: String::new(),
        }
    }

    /// Dimension of the first record, once one has been read.
    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// Up to `max` records; empty at end of input.
    pub fn next_chunk(&mut self, max: usize) -> CliResult<Vec<CorpusRecord>> {
        let mut out = Vec::with_capacity(max.min(16 * 1024));
        while out.len() < max {
            match self.next_record()? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }

    fn next_record(&mut self) -> CliResult<Option<CorpusRecord>> {
        loop {
            self.buf.clear();
            let n = self
                .input
                .read_line(&mut self.buf)
                .map_err(|e| CliError::from(e).context(format!("line {}", self.line + 1)))?;
            if n == 0 {
                return Ok(None);
            }
            self.line += 1;
            if !self.buf.trim().is_empty() {
                break;
            }
        }
        let at = |message: String| CliError::user(format!("line {}: {message}", self.line));
        let parsed: Line = serde_json::from_str(&self.buf).map_err(|e| at(format!("malformed record: {e}")))?;
        if parsed.key.is_empty() {
            return Err(at("empty key".into()));
        }
        let dimension = *self.dimension.get_or_insert(parsed.vector.len());
        if parsed.vector.len() != dimension {
            return Err(at(format!(
                "vector has {} components but earlier records have {dimension}",
                parsed.vector.len()
            )));
        }
        let vector = Vector::new(parsed.vector).map_err(|e| at(e.to_string()))?;
        self.metric.validate(&vector).map_err(|e| at(e.to_string()))?;
        if !self.seen.insert(parsed.key.clone()) {
            return Err(at(format!("duplicate key {:?}", parsed.key)));
        }
        Ok(Some(CorpusRecord {
            key: parsed.key,
            vector,
            text: parsed.text,
        }))
    }
}
