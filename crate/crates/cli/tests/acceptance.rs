//! Acceptance suite: one PASS/FAIL line per criterion on stdout.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed in
//! order and in full; it exits non-zero if any criterion fails.

mod common;

use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Stdio;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use burrow::snapshot::{load_index, SnapshotLoader};
use burrow::{
    default_p, exact, CacheConfig, DiskStore, DistanceMetric, Error, HnswConfig, Index, MemoryStore, SearchResult,
    StoreRecord, Vector, VectorStore,
};
use burrow_cli::gen;
use burrow_service::prompt::{assemble_prompt, CONTEXT_SEPARATOR};
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn main() {
    let started = Instant::now();
    let mut failures = 0;
    let mut run = |name: &str, check: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(&mut *check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    let workload = RecallWorkload::build();
    run("recall", &mut || workload.as_ref().map_err(Clone::clone).and_then(recall));
    run("oracle-equivalence", &mut oracle_equivalence);
    run("cache-transparency", &mut || {
        workload.as_ref().map_err(Clone::clone).and_then(cache_transparency)
    });
    run("snapshot-roundtrip", &mut || {
        workload.as_ref().map_err(Clone::clone).and_then(snapshot_roundtrip)
    });
    drop(workload);
    run("desk-scale", &mut desk_scale);
    run("durability", &mut durability);
    run("prompt-assembly", &mut prompt_assembly);
    run("primary-without-ui", &mut primary_without_ui);

    println!(
        "{} criteria failed; total {:.1}s",
        failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

const RECALL_N: usize = 10_000;
const RECALL_DIM: usize = 64;
const RECALL_QUERIES: usize = 100;
const K: usize = 10;
const RECALL_EF: usize = 100;

/// 10,000 uniform 64-dimensional vectors indexed with M=16,
/// efConstruction=200 and seed 42 on a disk store.
struct RecallWorkload {
    _dir: tempfile::TempDir,
    index: Shared<Index>,
    keys: Vec<String>,
    vectors: Vec<Vector>,
    queries: Vec<Vector>,
    build_secs: f64,
}

/// The workload index behind a lock: cache resets need `&mut`.
struct Shared<T>(std::sync::Mutex<T>);

impl<T> Shared<T> {
    fn new(v: T) -> Self {
        Self(std::sync::Mutex::new(v))
    }

    fn with<R>(&self, f: impl FnOnce(&mut T) -> R) -> R {
        let mut guard = self.0.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }
}

impl RecallWorkload {
    fn build() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let keys: Vec<String> = (0..RECALL_N).map(|i| gen::key(i, RECALL_N)).collect();
        let vectors: Vec<Vector> = (0..RECALL_N)
            .map(|_| Vector::from_f32(&gen::uniform(&mut rng, RECALL_DIM)))
            .collect::<Result<_, _>>()
            .map_err(e)?;
        let mut qrng = ChaCha8Rng::seed_from_u64(43);
        let queries: Vec<Vector> = (0..RECALL_QUERIES)
            .map(|_| Vector::from_f32(&gen::uniform(&mut qrng, RECALL_DIM)))
            .collect::<Result<_, _>>()
            .map_err(e)?;

        let config = HnswConfig::new(DistanceMetric::EuclideanSquared)
            .with_m(16)
            .with_ef_construction(200)
            .with_seed(42);
        let t = Instant::now();
        let store = Arc::new(DiskStore::open(dir.path(), RECALL_DIM).map_err(e)?);
        let mut index = Index::new(config, store, CacheConfig::for_dimension(RECALL_DIM)).map_err(e)?;
        let records: Vec<StoreRecord<'_>> = keys.iter().zip(&vectors).map(|(k, v)| StoreRecord::new(k, v)).collect();
        index.bulk_insert(&records).map_err(e)?;
        Ok(Self {
            _dir: dir,
            index: Shared::new(index),
            keys,
            vectors,
            queries,
            build_secs: t.elapsed().as_secs_f64(),
        })
    }

    fn run_queries(&self, index: &Index, ef: usize) -> Result<Vec<SearchResult>, String> {
        self.queries.iter().map(|q| index.query(q, K, Some(ef)).map_err(e)).collect()
    }
}

fn recall(w: &RecallWorkload) -> Check {
    let t = Instant::now();
    let found = w.index.with(|index| w.run_queries(index, RECALL_EF))?;
    let query_secs = t.elapsed().as_secs_f64();
    let mut total = 0.0;
    for (q, result) in w.queries.iter().zip(&found) {
        let items = w.keys.iter().zip(&w.vectors).map(|(k, v)| (k.as_str(), v.as_slice()));
        let truth: Vec<String> = exact::knn(DistanceMetric::EuclideanSquared, items, q.as_slice(), K)
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        total += exact::recall(&result.keys, &truth);
    }
    let mean = total / found.len() as f64;
    let runtime = w.build_secs + query_secs;
    let detail = format!(
        "mean recall@{K} {mean:.3} at ef={RECALL_EF} (need >= 0.90); build {:.1}s + {} queries {:.2}s = {runtime:.1}s (limit 120s)",
        w.build_secs, RECALL_QUERIES, query_secs
    );
    ensure!(mean >= 0.90 && runtime <= 120.0, "{detail}");
    Ok(detail)
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for g in 0..50u64 {
        let metric = DistanceMetric::ALL[g as usize % 3];
        let n = rng.random_range(1..=64usize);
        let dim = rng.random_range(2..=16usize);
        let draw = |rng: &mut ChaCha8Rng| -> Result<Vector, String> {
            let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if metric == DistanceMetric::CosineNormalized {
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
            }
            Vector::from_f32(&v).map_err(e)
        };
        let keys: Vec<String> = (0..n).map(|i| format!("k{i:02}")).collect();
        let vectors: Vec<Vector> = (0..n).map(|_| draw(&mut rng)).collect::<Result<_, _>>()?;
        let store = Arc::new(MemoryStore::new(dim).map_err(e)?);
        let mut index =
            Index::new(HnswConfig::new(metric).with_seed(g), store, CacheConfig::for_dimension(dim)).map_err(e)?;
        let records: Vec<StoreRecord<'_>> = keys.iter().zip(&vectors).map(|(k, v)| StoreRecord::new(k, v)).collect();
        index.bulk_insert(&records).map_err(e)?;
        for _ in 0..5 {
            let q = draw(&mut rng)?;
            let k = rng.random_range(1..=n);
            let got = index.query(&q, k, Some(n)).map_err(e)?;
            let items = keys.iter().zip(&vectors).map(|(k, v)| (k.as_str(), v.as_slice()));
            let want = exact::knn(metric, items, q.as_slice(), k);
            let want_keys: Vec<&str> = want.iter().map(|(k, _)| k.as_str()).collect();
            let want_dist: Vec<f64> = want.iter().map(|(_, d)| *d).collect();
            let got_keys: Vec<&str> = got.keys.iter().map(String::as_str).collect();
            ensure!(
                got_keys == want_keys && got.distances == want_dist,
                "graph {g} ({metric}, n={n}, dim={dim}, k={k}): got {got_keys:?}, exhaustive search gives {want_keys:?}"
            );
            compared += 1;
        }
    }
    Ok(format!(
        "50 graphs (N <= 64, all three metrics), {compared} queries at ef=N identical to exhaustive search with key tie-break"
    ))
}

fn cache_transparency(w: &RecallWorkload) -> Check {
    w.index.with(|index| {
        index.reset_cache(CacheConfig::with_p(1).unbounded()).map_err(e)?;
        let baseline = w.run_queries(index, RECALL_EF)?;
        let dp = default_p(RECALL_DIM);
        let mut cells = 0;
        for p in [1, 8, dp] {
            for capacity in [p, 8 * p, usize::MAX] {
                index.reset_cache(CacheConfig { p, capacity }).map_err(e)?;
                let results = w.run_queries(index, RECALL_EF)?;
                ensure!(results == baseline, "p={p} capacity={capacity} changed the results");
                cells += 1;
            }
        }
        let reads = |index: &mut Index, p: usize| -> Result<u64, String> {
            index.reset_cache(CacheConfig::with_p(p)).map_err(e)?;
            let before = index.store().stats().transactions_read;
            w.run_queries(index, RECALL_EF)?;
            Ok(index.store().stats().transactions_read - before)
        };
        let one = reads(index, 1)?;
        let default = reads(index, dp)?;
        ensure!(
            default < one,
            "transactionsRead with p={dp} ({default}) is not below p=1 ({one})"
        );
        Ok(format!(
            "{cells} (p, capacity) settings give identical keys and distances; transactionsRead {default} at p={dp} vs {one} at p=1"
        ))
    })
}

fn snapshot_roundtrip(w: &RecallWorkload) -> Check {
    let mut prng = ChaCha8Rng::seed_from_u64(44);
    let probes: Vec<Vector> = (0..100)
        .map(|_| Vector::from_f32(&gen::uniform(&mut prng, RECALL_DIM)))
        .collect::<Result<_, _>>()
        .map_err(e)?;
    w.index.with(|index| {
        let answers = |index: &Index| -> Result<Vec<SearchResult>, String> {
            probes.iter().map(|q| index.query(q, K, Some(50)).map_err(e)).collect()
        };
        let expected = answers(index)?;

        let mut full = Vec::new();
        index.export(true, &mut full).map_err(e)?;
        let store: Arc<dyn VectorStore> = Arc::new(MemoryStore::new(RECALL_DIM).map_err(e)?);
        let graph = load_index(full.as_slice(), &*store).map_err(e)?;
        let loaded = Index::from_parts(graph, store, CacheConfig::for_dimension(RECALL_DIM)).map_err(e)?;
        ensure!(answers(&loaded)? == expected, "full snapshot: results differ after loading");

        let store: Arc<dyn VectorStore> = Arc::new(MemoryStore::new(RECALL_DIM).map_err(e)?);
        let graph = {
            let mut loader = SnapshotLoader::new(&*store);
            for byte in full.chunks(1) {
                loader.feed(byte).map_err(e)?;
            }
            loader.finish().map_err(e)?
        };
        let loaded = Index::from_parts(graph, store, CacheConfig::for_dimension(RECALL_DIM)).map_err(e)?;
        ensure!(answers(&loaded)? == expected, "1-byte chunks: results differ after loading");

        let mut topology = Vec::new();
        index.export(false, &mut topology).map_err(e)?;
        let store = Arc::clone(index.store());
        let graph = load_index(topology.as_slice(), &*store).map_err(e)?;
        let loaded = Index::from_parts(graph, store, CacheConfig::for_dimension(RECALL_DIM)).map_err(e)?;
        ensure!(answers(&loaded)? == expected, "topology-only: results differ after loading");

        Ok(format!(
            "100 probes identical after loading a full snapshot ({} bytes) whole and in 1-byte chunks, and a topology-only snapshot ({} bytes) against the existing disk store",
            full.len(),
            topology.len()
        ))
    })
}

fn desk_scale() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let corpus = dir.path().join("corpus.ndjson");
    let index = dir.path().join("index");
    gen(&corpus, 100_000, 384, &["--seed", "42"]);
    let o = burrow(&[
        "build",
        "--input",
        corpus.to_str().unwrap(),
        "--out",
        index.to_str().unwrap(),
        "--m",
        "5",
        "--ef-construction",
        "20",
    ]);
    ensure!(o.status.success(), "build failed: {}", stderr(&o));
    let build = records(&o).into_iter().next().ok_or("build printed no record")?;
    let count = build["count"].as_u64().unwrap_or(0);
    let build_secs = build["elapsedMs"].as_f64().ok_or("build reported no timing")? / 1e3;
    ensure!(count == 100_000, "built {count} nodes");
    std::fs::remove_file(&corpus).map_err(e)?;

    let o = burrow(&[
        "bench",
        "--index",
        index.to_str().unwrap(),
        "--queries",
        "100",
        "--k",
        "10",
        "--ef",
        "50",
        "--format",
        "records",
    ]);
    ensure!(o.status.success(), "bench failed: {}", stderr(&o));
    let row = records(&o).into_iter().next().ok_or("bench printed no row")?;
    let median = row["medianMs"].as_f64().ok_or("no medianMs")?;
    let detail = format!(
        "100,000 x 384 built with M=5, efConstruction=20 in {build_secs:.1}s; k=10 ef=50 warm median {median:.2} ms (limit 50), p99 {:.2} ms, recall@10 {:.3}",
        row["p99Ms"].as_f64().unwrap_or(f64::NAN),
        row["recall"].as_f64().unwrap_or(f64::NAN)
    );
    ensure!(median <= 50.0, "{detail}");
    Ok(detail)
}

/// Reopens an index directory after a crash: it must either be consistent
/// or refuse to open as an incomplete build.
fn reopen(dir: &Path) -> Result<String, String> {
    match Index::open_dir(dir, None) {
        Ok((index, removed)) => {
            let report = index.consistency().map_err(e)?;
            ensure!(report.consistent, "inconsistent after reopening: {report:?}");
            Ok(format!("{} nodes, {removed} orphans rolled back", index.len()))
        }
        Err(Error::IncompleteBuild(_)) => Ok("incomplete build refused".into()),
        Err(Error::Io(io)) if io.kind() == std::io::ErrorKind::NotFound => Ok("nothing written".into()),
        Err(err) => Err(format!("reopen failed: {err}")),
    }
}

fn durability() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let corpus = dir.path().join("corpus.ndjson");
    gen(&corpus, 40_000, 64, &["--seed", "5"]);
    let mut notes = Vec::new();

    // CLI build killed right away and after its first persisted chunk
    for (name, wait_for_chunk) in [("early", false), ("mid", true)] {
        let out = dir.path().join(name);
        let mut child = bin()
            .args(["build", "--input", corpus.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(e)?;
        if wait_for_chunk {
            let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
            let progressed = lines.any(|l| l.map(|l| l.starts_with("inserted")).unwrap_or(false));
            ensure!(progressed, "build ended before reporting progress");
            thread::sleep(Duration::from_millis(700));
        } else {
            thread::sleep(Duration::from_millis(300));
        }
        child.kill().map_err(e)?;
        child.wait().map_err(e)?;
        notes.push(format!("cli {name}: {}", reopen(&out)?));
    }

    // service killed during a build, then restarted
    let data = dir.path().join("data");
    let docs: Vec<Value> = std::fs::read_to_string(&corpus)
        .map_err(e)?
        .lines()
        .take(20_000)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let start_build = |addr: &str, name: &str| -> Result<(), String> {
        let (status, body) = http(addr, "POST", "/api/collections", Some(&json!({"name": name, "dimension": 64})));
        ensure!(status == 201, "create {name}: {status} {body}");
        let (status, body) = http(
            addr,
            "POST",
            &format!("/api/collections/{name}/documents"),
            Some(&json!({"documents": docs})),
        );
        ensure!(status == 202, "add documents: {status} {body}");
        loop {
            let (_, s) = http(addr, "GET", &format!("/api/collections/{name}/build"), None);
            if s["inserted"].as_u64().unwrap_or(0) >= 1000 || s["state"] != "running" {
                return Ok(());
            }
            thread::sleep(Duration::from_millis(20));
        }
    };

    let server = Running::start(&["serve", "--data-dir", data.to_str().unwrap(), "--port", "0"]);
    start_build(&server.address, "killed")?;
    server.signal("KILL");
    drop(server);
    notes.push(format!("service SIGKILL: {}", reopen(&data.join("collections/killed"))?));

    let server = Running::start(&["serve", "--data-dir", data.to_str().unwrap(), "--port", "0"]);
    let (status, report) = http(&server.address, "GET", "/api/collections/killed/consistency", None);
    ensure!(status == 200 && report["consistent"] == true, "after restart: {status} {report}");
    start_build(&server.address, "interrupted")?;
    let code = server.stop();
    ensure!(code == Some(0), "service exited with {code:?} on SIGTERM");
    let state = reopen(&data.join("collections/interrupted"))?;
    notes.push(format!("service SIGTERM: {state}"));

    Ok(notes.join("; "))
}

#[derive(Debug, Clone)]
enum Piece {
    Text(String),
    User,
    Context,
}

fn prompt_assembly() -> Check {
    let literal = "[a-z{} \n]{0,12}".prop_filter("no opener", |s: &String| !s.contains("{{"));
    let piece = prop_oneof![
        literal.prop_map(Piece::Text),
        Just(Piece::User),
        Just(Piece::Context),
    ];
    let strategy = (
        prop::collection::vec(piece, 0..12),
        prop_oneof![".{0,12}", Just("{{user}}".to_owned()), Just("{{context}}".to_owned())],
        prop::collection::vec(prop_oneof![".{0,12}", Just("{{user}}".to_owned())], 0..5),
    );
    let mut runner = TestRunner::new(Config {
        cases: 2000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(pieces, user, contexts)| {
            let mut template = String::new();
            let mut expected = String::new();
            let joined = contexts.join(CONTEXT_SEPARATOR);
            for p in &pieces {
                match p {
                    Piece::Text(t) => {
                        template.push_str(t);
                        expected.push_str(t);
                    }
                    Piece::User => {
                        template.push_str("{{user}}");
                        expected.push_str(&user);
                    }
                    Piece::Context => {
                        template.push_str("{{context}}");
                        expected.push_str(&joined);
                    }
                }
            }
            prop_assert_eq!(assemble_prompt(&template, &user, &contexts), expected);
            Ok(())
        })
        .map_err(|err| format!("{err}"))?;
    Ok(format!(
        "2000 random templates: each {{{{user}}}} replaced by the query, each {{{{context}}}} by the contexts in order joined by {CONTEXT_SEPARATOR:?}, substituted text never rescanned"
    ))
}

fn primary_without_ui() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let mock = Running::start(&["mock-providers", "--port", "0", "--dim", "256"]);
    let embed = format!("http://{}/embed", mock.address);
    let complete = format!("http://{}/complete", mock.address);
    let data = dir.path().join("data");
    let server = Running::start(&[
        "serve",
        "--data-dir",
        data.to_str().unwrap(),
        "--port",
        "0",
        "--embedding-url",
        &embed,
        "--llm-url",
        &complete,
    ]);
    let addr = server.address.clone();
    let (status, _) = http(&addr, "POST", "/api/collections", Some(&json!({"name": "notes", "dimension": 256})));
    ensure!(status == 201, "create: {status}");
    let topics = ["graphs", "caches", "prompts", "vectors", "disks", "browsers", "models", "queries"];
    let text = |i: usize| format!("note {i} about {} and {}", topics[i % 8], topics[(i / 8) % 8]);
    let docs: Vec<Value> = (0..200)
        .map(|i| json!({"key": format!("d{i:03}"), "text": text(i)}))
        .collect();
    let (status, body) = http(
        &addr,
        "POST",
        "/api/collections/notes/documents",
        Some(&json!({"documents": docs, "wait": true})),
    );
    ensure!(status == 200 && body["build"]["state"] == "completed", "add: {status} {body}");

    let query = text(42);
    let (status, body) = http(
        &addr,
        "POST",
        "/api/collections/notes/run",
        Some(&json!({"template": "Question: {{user}}\n\n{{context}}", "query": query, "k": 3})),
    );
    ensure!(status == 200, "run: {status} {body}");
    ensure!(
        body["retrieved"][0]["key"] == "d042" && body["retrieved"][0]["distance"] == 0.0,
        "nearest document is {}",
        body["retrieved"][0]
    );
    let prompt = body["prompt"].as_str().unwrap_or_default();
    ensure!(prompt.starts_with(&format!("Question: {query}\n\n{query}")), "prompt {prompt:?}");
    ensure!(body["completion"] == body["prompt"], "completion is not the mock echo: {body}");
    ensure!(server.stop() == Some(0), "service did not stop cleanly");
    drop(mock);
    Ok("service exercised over HTTP with mock embedding and completion providers and no UI bundle: retrieval, prompt assembly and echo completion".into())
}
