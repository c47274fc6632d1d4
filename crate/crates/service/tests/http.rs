use std::net::SocketAddr;
use std::path::Path;

use burrow_service::{mock, Service, ServiceConfig};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

const DIM: usize = 8;

struct Server {
    base: String,
    client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(config: ServiceConfig) -> Self {
        let service = Service::open(config).await.expect("open service");
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}/api", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn(service.serve(listener, async move {
            let _ = stopped.await;
        }));
        Self {
            base,
            client: reqwest::Client::new(),
            stop: Some(stop),
            task,
        }
    }

    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        (&mut self.task).await.unwrap().unwrap();
    }

    async fn send(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> (u16, Value) {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        (status, value)
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        self.send(reqwest::Method::GET, path, None).await
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.send(reqwest::Method::POST, path, Some(body)).await
    }
}

async fn spawn_mock() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, mock::router(DIM)).await });
    addr
}

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig::new(dir)
}

fn unit(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; DIM];
    v[i % DIM] = 1.0;
    v[(i + 1) % DIM] = 0.25 * (i / DIM + 1) as f64;
    v
}

async fn seed_collection(server: &Server, name: &str, n: usize) {
    let (status, _) = server
        .post("/collections", json!({"name": name, "dimension": DIM, "metric": "cosine"}))
        .await;
    assert_eq!(status, 201);
    let documents: Vec<Value> = (0..n)
        .map(|i| json!({"key": format!("doc{i:03}"), "vector": unit(i), "text": format!("document number {i}")}))
        .collect();
    let (status, body) = server
        .post(&format!("/collections/{name}/documents"), json!({"documents": documents, "wait": true}))
        .await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["build"]["state"], "completed");
}

#[tokio::test]
async fn health_reports_provider_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    let (status, body) = server.get("/health").await;
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["embedding"], false);
    assert_eq!(body["llm"], false);
    server.stop().await;
}

#[tokio::test]
async fn collection_lifecycle_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;

    let (status, body) = server
        .post("/collections", json!({"name": "articles", "dimension": DIM, "m": 8, "efConstruction": 50}))
        .await;
    assert_eq!(status, 201, "{body}");
    assert_eq!(body["metric"], "cosine");
    assert_eq!(body["mMax0"], 16);
    assert_eq!(body["count"], 0);

    let (status, body) = server.post("/collections", json!({"name": "articles", "dimension": DIM})).await;
    assert_eq!(status, 409);
    assert_eq!(body["error"]["code"], "collection_exists");

    let (status, body) = server.post("/collections", json!({"name": "bad", "dimension": DIM, "m": 1})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "invalid_config");

    let (status, _) = server.post("/collections", json!({"name": "../etc", "dimension": DIM})).await;
    assert_eq!(status, 400);

    let (status, body) = server.post("/collections/articles/query", json!({"vector": unit(0)})).await;
    assert_eq!(status, 409);
    assert_eq!(body["error"]["code"], "empty_collection");

    let (status, _) = server.get("/collections/missing").await;
    assert_eq!(status, 404);

    let (status, body) = server
        .post(
            "/collections/articles/documents",
            json!({"keys": ["a", "b"], "vectors": [unit(0)]}),
        )
        .await;
    assert_eq!(status, 400);
    assert!(body["error"]["message"].as_str().unwrap().contains("2 keys but 1 vectors"));

    let (status, body) = server
        .post(
            "/collections/articles/documents",
            json!({"documents": [{"key": "a", "vector": [1.0, 2.0]}]}),
        )
        .await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "dimension_mismatch");

    let (status, body) = server
        .post(
            "/collections/articles/documents",
            json!({"documents": [{"key": "z", "vector": vec![0.0; DIM]}]}),
        )
        .await;
    assert_eq!(status, 400, "{body}");
    assert_eq!(body["error"]["code"], "invalid_vector");

    let (status, body) = server
        .post(
            "/collections/articles/documents",
            json!({"keys": ["a", "b"], "vectors": [unit(0), unit(1)], "texts": ["alpha", null]}),
        )
        .await;
    assert_eq!(status, 202, "{body}");
    assert_eq!(body["accepted"], 2);

    let state = loop {
        let (_, status) = server.get("/collections/articles/build").await;
        if status["state"] != "running" {
            break status;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    };
    assert_eq!(state["state"], "completed");
    assert_eq!(state["inserted"], 2);
    assert_eq!(state["progress"], 1.0);

    let (status, body) = server
        .post("/collections/articles/documents", json!({"documents": [{"key": "a", "vector": unit(3)}]}))
        .await;
    assert_eq!(status, 409);
    assert_eq!(body["error"]["code"], "duplicate_key");

    let (status, body) = server.post("/collections/articles/query", json!({"vector": unit(0), "k": 2})).await;
    assert_eq!(status, 200);
    assert_eq!(body["keys"], json!(["a", "b"]));
    assert_eq!(body["texts"], json!(["alpha", null]));

    let (_, body) = server.get("/collections").await;
    assert_eq!(body["collections"][0]["count"], 2);
    server.stop().await;
}

#[tokio::test]
async fn repeated_queries_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    seed_collection(&server, "c", 200).await;
    let url = format!("{}/collections/c/query", server.base);
    let body = json!({"vector": unit(5), "k": 7, "ef": 20});
    let mut previous = None;
    for _ in 0..5 {
        let bytes = server.client.post(&url).json(&body).send().await.unwrap().bytes().await.unwrap();
        if let Some(p) = &previous {
            assert_eq!(p, &bytes);
        }
        previous = Some(bytes);
    }
    server.stop().await;
}

#[tokio::test]
async fn text_queries_need_an_embedding_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    seed_collection(&server, "c", 10).await;
    let (status, body) = server.post("/collections/c/query", json!({"text": "hello"})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "not_configured");
    server.stop().await;

    // nothing listens on port 9 of the loopback interface
    let mut cfg = config(dir.path());
    cfg.embedding_url = Some("http://127.0.0.1:9/embed".into());
    let server = Server::start(cfg).await;
    let (status, body) = server.post("/collections/c/query", json!({"text": "hello"})).await;
    assert_eq!(status, 502);
    assert_eq!(body["error"]["code"], "upstream_error");
    server.stop().await;
}

#[tokio::test]
async fn run_pipeline_with_mock_providers() {
    let mock = spawn_mock().await;
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.embedding_url = Some(format!("http://{mock}/embed"));
    let server = Server::start(cfg).await;

    let (status, _) = server.post("/collections", json!({"name": "notes", "dimension": DIM})).await;
    assert_eq!(status, 201);
    let texts = ["rust borrow checker", "sourdough bread recipe", "rust lifetimes explained"];
    let documents: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"key": format!("n{i}"), "text": t}))
        .collect();
    let (status, body) = server
        .post("/collections/notes/documents", json!({"documents": documents, "wait": true}))
        .await;
    assert_eq!(status, 200, "{body}");

    let (status, body) = server.post("/collections/notes/query", json!({"text": "bread", "k": 1})).await;
    assert_eq!(status, 200);
    assert_eq!(body["keys"], json!(["n1"]));

    let template = "Q: {{user}}\n{{context}}";
    let (status, body) = server
        .post("/collections/notes/run", json!({"template": template, "query": "sourdough bread", "k": 1}))
        .await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["prompt"], "Q: sourdough bread\nsourdough bread recipe");
    assert!(body.get("completion").is_none());
    assert_eq!(body["warnings"], json!([]));
    server.stop().await;

    let mut cfg = config(dir.path());
    cfg.embedding_url = Some(format!("http://{mock}/embed"));
    cfg.llm_url = Some(format!("http://{mock}/complete"));
    let server = Server::start(cfg).await;
    let (_, body) = server
        .post("/collections/notes/run", json!({"template": template, "query": "rust", "k": 2}))
        .await;
    assert_eq!(body["completion"], body["prompt"]);
    assert_eq!(body["retrieved"].as_array().unwrap().len(), 2);
    server.stop().await;

    let mut cfg = config(dir.path());
    cfg.embedding_url = Some(format!("http://{mock}/embed"));
    cfg.llm_url = Some("http://127.0.0.1:9/complete".into());
    let server = Server::start(cfg).await;
    let (status, body) = server
        .post("/collections/notes/run", json!({"template": template, "query": "rust", "k": 2}))
        .await;
    assert_eq!(status, 200);
    assert!(body.get("completion").is_none());
    assert_eq!(body["warnings"].as_array().unwrap().len(), 1);
    server.stop().await;
}

#[tokio::test]
async fn prompt_assembly_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    let (status, body) = server
        .post(
            "/prompt/assemble",
            json!({"template": "{{user}}: {{context}}", "user": "u", "contexts": ["a", "b"]}),
        )
        .await;
    assert_eq!(status, 200);
    assert_eq!(body["prompt"], "u: a\n\n---\n\nb");
    let (status, body) = server.post("/prompt/assemble", json!({"template": 3})).await;
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "invalid_request");
    server.stop().await;
}

#[tokio::test]
async fn export_import_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    seed_collection(&server, "src", 300).await;

    let snapshot = server
        .client
        .get(format!("{}/collections/src/export", server.base))
        .send()
        .await
        .unwrap()
        .bytes()
        .await
        .unwrap();
    let import = |name: &str, body: Vec<u8>| {
        server
            .client
            .post(format!("{}/collections/{name}/import", server.base))
            .body(body)
            .send()
    };
    let resp = import("copy", snapshot.to_vec()).await.unwrap();
    assert_eq!(resp.status().as_u16(), 201);

    for i in [0, 17, 123, 299] {
        let q = json!({"vector": unit(i * 7 + 3), "k": 10, "ef": 40});
        let (_, a) = server.post("/collections/src/query", q.clone()).await;
        let (_, b) = server.post("/collections/copy/query", q).await;
        assert_eq!(a, b);
    }

    let resp = import("copy", snapshot.to_vec()).await.unwrap();
    assert_eq!(resp.status().as_u16(), 409);

    let mut broken = snapshot.to_vec();
    let third_line = broken
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(1)
        .map(|(i, _)| i + 1)
        .unwrap();
    broken.splice(third_line..third_line, b"{not json}\n".iter().copied());
    let resp = import("broken", broken).await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["code"], "parse_error");
    assert_eq!(body["error"]["line"], 3);
    assert!(!dir.path().join("collections/broken").exists());

    let resp = import("empty", Vec::new()).await.unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    let topology = server
        .client
        .get(format!("{}/collections/src/export?includeVectors=false", server.base))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(!topology.contains("\"type\":\"vector\""));
    let resp = import("topology", topology.into_bytes()).await.unwrap();
    assert_eq!(resp.status().as_u16(), 400, "a fresh store cannot satisfy a topology-only snapshot");

    let (status, body) = server.get("/collections/copy/consistency").await;
    assert_eq!(status, 200);
    assert_eq!(body["consistent"], true);
    assert_eq!(body["graphKeys"], 300);
    server.stop().await;
}

#[tokio::test]
async fn collections_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    seed_collection(&server, "kept", 50).await;
    let q = json!({"vector": unit(4), "k": 5});
    let (_, before) = server.post("/collections/kept/query", q.clone()).await;
    server.stop().await;

    // a creation that died before its first snapshot was written
    let half = dir.path().join("collections/half");
    std::fs::create_dir_all(&half).unwrap();
    drop(burrow::DiskStore::open(&half, DIM).unwrap());

    let server = Server::start(config(dir.path())).await;
    let (_, after) = server.post("/collections/kept/query", q).await;
    assert_eq!(before, after);
    let (status, _) = server.get("/collections/half").await;
    assert_eq!(status, 404);
    assert!(!half.exists());
    server.stop().await;
}

#[tokio::test]
async fn serves_ui_files_outside_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>playground</html>").unwrap();
    let mut cfg = config(dir.path());
    cfg.ui_dir = Some(ui.path().to_path_buf());
    let server = Server::start(cfg).await;
    let root = server.base.trim_end_matches("/api").to_owned();
    for path in ["/", "/index.html", "/some/client/route"] {
        let resp = server.client.get(format!("{root}{path}")).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), 200, "{path}");
        assert_eq!(resp.text().await.unwrap(), "<html>playground</html>");
    }
    let (status, _) = server.get("/health").await;
    assert_eq!(status, 200);
    server.stop().await;
}

#[tokio::test]
async fn running_builds_can_be_cancelled() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(config(dir.path())).await;
    let (status, _) = server
        .post("/collections", json!({"name": "big", "dimension": DIM, "efConstruction": 400}))
        .await;
    assert_eq!(status, 201);
    let keys: Vec<String> = (0..20_000).map(|i| format!("k{i:05}")).collect();
    let vectors: Vec<Vec<f64>> = (0..20_000)
        .map(|i| (0..DIM).map(|d| (((i * 31 + d * 17) % 97) as f64) + 1.0).collect())
        .collect();
    let (status, _) = server
        .post("/collections/big/documents", json!({"keys": keys, "vectors": vectors}))
        .await;
    assert_eq!(status, 202);

    let (status, body) = server
        .post("/collections/big/documents", json!({"documents": [{"key": "x", "vector": unit(0)}]}))
        .await;
    assert_eq!(status, 409);
    assert_eq!(body["error"]["code"], "build_in_progress");

    let (status, body) = server.send(reqwest::Method::DELETE, "/collections/big/build", None).await;
    assert_eq!(status, 200);
    assert_eq!(body["state"], "cancelled", "{body}");
    let inserted = body["inserted"].as_u64().unwrap();
    assert!(inserted < 20_000);

    let (_, report) = server.get("/collections/big/consistency").await;
    assert_eq!(report["consistent"], true);
    assert_eq!(report["graphKeys"], inserted);
    let (_, descriptor) = server.get("/collections/big").await;
    assert_eq!(descriptor["count"], inserted);
    assert_eq!(descriptor["building"], false);
    server.stop().await;
}
