use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use burrow_service::{mock, Service, ServiceConfig, DEFAULT_MAX_BODY_BYTES};
use clap::Args;
use serde::Serialize;
use tokio::net::TcpListener;

use crate::error::{CliError, CliResult};
use crate::emit;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding the collections.
    #[arg(long, default_value = "burrow-data")]
    pub data_dir: PathBuf,
    /// Port to listen on; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Embedding endpoint: POST {"text"} -> {"embedding"}.
    #[arg(long)]
    pub embedding_url: Option<String>,
    /// Completion endpoint: POST {"prompt"} -> {"completion"}.
    #[arg(long)]
    pub llm_url: Option<String>,
    /// Built UI bundle served outside /api.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Timeout for provider calls, in seconds.
    #[arg(long, default_value_t = 30)]
    pub provider_timeout: u64,
    /// Largest accepted JSON request body, in bytes.
    #[arg(long, default_value_t = DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value_t = 8090)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Length of the embeddings returned by /embed.
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
}

#[derive(Serialize)]
struct Listening<'a> {
    record: &'static str,
    service: &'a str,
    address: String,
    url: String,
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(format!("could not start the runtime: {e}")))
}

async fn bind(host: &str, port: u16) -> CliResult<TcpListener> {
    TcpListener::bind((host, port)).await.map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse | io::ErrorKind::AddrNotAvailable | io::ErrorKind::PermissionDenied => {
            CliError::user(format!("cannot listen on {host}:{port}: {e}"))
        }
        _ => CliError::internal(format!("cannot listen on {host}:{port}: {e}")),
    })
}

fn announce(service: &str, address: SocketAddr, path: &str) -> CliResult {
    let mut out = io::stdout().lock();
    emit(
        &mut out,
        &Listening {
            record: "listening",
            service,
            address: address.to_string(),
            url: format!("http://{address}{path}"),
        },
    )?;
    out.flush()?;
    Ok(())
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
async fn interrupted() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    {
        let term = async {
            match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(mut s) => {
                    s.recv().await;
                }
                Err(_) => std::future::pending::<()>().await,
            }
        };
        tokio::select! {
            _ = ctrl_c => {}
            _ = term => {}
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}

pub fn serve(args: ServeArgs) -> CliResult {
    runtime()?.block_on(async move {
        let listener = bind(&args.host, args.port).await?;
        let config = ServiceConfig {
            data_dir: args.data_dir.clone(),
            embedding_url: args.embedding_url,
            llm_url: args.llm_url,
            provider_timeout: Duration::from_secs(args.provider_timeout),
            ui_dir: args.ui_dir,
            max_body_bytes: args.max_body_bytes,
        };
        let service = Service::open(config)
            .await
            .map_err(|e| CliError::from(e).context(args.data_dir.display()))?;
        announce("api", listener.local_addr()?, "/api")?;
        service.serve(listener, interrupted()).await?;
        Ok(())
    })
}

pub fn mock_providers(args: MockArgs) -> CliResult {
    if args.dim == 0 {
        return Err(CliError::user("--dim must be at least 1"));
    }
    runtime()?.block_on(async move {
        let listener = bind(&args.host, args.port).await?;
        announce("mock-providers", listener.local_addr()?, "")?;
        axum::serve(listener, mock::router(args.dim))
            .with_graceful_shutdown(interrupted())
            .await?;
        Ok(())
    })
}
