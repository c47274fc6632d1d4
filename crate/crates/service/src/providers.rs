//! Clients for the external embedding and completion endpoints.
//!
//! Embedding: `POST {"text": "..."}` → `{"embedding": [f64, ...]}`.
//! Completion: `POST {"prompt": "..."}` → `{"completion": "..."}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompleteResponse {
    completion: String,
}

#[derive(Debug, Clone)]
pub struct Providers {
    client: reqwest::Client,
    embedding_url: Option<String>,
    llm_url: Option<String>,
}

impl Providers {
    pub fn new(embedding_url: Option<String>, llm_url: Option<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client configuration is static");
        Self {
            client,
            embedding_url,
            llm_url,
        }
    }

    pub fn has_embedding(&self) -> bool {
        self.embedding_url.is_some()
    }

    pub fn has_llm(&self) -> bool {
        self.llm_url.is_some()
    }

    pub async fn embed(&self, text: &str) -> Result<Vec<f64>, ApiError> {
        let Some(url) = &self.embedding_url else {
            return Err(ApiError::not_configured(
                "text queries need an embedding endpoint; start the service with --embedding-url or send a vector",
            ));
        };
        let response: EmbedResponse = self.post(url, &EmbedRequest { text }, "embedding").await?;
        Ok(response.embedding)
    }

    /// `Ok(None)` when no completion endpoint is configured.
    pub async fn complete(&self, prompt: &str) -> Result<Option<String>, ApiError> {
        let Some(url) = &self.llm_url else {
            return Ok(None);
        };
        let response: CompleteResponse = self.post(url, &CompleteRequest { prompt }, "completion").await?;
        Ok(Some(response.completion))
    }

    async fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        url: &str,
        body: &B,
        what: &str,
    ) -> Result<R, ApiError> {
        let response = self
            .client
            .post(url)
            .json(body)
            .send()
            .await
            .map_err(|e| ApiError::upstream(format!("{what} endpoint {url} unreachable: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(ApiError::upstream(format!(
                "{what} endpoint {url} answered {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        response
            .json()
            .await
            .map_err(|e| ApiError::upstream(format!("{what} endpoint {url} sent an unexpected body: {e}")))
    }
}
