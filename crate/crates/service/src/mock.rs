//! Deterministic stand-ins for the embedding and completion endpoints.
//!
//! `POST /embed` hashes the lowercase word tokens of the text into a
//! fixed-size vector and normalizes it, so equal texts embed identically
//! and texts sharing words end up close. `POST /complete` echoes the
//! prompt back as the completion.

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::ApiJson;

#[derive(Deserialize)]
struct EmbedRequest {
    text: String,
}

#[derive(Serialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct CompleteRequest {
    prompt: String,
}

#[derive(Serialize)]
struct CompleteResponse {
    completion: String,
}

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Unit-norm bag-of-words embedding of `text`. Text without any word
/// characters maps to the first basis vector.
pub fn hash_embedding(text: &str, dimension: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = fnv1a(token.to_lowercase().as_bytes());
        let slot = (h % dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[slot] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

async fn embed(State(dimension): State<usize>, ApiJson(req): ApiJson<EmbedRequest>) -> Json<EmbedResponse> {
    Json(EmbedResponse {
        embedding: hash_embedding(&req.text, dimension),
    })
}

async fn complete(ApiJson(req): ApiJson<CompleteRequest>) -> Json<CompleteResponse> {
    Json(CompleteResponse { completion: req.prompt })
}

/// Router serving `/embed` with vectors of `dimension` and `/complete`.
pub fn router(dimension: usize) -> Router {
    Router::new()
        .route("/embed", post(embed))
        .route("/complete", post(complete))
        .with_state(dimension.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let a = hash_embedding("Attention is all you need", 64);
        assert_eq!(a, hash_embedding("attention IS all you need!", 64));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_ne!(a, hash_embedding("graph neural networks", 64));
        assert_eq!(hash_embedding("  ", 4), vec![1.0, 0.0, 0.0, 0.0]);
    }
}
