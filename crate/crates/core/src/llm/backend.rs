//! Text-completion backends.

use std::path::PathBuf;
use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::parse::parse_objects_list;
use crate::annotations::{caption_names, ImageFrame};
use crate::seed::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: u64,
}

impl CompletionRequest {
    /// Hex SHA-256 of the canonical JSON encoding of the request.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no canned response for request {0}")]
    Missing(String),
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;

    /// Whether identical requests always produce identical text.
    fn is_deterministic(&self) -> bool;

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

/// Client for an OpenAI-compatible `/v1/completions` endpoint.
pub struct OpenAiCompletionBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiCompletionBackend {
    /// `api_key_env` names the environment variable holding the bearer token.
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            client,
        })
    }
}

impl CompletionBackend for OpenAiCompletionBackend {
    fn id(&self) -> String {
        format!("openai:{}@{}", self.model, self.base_url)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "seed": request.seed,
        });
        let mut req = self
            .client
            .post(format!("{}/v1/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("HTTP {status}")));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        value["choices"][0]["text"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("response has no choices[0].text".into()))
    }
}

/// Replays recorded completions from `dir/<request hash>.txt`.
pub struct CannedCompletionBackend {
    dir: PathBuf,
}

impl CannedCompletionBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, request: &CompletionRequest) -> PathBuf {
        self.dir.join(format!("{}.txt", request.hash_hex()))
    }
}

impl CompletionBackend for CannedCompletionBackend {
    fn id(&self) -> String {
        format!("canned:{}", self.dir.display())
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let path = self.path_for(request);
        std::fs::read_to_string(&path).map_err(|_| BackendError::Missing(request.hash_hex()))
    }
}

/// Returns the same text for every request.
pub struct FixedCompletionBackend(pub String);

impl CompletionBackend for FixedCompletionBackend {
    fn id(&self) -> String {
        "fixed".into()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }
}

/// Offline stand-in for a language model.
///
/// Reads the query caption at the end of the prompt and answers with one box
/// per mentioned object: a jittered copy of a random in-context example box of
/// the same name when one exists, otherwise a random box. Output depends only
/// on the request.
pub struct SyntheticCompletionBackend {
    pub canvas: ImageFrame,
    /// Relative jitter applied to borrowed example boxes.
    pub jitter: f64,
}

impl Default for SyntheticCompletionBackend {
    fn default() -> Self {
        Self {
            canvas: super::DEFAULT_CANVAS,
            jitter: 0.15,
        }
    }
}

fn query_caption(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("caption: '")? + "caption: '".len();
    let len = prompt[start..].find('\'')?;
    Some(&prompt[start..start + len])
}

fn example_boxes(prompt: &str) -> Vec<(String, [f64; 4])> {
    prompt
        .match_indices("objects:")
        .filter_map(|(i, _)| parse_objects_list(&prompt[i..]))
        .flatten()
        .collect()
}

impl CompletionBackend for SyntheticCompletionBackend {
    fn id(&self) -> String {
        format!("synthetic-llm(canvas={}x{},jitter={})", self.canvas.width, self.canvas.height, self.jitter)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let caption = query_caption(&request.prompt)
            .ok_or_else(|| BackendError::Protocol("prompt has no query caption".into()))?;
        let examples = example_boxes(&request.prompt);
        let mut rng = rng_from(request.seed, &[0x5359_4e4c]);
        let (cw, ch) = (self.canvas.width as f64, self.canvas.height as f64);
        let mut entries = Vec::new();
        for name in caption_names(caption) {
            let pool: Vec<&[f64; 4]> = examples
                .iter()
                .filter(|(n, _)| n.trim().to_lowercase() == name)
                .map(|(_, b)| b)
                .collect();
            let [x, y, w, h] = if pool.is_empty() {
                let w = rng.random_range(0.1..0.5) * cw;
                let h = rng.random_range(0.1..0.5) * ch;
                [rng.random_range(0.0..cw - w), rng.random_range(0.0..ch - h), w, h]
            } else {
                let b = pool[rng.random_range(0..pool.len())];
                let j = self.jitter;
                let w = (b[2] * (1.0 + rng.random_range(-j..=j))).clamp(1.0, cw);
                let h = (b[3] * (1.0 + rng.random_range(-j..=j))).clamp(1.0, ch);
                let x = b[0] + rng.random_range(-j..=j) * b[2];
                let y = b[1] + rng.random_range(-j..=j) * b[3];
                [x, y, w, h]
            };
            let w = w.round().clamp(1.0, cw);
            let h = h.round().clamp(1.0, ch);
            let x = x.round().clamp(0.0, cw - w);
            let y = y.round().clamp(0.0, ch - h);
            entries.push(format!("'{name}', [{x}, {y}, {w}, {h}]"));
        }
        Ok(format!(" [{}]\n", entries.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str, seed: u64) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 256,
            temperature: 0.7,
            seed,
        }
    }

    #[test]
    fn request_hash_is_content_addressed() {
        assert_eq!(req("a", 1).hash_hex(), req("a", 1).hash_hex());
        assert_ne!(req("a", 1).hash_hex(), req("a", 2).hash_hex());
        assert_eq!(req("a", 1).hash_hex().len(), 64);
    }

    #[test]
    fn canned_backend_reads_by_hash() {
        let dir = tempfile::tempdir().unwrap();
        let backend = CannedCompletionBackend::new(dir.path());
        let r = req("prompt", 3);
        assert!(matches!(backend.complete(&r), Err(BackendError::Missing(_))));
        std::fs::write(backend.path_for(&r), " ['cat', [1, 2, 3, 4]]").unwrap();
        assert_eq!(backend.complete(&r).unwrap(), " ['cat', [1, 2, 3, 4]]");
    }

    #[test]
    fn synthetic_backend_answers_the_query() {
        let prompt = "caption: 'a cat'\nobjects: ['cat', [10, 10, 100, 100]]\n\ncaption: 'a cat, a dog'\nobjects:";
        let b = SyntheticCompletionBackend::default();
        let out = b.complete(&req(prompt, 5)).unwrap();
        let entries = parse_objects_list(&out).unwrap();
        let mut names: Vec<_> = entries.iter().map(|(n, _)| n.as_str()).collect();
        names.sort();
        assert_eq!(names, vec!["cat", "dog"]);
        for (_, [x, y, w, h]) in entries {
            assert!(x >= 0.0 && y >= 0.0 && w >= 1.0 && h >= 1.0);
            assert!(x + w <= 512.0 && y + h <= 512.0);
        }
        assert_eq!(out, b.complete(&req(prompt, 5)).unwrap());
    }
}
