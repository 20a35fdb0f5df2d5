//! JSON-over-HTTP client for an external image-text similarity service.
//!
//! `POST {endpoint}/logits` with `{model, image: <base64 PNG>, texts: [...]}`;
//! the service answers `{logits: [...]}`, one cosine-similarity logit per text.

use std::time::Duration;

use image::RgbImage;
use serde::Deserialize;
use serde_json::json;

use super::{ImageTextScorer, LacsError};
use crate::png;

pub struct HttpClipScorer {
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f64>,
}

impl HttpClipScorer {
    pub fn new(endpoint: &str, model: &str) -> Result<Self, LacsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LacsError::Scorer(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            client,
        })
    }
}

impl ImageTextScorer for HttpClipScorer {
    fn id(&self) -> String {
        format!("http:{}#{}", self.endpoint, self.model)
    }

    fn logits(&self, image: &RgbImage, texts: &[String]) -> Result<Vec<f64>, LacsError> {
        let body = json!({
            "model": self.model,
            "image": png::encode_base64(image),
            "texts": texts,
        });
        let resp = self
            .client
            .post(format!("{}/logits", self.endpoint))
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| LacsError::Scorer(e.to_string()))?;
        let parsed: LogitsResponse = resp
            .json()
            .map_err(|e| LacsError::Scorer(format!("malformed response: {e}")))?;
        if parsed.logits.len() != texts.len() {
            return Err(LacsError::Scorer(format!(
                "expected {} logits, got {}",
                texts.len(),
                parsed.logits.len()
            )));
        }
        Ok(parsed.logits)
    }
}
