//! JSON-over-HTTP client for an external layout-to-image service.
//!
//! `POST {endpoint}/synthesize` with
//! `{prompt, boxes: [{name, bbox: [x, y, w, h]}], width, height, batch, steps,
//! guidance, grounding_alpha, mis, seed, masks?}`; the service answers
//! `{images: [<base64 PNG or JPEG>, ...]}`.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ImageBatch, LisError, SynthesisBackend, SynthesisRequest};
use crate::png;

pub struct HttpSynthesisBackend {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct SynthesisResponse {
    images: Vec<String>,
}

impl HttpSynthesisBackend {
    pub fn new(endpoint: &str, api_key_env: &str) -> Result<Self, LisError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(900))
            .build()
            .map_err(|e| LisError::Backend(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            client,
        })
    }

    pub fn request_body(request: &SynthesisRequest) -> serde_json::Value {
        let layout = &request.layout;
        let p = &request.params;
        let mut body = json!({
            "prompt": request.prompt,
            "boxes": layout.objects.iter().map(|o| json!({
                "name": o.category.name,
                "bbox": o.bbox.to_array(),
            })).collect::<Vec<_>>(),
            "width": layout.frame.width,
            "height": layout.frame.height,
            "batch": p.batch_size,
            "steps": p.steps,
            "guidance": p.guidance_scale,
            "grounding_alpha": p.grounding_alpha,
            "mis": p.mis_fraction,
            "seed": request.seed,
        });
        if let Some(masks) = &request.masks {
            body["masks"] = masks
                .iter()
                .map(|m| match m {
                    Some(mask) => {
                        let rgb = image::DynamicImage::ImageLuma8(mask.clone()).into_rgb8();
                        json!(png::encode_base64(&rgb))
                    }
                    None => serde_json::Value::Null,
                })
                .collect();
        }
        body
    }
}

impl SynthesisBackend for HttpSynthesisBackend {
    fn id(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn synthesize(&self, request: &SynthesisRequest) -> Result<ImageBatch, LisError> {
        let mut req = self
            .client
            .post(format!("{}/synthesize", self.endpoint))
            .json(&Self::request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LisError::Backend(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LisError::Backend(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(LisError::Protocol(format!("HTTP {status}")));
        }
        let body: SynthesisResponse = resp.json().map_err(|e| LisError::Protocol(e.to_string()))?;
        let images = body
            .images
            .iter()
            .map(|b| png::decode_base64(b).map_err(LisError::Protocol))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ImageBatch {
            images,
            request: request.clone(),
            backend_id: self.id(),
            metadata: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{BBox, CategoryLabel, ImageFrame, Layout, LayoutObject, LayoutSource};
    use crate::lis::SynthesisParams;

    #[test]
    fn body_carries_layout_and_sampler_settings() {
        let layout = Layout::new(
            ImageFrame::new(640, 480),
            vec![LayoutObject::new(CategoryLabel::new(1, "cat"), BBox::new(1.0, 2.0, 3.0, 4.0))],
            LayoutSource::GroundTruth,
        )
        .unwrap();
        let r = SynthesisRequest::new(layout, "a photo of a cat".into(), SynthesisParams::default(), 9);
        let body = HttpSynthesisBackend::request_body(&r);
        assert_eq!(body["boxes"][0]["name"], "cat");
        assert_eq!(body["boxes"][0]["bbox"], json!([1.0, 2.0, 3.0, 4.0]));
        assert_eq!(body["width"], 640);
        assert_eq!(body["batch"], 5);
        assert_eq!(body["steps"], 50);
        assert_eq!(body["guidance"], 7.5);
        assert_eq!(body["grounding_alpha"], 0.8);
        assert_eq!(body["mis"], 0.36);
        assert!(body.get("masks").is_none());
    }

    #[test]
    fn unreachable_endpoint_is_retryable() {
        let backend = HttpSynthesisBackend::new("http://127.0.0.1:9", "NO_SUCH_KEY_VAR").unwrap();
        let layout = Layout::new(
            ImageFrame::new(8, 8),
            vec![LayoutObject::new(CategoryLabel::new(1, "cat"), BBox::new(1.0, 1.0, 3.0, 3.0))],
            LayoutSource::GroundTruth,
        )
        .unwrap();
        let r = SynthesisRequest::new(layout, "p".into(), SynthesisParams::default(), 0);
        assert!(backend.synthesize(&r).unwrap_err().is_retryable());
    }
}
