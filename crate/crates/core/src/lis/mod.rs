//! Layout-to-image synthesis adapters.
//!
//! The diffusion model runs out of process; this module defines the request
//! and batch contract, checks it at the adapter boundary for every backend,
//! and ships an HTTP client plus a deterministic mock renderer.

mod http;
mod mock;

pub use http::HttpSynthesisBackend;
pub use mock::{category_colors, mock_render, Hallucination, MockRenderer, BACKGROUND};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Layout, PixelRect};

#[derive(Debug, Error)]
pub enum LisError {
    #[error("invalid synthesis request: {0}")]
    InvalidRequest(String),
    /// Transport or server failure; the request may be retried.
    #[error("synthesis backend failure: {0}")]
    Backend(String),
    #[error("synthesis protocol error: {0}")]
    Protocol(String),
}

impl LisError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LisError::Backend(_))
    }
}

/// Sampler settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub batch_size: usize,
    /// Denoising steps.
    pub steps: u32,
    pub guidance_scale: f64,
    /// Fraction of timesteps using grounding inputs.
    pub grounding_alpha: f64,
    /// Fraction of timesteps using the multi-instance sampler.
    pub mis_fraction: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            batch_size: 5,
            steps: 50,
            guidance_scale: 7.5,
            grounding_alpha: 0.8,
            mis_fraction: 0.36,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub layout: Layout,
    pub prompt: String,
    pub params: SynthesisParams,
    pub seed: u64,
    /// Optional per-box instance masks in box-local pixels; boxes only when `None`.
    pub masks: Option<Vec<Option<GrayImage>>>,
}

impl SynthesisRequest {
    pub fn new(layout: Layout, prompt: String, params: SynthesisParams, seed: u64) -> Self {
        Self {
            layout,
            prompt,
            params,
            seed,
            masks: None,
        }
    }

    pub fn validate(&self) -> Result<(), LisError> {
        let p = &self.params;
        let bad = |m: &str| Err(LisError::InvalidRequest(m.to_string()));
        if p.batch_size < 1 {
            return bad("batch size must be >= 1");
        }
        if p.steps < 1 {
            return bad("steps must be >= 1");
        }
        if !(0.0..=1.0).contains(&p.grounding_alpha) {
            return bad("grounding alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&p.mis_fraction) {
            return bad("multi-instance sampler fraction must lie in [0, 1]");
        }
        if !p.guidance_scale.is_finite() {
            return bad("guidance scale must be finite");
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.layout.objects.len() {
                return bad("one mask slot per layout box is required");
            }
        }
        self.layout.validate().map_err(LisError::InvalidRequest)
    }
}

/// Per-image side information reported by a backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderMetadata {
    /// Injected out-of-layout content (mock renderer only).
    pub hallucinations: Vec<Hallucination>,
}

#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Vec<RgbImage>,
    pub request: SynthesisRequest,
    pub backend_id: String,
    /// Empty, or one entry per image.
    pub metadata: Vec<RenderMetadata>,
}

pub trait SynthesisBackend: Send + Sync {
    fn id(&self) -> String;

    fn is_deterministic(&self) -> bool;

    fn synthesize(&self, request: &SynthesisRequest) -> Result<ImageBatch, LisError>;
}

/// Calls `backend` with request and response checks applied.
pub fn synthesize_checked(
    backend: &dyn SynthesisBackend,
    request: &SynthesisRequest,
) -> Result<ImageBatch, LisError> {
    request.validate()?;
    let batch = backend.synthesize(request)?;
    let frame = request.layout.frame;
    if batch.images.len() != request.params.batch_size {
        return Err(LisError::Protocol(format!(
            "expected {} images, got {}",
            request.params.batch_size,
            batch.images.len()
        )));
    }
    if let Some(img) = batch
        .images
        .iter()
        .find(|i| i.width() != frame.width || i.height() != frame.height)
    {
        return Err(LisError::Protocol(format!(
            "image is {}x{}, layout frame is {}x{}",
            img.width(),
            img.height(),
            frame.width,
            frame.height
        )));
    }
    if !batch.metadata.is_empty() && batch.metadata.len() != batch.images.len() {
        return Err(LisError::Protocol("metadata count does not match images".into()));
    }
    Ok(batch)
}

/// Text prompt wrapped around a layout caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub prefix: String,
    pub suffix: String,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            prefix: "a photo of ".into(),
            suffix: String::new(),
        }
    }
}

/// `prefix + caption`, followed by `", " + suffix` when a suffix is set.
pub fn build_lis_prompt(layout: &Layout, style: &PromptStyle) -> String {
    let mut prompt = format!("{}{}", style.prefix, layout.caption);
    if !style.suffix.trim().is_empty() {
        prompt.push_str(", ");
        prompt.push_str(style.suffix.trim());
    }
    prompt
}

/// Pixel rectangles of every layout box.
pub fn layout_rects(layout: &Layout) -> Vec<PixelRect> {
    layout
        .objects
        .iter()
        .map(|o| o.bbox.pixel_rect(layout.frame))
        .collect()
}
