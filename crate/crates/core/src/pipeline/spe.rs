//! Layout extrapolation stage with an on-disk cache.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{Backends, PipelineConfig, PipelineError, SpeMethod};
use crate::annotations::{oversample_gtos, FewShotSet, ImageFrame, Layout};
use crate::gmm::{fit_ensemble, sample_layouts, EnsembleOptions, EnsembleVariant};
use crate::llm::{generate_layouts, GenerationOptions, TemplateText};
use crate::seed::{derive_seed, stage};

/// How one generated layout came about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeSlot {
    pub round: usize,
    pub gt_index: usize,
    /// Completion attempts (language model only).
    pub attempts: usize,
    /// The slot fell back to a ground-truth copy or ground-truth counts.
    pub fallback: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeOutput {
    pub method: SpeMethod,
    pub backend_id: String,
    pub alpha: usize,
    /// Round-major: entry `r·N + i` is round `r` for ground-truth layout `i`.
    pub layouts: Vec<Layout>,
    pub slots: Vec<SpeSlot>,
}

impl SpeOutput {
    /// The first `alpha` rounds.
    pub fn prefix(&self, alpha: usize, n_gt: usize) -> (&[Layout], &[SpeSlot]) {
        let k = (alpha * n_gt).min(self.layouts.len());
        (&self.layouts[..k], &self.slots[..k])
    }
}

fn cache_key(set: &FewShotSet, config: &PipelineConfig, alpha: usize, backend_id: &str) -> String {
    let method_opts = match config.spe_method {
        SpeMethod::Llm => serde_json::to_value(&config.llm).expect("serializes"),
        SpeMethod::Gmm1 | SpeMethod::Gmm2 => serde_json::to_value(&config.gmm).expect("serializes"),
        SpeMethod::Gtos => json!(null),
    };
    let doc = json!({
        "method": config.spe_method,
        "alpha": alpha,
        "seed": config.seed,
        "options": method_opts,
        "backend": backend_id,
        "layouts": set.layouts,
    });
    let digest = Sha256::digest(serde_json::to_vec(&doc).expect("serializes"));
    hex::encode(&digest[..8])
}

/// Produces `alpha × |set.layouts|` layouts with the configured method.
///
/// With `cache_dir` set, the result is stored there and reused by any later
/// call with the same inputs.
pub fn extrapolate(
    set: &FewShotSet,
    config: &PipelineConfig,
    alpha: usize,
    backends: &Backends,
    cache_dir: Option<&Path>,
) -> Result<SpeOutput, PipelineError> {
    let backend_id = match config.spe_method {
        SpeMethod::Llm => backends.llm.id(),
        m => m.to_string(),
    };
    let cache = cache_dir.map(|d| {
        d.join(format!(
            "{}_a{alpha}_{}.json",
            config.spe_method,
            cache_key(set, config, alpha, &backend_id)
        ))
    });
    if let Some(path) = &cache {
        if let Ok(text) = std::fs::read_to_string(path) {
            match serde_json::from_str::<SpeOutput>(&text) {
                Ok(out) => {
                    log::info!("reusing layouts from {}", path.display());
                    return Ok(out);
                }
                Err(e) => log::warn!("ignoring unreadable layout cache {}: {e}", path.display()),
            }
        }
    }

    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let n = set.layouts.len();
    let plain_slot = |slot: usize| SpeSlot {
        round: slot / n.max(1),
        gt_index: slot % n.max(1),
        attempts: 0,
        fallback: false,
        notes: vec![],
    };
    let (layouts, slots) = match config.spe_method {
        SpeMethod::Gtos => {
            let layouts = oversample_gtos(set, alpha, derive_seed(config.seed, &[stage::GTOS]))?;
            let slots = (0..layouts.len()).map(plain_slot).collect();
            (layouts, slots)
        }
        SpeMethod::Llm => {
            let template = match &config.llm.template {
                Some(p) => TemplateText::from_file(p).map_err(|e| PipelineError::Config(e.to_string()))?,
                None => TemplateText::default(),
            };
            let opts = GenerationOptions {
                alpha,
                batch_size: config.llm.example_batch,
                max_retries: config.llm.max_retries,
                seed: config.seed,
                temperature: config.llm.temperature,
                max_tokens: config.llm.max_tokens,
                canvas: ImageFrame::new(config.llm.canvas, config.llm.canvas),
                template,
            };
            let out = generate_layouts(set, backends.llm.as_ref(), &opts)?;
            let slots = out
                .records
                .into_iter()
                .map(|r| SpeSlot {
                    round: r.round,
                    gt_index: r.gt_index,
                    attempts: r.attempts,
                    fallback: r.fallback,
                    notes: r.failures,
                })
                .collect();
            (out.layouts, slots)
        }
        SpeMethod::Gmm1 | SpeMethod::Gmm2 => {
            let variant = if config.spe_method == SpeMethod::Gmm1 {
                EnsembleVariant::DraftFromGt
            } else {
                EnsembleVariant::FittedCooccurrence
            };
            let opts = EnsembleOptions {
                components: config.gmm.components,
                covariance: config.gmm.covariance,
                max_iters: config.gmm.max_iters,
                tol: config.gmm.tol,
                seed: config.seed,
            };
            let ensemble = fit_ensemble(set, variant, &opts)?;
            if let Some(dir) = cache_dir {
                ensemble.save(&dir.join(format!("{}_ensemble.json", config.spe_method)))?;
            }
            let out = sample_layouts(&ensemble, set, alpha, config.seed)?;
            let slots = out
                .records
                .into_iter()
                .map(|r| {
                    let mut notes = Vec::new();
                    if r.resampled_boxes > 0 {
                        notes.push(format!("{} boxes redrawn", r.resampled_boxes));
                    }
                    if r.repaired_boxes > 0 {
                        notes.push(format!("{} boxes clamped", r.repaired_boxes));
                    }
                    for c in &r.fallback_categories {
                        notes.push(format!("ground-truth box reused for {c}"));
                    }
                    SpeSlot {
                        round: r.round,
                        gt_index: r.gt_index,
                        attempts: 1 + r.rejected_drafts,
                        fallback: r.draft_fallback || !r.fallback_categories.is_empty(),
                        notes,
                    }
                })
                .collect();
            (out.layouts, slots)
        }
    };
    let out = SpeOutput {
        method: config.spe_method,
        backend_id,
        alpha,
        layouts,
        slots,
    };
    if let Some(path) = &cache {
        let text = serde_json::to_string(&out).expect("serializes");
        super::run::write_atomic(path, text.as_bytes())?;
    }
    Ok(out)
}
