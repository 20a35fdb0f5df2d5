//! End-to-end augmentation: layouts → images → scores → picked dataset.
//!
//! A run extrapolates `α·N` layouts from `N` ground-truth layouts, synthesizes
//! a batch of images per layout, scores every image with LACS, keeps the top
//! `n` of each batch and appends them to the few-shot annotations. Every
//! finished layout is committed to `work/` so an interrupted run resumes
//! without repeating synthesis.

mod config;
mod heatmap;
mod run;
mod spe;
mod study;

pub use config::{
    GmmConfig, LisConfig, LlmConfig, PipelineConfig, ScorerConfig, SpeMethod, DEFAULT_SWEEP,
    TOPN_STUDY_BATCH,
};
pub use heatmap::{colormap, file_stem, heatmap, render_heatmap, write_heatmap, HeatmapGrid};
pub use run::{
    assemble, process_layouts, run, run_with, score_dataset, write_dataset_heatmaps, LayoutWork,
    ProvenanceRecord, RunOutput, RunSummary,
};
pub use spe::{extrapolate, SpeOutput, SpeSlot};
pub use study::{sweep_ratios, topn_study, SweepEntry, SweepReport, TopnEntry, TopnReport, EPOCH_RESCALING_NOTE};

use std::path::Path;

use thiserror::Error;

use crate::annotations::AnnotationError;
use crate::gmm::GmmError;
use crate::lacs::{HttpClipScorer, ImageTextScorer, LacsError, MockScorer};
use crate::lis::{HttpSynthesisBackend, LisError, MockRenderer, SynthesisBackend};
use crate::llm::{
    CannedCompletionBackend, CompletionBackend, OpenAiCompletionBackend, SpeError,
    SyntheticCompletionBackend,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("layout generation: {0}")]
    Spe(#[from] SpeError),
    #[error("layout generation: {0}")]
    Gmm(#[from] GmmError),
    #[error("synthesis of {layout_id}: {source}")]
    Synthesis {
        layout_id: String,
        #[source]
        source: LisError,
    },
    #[error("scoring of {sample}: {source}")]
    Scoring {
        sample: String,
        #[source]
        source: LacsError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// The external models a run talks to.
pub struct Backends {
    pub llm: Box<dyn CompletionBackend>,
    pub lis: Box<dyn SynthesisBackend>,
    pub scorer: Box<dyn ImageTextScorer>,
}

impl Backends {
    /// Deterministic offline stand-ins for all three models.
    pub fn mock(hallucination_rate: f64) -> Self {
        Self {
            llm: Box::new(SyntheticCompletionBackend::default()),
            lis: Box::new(MockRenderer { hallucination_rate }),
            scorer: Box::new(MockScorer::default()),
        }
    }

    /// Builds the backends named by `config`; `mock = true` replaces all of them.
    ///
    /// Backends the configured method does not need may be left unconfigured.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        if config.mock {
            return Ok(Self::mock(config.mock_hallucination_rate));
        }
        let llm: Box<dyn CompletionBackend> = match (&config.llm.endpoint, &config.llm.canned_dir) {
            (Some(url), _) => Box::new(
                OpenAiCompletionBackend::new(url, &config.llm.model, &config.llm.api_key_env)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
            (None, Some(dir)) => Box::new(CannedCompletionBackend::new(dir.clone())),
            (None, None) if config.spe_method == SpeMethod::Llm => {
                return Err(PipelineError::Config(
                    "the llm method needs llm.endpoint, llm.canned_dir or mock".into(),
                ))
            }
            (None, None) => Box::new(Unconfigured),
        };
        let lis: Box<dyn SynthesisBackend> = match &config.lis.endpoint {
            Some(url) => Box::new(
                HttpSynthesisBackend::new(url, &config.lis.api_key_env)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
            None => Box::new(Unconfigured),
        };
        let scorer: Box<dyn ImageTextScorer> = match &config.scorer.endpoint {
            Some(url) if url == "mock" => Box::new(MockScorer::default()),
            Some(url) => Box::new(
                HttpClipScorer::new(url, &config.scorer.model)
                    .map_err(|e| PipelineError::Config(e.to_string()))?,
            ),
            None => Box::new(Unconfigured),
        };
        Ok(Self { llm, lis, scorer })
    }
}

/// Placeholder for a backend the configuration leaves unset; fails on use.
struct Unconfigured;

impl CompletionBackend for Unconfigured {
    fn id(&self) -> String {
        "unconfigured".into()
    }
    fn is_deterministic(&self) -> bool {
        true
    }
    fn complete(&self, _: &crate::llm::CompletionRequest) -> Result<String, crate::llm::BackendError> {
        Err(crate::llm::BackendError::Missing("no language model endpoint configured".into()))
    }
}

impl SynthesisBackend for Unconfigured {
    fn id(&self) -> String {
        "unconfigured".into()
    }
    fn is_deterministic(&self) -> bool {
        true
    }
    fn synthesize(&self, _: &crate::lis::SynthesisRequest) -> Result<crate::lis::ImageBatch, LisError> {
        Err(LisError::InvalidRequest("no synthesis endpoint configured (set lis.endpoint or mock)".into()))
    }
}

impl ImageTextScorer for Unconfigured {
    fn id(&self) -> String {
        "unconfigured".into()
    }
    fn logits(&self, _: &image::RgbImage, _: &[String]) -> Result<Vec<f64>, LacsError> {
        Err(LacsError::Scorer("no scorer endpoint configured (set scorer.endpoint or mock)".into()))
    }
}
