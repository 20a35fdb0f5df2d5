//! Run configuration: one document (TOML or JSON) with every knob of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gmm::CovarianceKind;
use crate::lis::{PromptStyle, SynthesisParams};
use crate::llm::DEFAULT_CANVAS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeMethod {
    /// In-context completion by a language model.
    Llm,
    /// Per-category mixtures, co-occurrence copied from the seed layout.
    Gmm1,
    /// Per-category mixtures plus a fitted co-occurrence mixture.
    Gmm2,
    /// Ground-truth oversampling with random horizontal flips.
    Gtos,
}

impl std::str::FromStr for SpeMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "llm" => Ok(Self::Llm),
            "gmm1" | "gmm_v1" => Ok(Self::Gmm1),
            "gmm2" | "gmm_v2" => Ok(Self::Gmm2),
            "gtos" => Ok(Self::Gtos),
            other => Err(format!("unknown layout method {other:?} (llm, gmm1, gmm2, gtos)")),
        }
    }
}

impl std::fmt::Display for SpeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Llm => "llm",
            Self::Gmm1 => "gmm1",
            Self::Gmm2 => "gmm2",
            Self::Gtos => "gtos",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Base URL of an OpenAI-compatible completions server.
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: String,
    /// Directory of recorded completions, used instead of an endpoint.
    pub canned_dir: Option<PathBuf>,
    /// Ground-truth layouts per in-context example batch.
    pub example_batch: usize,
    pub max_retries: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Square canvas side the model sees.
    pub canvas: u32,
    pub template: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "mistralai/Mixtral-8x7B-Instruct-v0.1".into(),
            api_key_env: "AUGMENT_LLM_API_KEY".into(),
            canned_dir: None,
            example_batch: 5,
            max_retries: 3,
            temperature: 0.7,
            max_tokens: 512,
            canvas: DEFAULT_CANVAS.width,
            template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub components: usize,
    pub covariance: CovarianceKind,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: 3,
            covariance: CovarianceKind::Full,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LisConfig {
    pub endpoint: Option<String>,
    pub api_key_env: String,
    pub steps: u32,
    pub guidance_scale: f64,
    pub grounding_alpha: f64,
    pub mis_fraction: f64,
    pub prompt_prefix: String,
    pub prompt_suffix: String,
    /// Extra attempts after a transport failure.
    pub max_retries: usize,
}

impl Default for LisConfig {
    fn default() -> Self {
        let p = SynthesisParams::default();
        let style = PromptStyle::default();
        Self {
            endpoint: None,
            api_key_env: "AUGMENT_LIS_API_KEY".into(),
            steps: p.steps,
            guidance_scale: p.guidance_scale,
            grounding_alpha: p.grounding_alpha,
            mis_fraction: p.mis_fraction,
            prompt_prefix: style.prefix,
            prompt_suffix: style.suffix,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub endpoint: Option<String>,
    pub model: String,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "ViT-L/14".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub annotations: PathBuf,
    pub shot_list: Option<PathBuf>,
    pub spe_method: SpeMethod,
    /// Generated layouts per ground-truth layout.
    pub alpha: usize,
    /// Images synthesized per layout.
    pub lis_batch: usize,
    /// Images kept per layout after ranking.
    pub top_n: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Replace every external backend with its deterministic mock.
    pub mock: bool,
    pub mock_hallucination_rate: f64,
    /// Heatmap grid `[width, height]`.
    pub heatmap_resolution: [u32; 2],
    /// Worker threads for synthesis and scoring; 0 picks a default.
    pub workers: usize,
    pub sweep: Option<Vec<usize>>,
    pub topn_study: Option<Vec<usize>>,
    pub llm: LlmConfig,
    pub gmm: GmmConfig,
    pub lis: LisConfig,
    pub scorer: ScorerConfig,
}

pub const DEFAULT_SWEEP: [usize; 5] = [1, 2, 4, 8, 16];
pub const TOPN_STUDY_BATCH: usize = 8;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            annotations: PathBuf::new(),
            shot_list: None,
            spe_method: SpeMethod::Llm,
            alpha: 4,
            lis_batch: SynthesisParams::default().batch_size,
            top_n: 1,
            seed: 0,
            out: PathBuf::from("out"),
            mock: false,
            mock_hallucination_rate: 0.3,
            heatmap_resolution: [64, 64],
            workers: 0,
            sweep: None,
            topn_study: None,
            llm: LlmConfig::default(),
            gmm: GmmConfig::default(),
            lis: LisConfig::default(),
            scorer: ScorerConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a `.toml` or `.json` document; missing keys take their defaults.
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn synthesis_params(&self) -> SynthesisParams {
        SynthesisParams {
            batch_size: self.lis_batch,
            steps: self.lis.steps,
            guidance_scale: self.lis.guidance_scale,
            grounding_alpha: self.lis.grounding_alpha,
            mis_fraction: self.lis.mis_fraction,
        }
    }

    pub fn prompt_style(&self) -> PromptStyle {
        PromptStyle {
            prefix: self.lis.prompt_prefix.clone(),
            suffix: self.lis.prompt_suffix.clone(),
        }
    }

    pub fn sweep_ratios(&self) -> Vec<usize> {
        self.sweep.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.alpha < 1 {
            return bad("alpha must be >= 1".into());
        }
        if self.lis_batch < 1 {
            return bad("lis_batch must be >= 1".into());
        }
        if self.top_n < 1 || self.top_n > self.lis_batch {
            return bad(format!(
                "top_n must lie in [1, lis_batch = {}], got {}",
                self.lis_batch, self.top_n
            ));
        }
        if self.llm.example_batch < 1 {
            return bad("llm.example_batch must be >= 1".into());
        }
        if self.llm.canvas == 0 {
            return bad("llm.canvas must be positive".into());
        }
        if self.gmm.components < 1 {
            return bad("gmm.components must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.mock_hallucination_rate) {
            return bad("mock_hallucination_rate must lie in [0, 1]".into());
        }
        if self.heatmap_resolution.contains(&0) {
            return bad("heatmap_resolution must be positive".into());
        }
        if let Some(s) = &self.sweep {
            if s.is_empty() || s.contains(&0) {
                return bad("sweep must be a non-empty list of ratios >= 1".into());
            }
        }
        if let Some(t) = &self.topn_study {
            if t.is_empty() {
                return bad("topn_study must not be empty".into());
            }
            if let Some(n) = t.iter().find(|&&n| n < 1 || n > self.lis_batch) {
                return bad(format!(
                    "topn_study value {n} outside [1, lis_batch = {}]",
                    self.lis_batch
                ));
            }
        }
        self.synthesis_params_check()
    }

    fn synthesis_params_check(&self) -> Result<(), PipelineError> {
        let p = self.synthesis_params();
        if p.steps < 1
            || !(0.0..=1.0).contains(&p.grounding_alpha)
            || !(0.0..=1.0).contains(&p.mis_fraction)
            || !p.guidance_scale.is_finite()
        {
            return Err(PipelineError::Config(format!("invalid synthesis parameters {p:?}")));
        }
        Ok(())
    }
}
