//! Augmentation-ratio sweep and top-n picking study.
//!
//! Neither mode trains a detector; the reports carry dataset statistics and
//! quality metrics for downstream training jobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{assemble, load_set, process_layouts, write_atomic};
use super::spe::extrapolate;
use super::{Backends, PipelineConfig, PipelineError};

pub const EPOCH_RESCALING_NOTE: &str = "Datasets differ in size with top_n. When training on them, scale back \
the number of epochs with respect to the number of samples picked so that every variant sees a comparable \
number of iterations.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: usize,
    pub n_generated_layouts: usize,
    pub n_generated_images: usize,
    pub n_dataset_images: usize,
    pub mlacs: f64,
    pub mlacs_all: f64,
    pub cs_crop: Option<f64>,
    /// Relative to the output root.
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub spe_method: super::SpeMethod,
    pub n_gt_layouts: usize,
    pub top_n: usize,
    pub entries: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopnEntry {
    pub top_n: usize,
    pub n_generated_images: usize,
    pub n_dataset_images: usize,
    pub mlacs: f64,
    pub cs_crop: Option<f64>,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopnReport {
    pub batch_size: usize,
    pub alpha: usize,
    pub n_gt_layouts: usize,
    pub entries: Vec<TopnEntry>,
    pub epoch_rescaling_note: String,
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<(), PipelineError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| PipelineError::io(d, e))?;
    }
    let text = serde_json::to_string_pretty(report).expect("serializes") + "\n";
    write_atomic(path, text.as_bytes())
}

/// Builds one dataset per augmentation ratio in `config.sweep` (default
/// `{1, 2, 4, 8, 16}`), written to `sweep/alpha_{α}/`.
///
/// Layouts are generated once for the largest ratio; each smaller ratio uses
/// a prefix of that stream, so its synthesized images are shared.
pub fn sweep_ratios(config: &PipelineConfig, backends: &Backends) -> Result<SweepReport, PipelineError> {
    config.validate()?;
    let mut ratios = config.sweep_ratios();
    ratios.sort_unstable();
    ratios.dedup();
    let max = *ratios.last().expect("validated non-empty");
    let set = load_set(config)?;
    let out = &config.out;
    let spe = extrapolate(&set, config, max, backends, Some(&out.join("spe")))?;

    let mut entries = Vec::new();
    for &alpha in &ratios {
        let (layouts, slots) = spe.prefix(alpha, set.layouts.len());
        let (works, synthesized) = process_layouts(config, backends, &set.categories, layouts, out)?;
        let rel = format!("sweep/alpha_{alpha}");
        let o = assemble(config, &set, &works, slots, &spe.backend_id, config.top_n, &out.join(&rel), synthesized)?;
        log::info!("alpha {alpha}: {} new layouts synthesized, mLACS {:.4}", synthesized, o.summary.quality.mlacs);
        entries.push(SweepEntry {
            alpha,
            n_generated_layouts: works.len(),
            n_generated_images: o.summary.n_generated_images,
            n_dataset_images: o.summary.n_dataset_images,
            mlacs: o.summary.quality.mlacs,
            mlacs_all: o.summary.quality.mlacs_all,
            cs_crop: o.summary.quality.cs_crop,
            dataset: format!("{rel}/dataset.json"),
        });
    }
    let report = SweepReport {
        spe_method: config.spe_method,
        n_gt_layouts: set.layouts.len(),
        top_n: config.top_n,
        entries,
    };
    write_report(&out.join("sweep/report.json"), &report)?;
    Ok(report)
}

/// Builds one dataset per value of `config.topn_study` from a single
/// synthesis run, written to `topn/top_{n}/`.
pub fn topn_study(config: &PipelineConfig, backends: &Backends) -> Result<TopnReport, PipelineError> {
    config.validate()?;
    let mut values = config
        .topn_study
        .clone()
        .ok_or_else(|| PipelineError::Config("topn_study list is not set".into()))?;
    values.sort_unstable();
    values.dedup();
    let set = load_set(config)?;
    let out = &config.out;
    let spe = extrapolate(&set, config, config.alpha, backends, Some(&out.join("spe")))?;
    let (works, synthesized) = process_layouts(config, backends, &set.categories, &spe.layouts, out)?;

    let mut entries = Vec::new();
    for &n in &values {
        let rel = format!("topn/top_{n}");
        let o = assemble(config, &set, &works, &spe.slots, &spe.backend_id, n, &out.join(&rel), synthesized)?;
        entries.push(TopnEntry {
            top_n: n,
            n_generated_images: o.summary.n_generated_images,
            n_dataset_images: o.summary.n_dataset_images,
            mlacs: o.summary.quality.mlacs,
            cs_crop: o.summary.quality.cs_crop,
            dataset: format!("{rel}/dataset.json"),
        });
    }
    let report = TopnReport {
        batch_size: config.lis_batch,
        alpha: config.alpha,
        n_gt_layouts: set.layouts.len(),
        entries,
        epoch_rescaling_note: EPOCH_RESCALING_NOTE.into(),
    };
    write_report(&out.join("topn/report.json"), &report)?;
    Ok(report)
}
