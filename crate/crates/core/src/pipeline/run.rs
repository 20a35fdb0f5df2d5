//! Synthesis, scoring, picking and dataset assembly.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::heatmap::{file_stem, heatmap, write_heatmap};
use super::spe::{extrapolate, SpeSlot};
use super::{Backends, PipelineConfig, PipelineError, SpeMethod};
use crate::annotations::{load_coco, CategoryRegistry, CocoDataset, FewShotSet, Layout, LayoutSource};
use crate::lacs::{
    cs_crop, mlacs, rank_and_pick, score_sample, write_score_records, ImageTextScorer, LacsError,
    QualitySummary, SampleScore, ScoreRecord,
};
use crate::lis::{build_lis_prompt, synthesize_checked, Hallucination, SynthesisRequest};
use crate::seed::{derive_seed, stage};

/// Everything produced for one generated layout; committed to `work/` as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutWork {
    pub layout_id: String,
    /// Hash of every input that influences the images and their scores.
    pub key: String,
    pub slot: usize,
    pub layout: Layout,
    pub prompt: String,
    pub synthesis_seed: u64,
    pub lis_backend: String,
    pub scorer: String,
    pub lis_attempts: usize,
    /// Relative to the output root.
    pub image_files: Vec<String>,
    pub scores: Vec<SampleScore>,
    /// Per image; `None` when no box gave a non-empty crop.
    pub cs_crop: Vec<Option<f64>>,
    pub hallucinations: Vec<Vec<Hallucination>>,
    pub finished_unix_ms: u64,
}

/// One line per synthesized image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub sample_ref: String,
    pub layout_id: String,
    pub image_file: String,
    /// Image id in the merged dataset, for picked samples.
    pub dataset_image_id: Option<u64>,
    pub layout_source: LayoutSource,
    pub spe_round: usize,
    pub gt_image_id: u64,
    pub run_seed: u64,
    pub synthesis_seed: u64,
    pub spe_backend: String,
    pub lis_backend: String,
    pub scorer: String,
    pub spe_attempts: usize,
    pub spe_fallback: bool,
    pub spe_notes: Vec<String>,
    pub lis_attempts: usize,
    pub lacs: f64,
    pub picked: bool,
    pub hallucinations: Vec<Hallucination>,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub quality: QualitySummary,
    pub spe_method: SpeMethod,
    pub alpha: usize,
    pub lis_batch: usize,
    pub top_n: usize,
    pub seed: u64,
    pub annotations: PathBuf,
    pub shot_list: Option<PathBuf>,
    pub n_gt_layouts: usize,
    pub n_generated_layouts: usize,
    pub n_generated_images: usize,
    pub n_dataset_images: usize,
    pub spe_fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: CocoDataset,
    pub summary: RunSummary,
    pub scores: Vec<ScoreRecord>,
    pub provenance: Vec<ProvenanceRecord>,
    /// Layouts synthesized by this call.
    pub synthesized: usize,
    /// Layouts taken from earlier work files.
    pub reused: usize,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn layout_id(slot: usize) -> String {
    format!("L{slot:06}")
}

fn sample_ref(layout_id: &str, k: usize) -> String {
    format!("{layout_id}_{k}")
}

struct Stage<'a> {
    config: &'a PipelineConfig,
    backends: &'a Backends,
    out: &'a Path,
    category_names: Vec<String>,
    score_lock: Mutex<()>,
}

impl Stage<'_> {
    fn work_path(&self, id: &str) -> PathBuf {
        self.out.join("work").join(format!("{id}.json"))
    }

    fn load_work(&self, id: &str, key: &str) -> Option<LayoutWork> {
        let text = std::fs::read_to_string(self.work_path(id)).ok()?;
        let work: LayoutWork = serde_json::from_str(&text).ok()?;
        let complete = work.key == key
            && work.image_files.iter().all(|f| self.out.join(f).is_file());
        complete.then_some(work)
    }

    fn score(&self, image: &RgbImage, layout: &Layout, k: usize) -> Result<(SampleScore, Option<f64>), LacsError> {
        let scorer: &dyn ImageTextScorer = self.backends.scorer.as_ref();
        let _guard = (!scorer.is_concurrent()).then(|| self.score_lock.lock().unwrap_or_else(|e| e.into_inner()));
        let score = score_sample(scorer, image, layout, k)?;
        let crop = match cs_crop(scorer, image, layout, &self.category_names) {
            Ok(v) => Some(v),
            Err(LacsError::NoValidCrops) => None,
            Err(e) => return Err(e),
        };
        Ok((score, crop))
    }

    fn process(&self, slot: usize, layout: &Layout) -> Result<(LayoutWork, bool), PipelineError> {
        let id = layout_id(slot);
        let prompt = build_lis_prompt(layout, &self.config.prompt_style());
        let params = self.config.synthesis_params();
        let seed = derive_seed(self.config.seed, &[stage::SYNTHESIS, slot as u64]);
        let lis_id = self.backends.lis.id();
        let scorer_id = self.backends.scorer.id();
        let key_doc = json!({
            "layout": layout,
            "prompt": prompt,
            "params": params,
            "seed": seed,
            "lis": lis_id,
            "scorer": scorer_id,
            "categories": self.category_names,
        });
        let key = hex::encode(Sha256::digest(serde_json::to_vec(&key_doc).expect("serializes")));
        if let Some(work) = self.load_work(&id, &key) {
            return Ok((work, false));
        }

        let request = SynthesisRequest::new(layout.clone(), prompt.clone(), params, seed);
        let mut attempts = 0;
        let batch = loop {
            attempts += 1;
            match synthesize_checked(self.backends.lis.as_ref(), &request) {
                Ok(b) => break b,
                Err(e) if e.is_retryable() && attempts <= self.config.lis.max_retries => {
                    log::warn!("{id}: synthesis attempt {attempts} failed: {e}");
                }
                Err(e) => return Err(PipelineError::Synthesis { layout_id: id, source: e }),
            }
        };

        let mut image_files = Vec::with_capacity(batch.images.len());
        let mut scores = Vec::with_capacity(batch.images.len());
        let mut crops = Vec::with_capacity(batch.images.len());
        for (k, img) in batch.images.iter().enumerate() {
            let rel = format!("images/{}.png", sample_ref(&id, k));
            let bytes = crate::png::encode(img);
            write_atomic(&self.out.join(&rel), &bytes)?;
            image_files.push(rel);
            let (s, c) = self.score(img, layout, k).map_err(|e| PipelineError::Scoring {
                sample: sample_ref(&id, k),
                source: e,
            })?;
            scores.push(s);
            crops.push(c);
        }
        let hallucinations = if batch.metadata.is_empty() {
            vec![Vec::new(); batch.images.len()]
        } else {
            batch.metadata.into_iter().map(|m| m.hallucinations).collect()
        };
        let work = LayoutWork {
            layout_id: id.clone(),
            key,
            slot,
            layout: layout.clone(),
            prompt,
            synthesis_seed: seed,
            lis_backend: lis_id,
            scorer: scorer_id,
            lis_attempts: attempts,
            image_files,
            scores,
            cs_crop: crops,
            hallucinations,
            finished_unix_ms: now_ms(),
        };
        let text = serde_json::to_string(&work).expect("serializes");
        write_atomic(&self.work_path(&id), text.as_bytes())?;
        Ok((work, true))
    }
}

/// Synthesizes and scores every layout, reusing committed work where the
/// inputs are unchanged. Layout `i` is identified as `L{i:06}`.
///
/// All layouts are attempted even if some fail, so a re-run only repeats the
/// failed ones. Returns the work items in layout order and the number of
/// layouts synthesized by this call.
pub fn process_layouts(
    config: &PipelineConfig,
    backends: &Backends,
    categories: &CategoryRegistry,
    layouts: &[Layout],
    out: &Path,
) -> Result<(Vec<LayoutWork>, usize), PipelineError> {
    for d in [out.join("images"), out.join("work")] {
        std::fs::create_dir_all(&d).map_err(|e| PipelineError::io(&d, e))?;
    }
    let stage = Stage {
        config,
        backends,
        out,
        category_names: categories.names(),
        score_lock: Mutex::new(()),
    };
    let job = || {
        layouts
            .par_iter()
            .enumerate()
            .map(|(slot, l)| stage.process(slot, l))
            .collect::<Vec<_>>()
    };
    let results = if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::Other(e.to_string()))?
            .install(job)
    } else {
        job()
    };
    let mut works = Vec::with_capacity(results.len());
    let mut synthesized = 0;
    let mut first_err = None;
    let mut failed = 0;
    for r in results {
        match r {
            Ok((w, fresh)) => {
                synthesized += fresh as usize;
                works.push(w);
            }
            Err(e) => {
                failed += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        log::error!(
            "{failed} of {} layouts failed; {} completed and will be reused on re-run",
            layouts.len(),
            works.len()
        );
        return Err(e);
    }
    Ok((works, synthesized))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Picks the top `top_n` images of every layout, merges them into the
/// few-shot annotations and writes `dataset.json`, `scores.jsonl`,
/// `summary.json` and `provenance.jsonl` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    config: &PipelineConfig,
    set: &FewShotSet,
    works: &[LayoutWork],
    slots: &[SpeSlot],
    spe_backend: &str,
    top_n: usize,
    dir: &Path,
    synthesized: usize,
) -> Result<RunOutput, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut picked_layouts = Vec::new();
    let mut picked_files = Vec::new();
    let mut picks = Vec::with_capacity(works.len());
    for w in works {
        let p = rank_and_pick(&w.scores, top_n).map_err(|e| PipelineError::Scoring {
            sample: w.layout_id.clone(),
            source: e,
        })?;
        for &k in &p {
            picked_layouts.push(w.layout.clone());
            picked_files.push(w.image_files[k].clone());
        }
        picks.push(p);
    }
    let mut dataset = set.raw.clone();
    let new_ids = dataset.append_layouts(&picked_layouts, &picked_files)?;
    dataset.write(&dir.join("dataset.json"))?;

    let mut records = Vec::new();
    let mut provenance = Vec::new();
    let mut all_scores = Vec::new();
    let mut picked_scores = Vec::new();
    let mut picked_crops = Vec::new();
    let mut ids = new_ids.into_iter();
    for ((w, p), slot) in works.iter().zip(&picks).zip(slots) {
        let mut dataset_ids = vec![None; w.scores.len()];
        for &k in p {
            dataset_ids[k] = ids.next();
        }
        for (k, s) in w.scores.iter().enumerate() {
            let picked = p.contains(&k);
            let r = sample_ref(&w.layout_id, k);
            records.push(ScoreRecord::new(r.clone(), w.layout_id.clone(), s, picked));
            all_scores.push(s.clone());
            if picked {
                picked_scores.push(s.clone());
                if let Some(c) = w.cs_crop[k] {
                    picked_crops.push(c);
                }
            }
            provenance.push(ProvenanceRecord {
                sample_ref: r,
                layout_id: w.layout_id.clone(),
                image_file: w.image_files[k].clone(),
                dataset_image_id: dataset_ids[k],
                layout_source: w.layout.source,
                spe_round: slot.round,
                gt_image_id: set.images[slot.gt_index].id,
                run_seed: config.seed,
                synthesis_seed: w.synthesis_seed,
                spe_backend: spe_backend.to_string(),
                lis_backend: w.lis_backend.clone(),
                scorer: w.scorer.clone(),
                spe_attempts: slot.attempts,
                spe_fallback: slot.fallback,
                spe_notes: slot.notes.clone(),
                lis_attempts: w.lis_attempts,
                lacs: s.lacs,
                picked,
                hallucinations: w.hallucinations[k].clone(),
                finished_unix_ms: w.finished_unix_ms,
            });
        }
    }
    let nan_if_empty = |v: &[SampleScore]| mlacs(v).unwrap_or(f64::NAN);
    let quality = QualitySummary {
        mlacs: nan_if_empty(&picked_scores),
        mlacs_all: nan_if_empty(&all_scores),
        cs_crop: mean(&picked_crops),
        n_samples: all_scores.len(),
        picked_fraction: if all_scores.is_empty() {
            0.0
        } else {
            picked_scores.len() as f64 / all_scores.len() as f64
        },
    };
    let summary = RunSummary {
        quality,
        spe_method: config.spe_method,
        alpha: if set.layouts.is_empty() { 0 } else { works.len() / set.layouts.len() },
        lis_batch: config.lis_batch,
        top_n,
        seed: config.seed,
        annotations: config.annotations.clone(),
        shot_list: config.shot_list.clone(),
        n_gt_layouts: set.layouts.len(),
        n_generated_layouts: works.len(),
        n_generated_images: picked_layouts.len(),
        n_dataset_images: dataset.images.len(),
        spe_fallbacks: slots.iter().filter(|s| s.fallback).count(),
    };

    write_score_records(&dir.join("scores.jsonl"), &records)
        .map_err(|e| PipelineError::io(&dir.join("scores.jsonl"), e))?;
    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("serializes") + "\n";
    write_atomic(&summary_path, text.as_bytes())?;
    let mut lines = String::new();
    for p in &provenance {
        lines.push_str(&serde_json::to_string(p).expect("serializes"));
        lines.push('\n');
    }
    write_atomic(&dir.join("provenance.jsonl"), lines.as_bytes())?;

    Ok(RunOutput {
        dataset,
        summary,
        scores: records,
        provenance,
        synthesized,
        reused: works.len() - synthesized,
    })
}

/// Writes one heatmap per present category as `{category}_{tag}.{png,json}`.
pub fn write_dataset_heatmaps(
    layouts: &[Layout],
    categories: &CategoryRegistry,
    resolution: (u32, u32),
    dir: &Path,
    tag: &str,
) -> Result<usize, PipelineError> {
    let mut written = 0;
    for cat in categories.iter() {
        let grid = heatmap(layouts, cat, resolution);
        if grid.boxes == 0 {
            continue;
        }
        write_heatmap(&grid, dir, &format!("{}_{tag}", file_stem(&cat.name)))?;
        written += 1;
    }
    Ok(written)
}

pub(crate) fn load_set(config: &PipelineConfig) -> Result<FewShotSet, PipelineError> {
    let set = load_coco(&config.annotations, config.shot_list.as_deref())?;
    if set.layouts.is_empty() {
        return Err(PipelineError::Config(format!(
            "{} has no annotated images",
            config.annotations.display()
        )));
    }
    Ok(set)
}

/// Runs the whole pipeline with the given backends, writing into `config.out`.
pub fn run_with(config: &PipelineConfig, backends: &Backends) -> Result<RunOutput, PipelineError> {
    config.validate()?;
    let set = load_set(config)?;
    let out = &config.out;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    write_atomic(&out.join("config.toml"), config.to_toml().as_bytes())?;

    let spe = extrapolate(&set, config, config.alpha, backends, Some(&out.join("spe")))?;
    let (works, synthesized) = process_layouts(config, backends, &set.categories, &spe.layouts, out)?;
    let output = assemble(config, &set, &works, &spe.slots, &spe.backend_id, config.top_n, out, synthesized)?;

    let res = (config.heatmap_resolution[0], config.heatmap_resolution[1]);
    let hm = out.join("heatmaps");
    write_dataset_heatmaps(&set.layouts, &set.categories, res, &hm, "gt")?;
    write_dataset_heatmaps(&spe.layouts, &set.categories, res, &hm, &config.spe_method.to_string())?;
    log::info!(
        "{} layouts ({} synthesized, {} reused), {} images added, mLACS {:.4}",
        works.len(),
        output.synthesized,
        output.reused,
        output.summary.n_generated_images,
        output.summary.quality.mlacs
    );
    Ok(output)
}

/// Runs the pipeline with the backends named by `config`.
pub fn run(config: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    run_with(config, &Backends::from_config(config)?)
}

/// Scores every image of a COCO file against its own annotations.
///
/// Image files are resolved against `image_root`. Every image counts as
/// picked in the returned summary.
pub fn score_dataset(
    annotations: &Path,
    image_root: &Path,
    scorer: &dyn ImageTextScorer,
) -> Result<(Vec<ScoreRecord>, QualitySummary), PipelineError> {
    let set = load_coco(annotations, None)?;
    let names = set.categories.names();
    let results: Vec<Result<(ScoreRecord, SampleScore, Option<f64>), PipelineError>> = set
        .layouts
        .par_iter()
        .zip(&set.images)
        .enumerate()
        .map(|(i, (layout, img_ref))| {
            let path = image_root.join(&img_ref.file_name);
            let img = image::open(&path)
                .map_err(|e| PipelineError::Other(format!("{}: {e}", path.display())))?
                .into_rgb8();
            let wrap = |e| PipelineError::Scoring {
                sample: img_ref.file_name.clone(),
                source: e,
            };
            let s = score_sample(scorer, &img, layout, i).map_err(wrap)?;
            let c = match cs_crop(scorer, &img, layout, &names) {
                Ok(v) => Some(v),
                Err(LacsError::NoValidCrops) => None,
                Err(e) => return Err(wrap(e)),
            };
            let rec = ScoreRecord::new(img_ref.id.to_string(), img_ref.file_name.clone(), &s, true);
            Ok((rec, s, c))
        })
        .collect();
    let mut records = Vec::new();
    let mut scores = Vec::new();
    let mut crops = Vec::new();
    for r in results {
        let (rec, s, c) = r?;
        records.push(rec);
        scores.push(s);
        crops.extend(c);
    }
    let m = mlacs(&scores).map_err(|e| PipelineError::Scoring {
        sample: annotations.display().to_string(),
        source: e,
    })?;
    let summary = QualitySummary {
        mlacs: m,
        mlacs_all: m,
        cs_crop: mean(&crops),
        n_samples: scores.len(),
        picked_fraction: 1.0,
    };
    Ok((records, summary))
}
