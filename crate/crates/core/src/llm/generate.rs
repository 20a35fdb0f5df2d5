use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    build_prompt_with, describe_layout, make_query_caption, parse_layout_response, BackendError,
    CompletionBackend, CompletionRequest, LayoutDescription, TemplateText, DEFAULT_CANVAS,
};
use crate::annotations::gtos::gtos_copy;
use crate::annotations::{FewShotSet, ImageFrame, Layout, LayoutSource};
use crate::seed::{derive_seed, stage};

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    /// Augmentation ratio: completions per ground-truth layout.
    pub alpha: usize,
    /// Ground-truth layouts per in-context example batch.
    pub batch_size: usize,
    /// Extra attempts after a failed completion before falling back to oversampling.
    pub max_retries: usize,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    pub canvas: ImageFrame,
    pub template: TemplateText,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            alpha: 4,
            batch_size: 5,
            max_retries: 3,
            seed: 0,
            temperature: 0.7,
            max_tokens: 512,
            canvas: DEFAULT_CANVAS,
            template: TemplateText::default(),
        }
    }
}

/// What happened while filling one output slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub round: usize,
    pub gt_index: usize,
    pub attempts: usize,
    pub fallback: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationOutput {
    /// Round-major: entry `r·N + i` is completion round `r` for layout `i`.
    pub layouts: Vec<Layout>,
    pub records: Vec<SlotRecord>,
}

#[derive(Debug, Error)]
pub enum SpeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("backend failed for slot {slot} after retries ({completed} slots completed): {source}")]
    Aborted {
        slot: usize,
        completed: usize,
        partial: Box<GenerationOutput>,
        #[source]
        source: BackendError,
    },
}

struct SlotContext<'a> {
    set: &'a FewShotSet,
    examples: &'a [Vec<LayoutDescription>],
    backend: &'a dyn CompletionBackend,
    opts: &'a GenerationOptions,
}

fn fill_slot(
    ctx: &SlotContext<'_>,
    round: usize,
    index: usize,
) -> Result<(Layout, SlotRecord), (SlotRecord, BackendError)> {
    let opts = ctx.opts;
    let gt = &ctx.set.layouts[index];
    let batch = &ctx.examples[index / opts.batch_size];
    let (r, i) = (round as u64, index as u64);
    let mut record = SlotRecord {
        round,
        gt_index: index,
        attempts: 0,
        fallback: false,
        failures: Vec::new(),
    };
    let query = make_query_caption(gt, derive_seed(opts.seed, &[stage::LLM, r, i, 0]))
        .expect("ground-truth layouts are non-empty");

    let mut last_transport = None;
    for attempt in 0..=opts.max_retries as u64 {
        record.attempts += 1;
        let prompt = build_prompt_with(
            &opts.template,
            batch,
            &query,
            derive_seed(opts.seed, &[stage::LLM, r, i, 1, attempt]),
        )
        .expect("batches are non-empty with a shared canvas")
        .render();
        let request = CompletionRequest {
            prompt,
            max_tokens: opts.max_tokens,
            temperature: opts.temperature,
            seed: derive_seed(opts.seed, &[stage::LLM, r, i, 2, attempt]),
        };
        let response = match ctx.backend.complete(&request) {
            Ok(text) => {
                last_transport = None;
                text
            }
            Err(e) => {
                record.failures.push(e.to_string());
                last_transport = Some(e);
                continue;
            }
        };
        match parse_layout_response(&response, opts.canvas, &query, &ctx.set.categories) {
            Ok(on_canvas) => {
                let mut layout = on_canvas.rescaled(gt.frame);
                for o in &mut layout.objects {
                    clamp_rounding(&mut o.bbox, gt.frame);
                }
                match layout.validate() {
                    Ok(()) => return Ok((layout.with_source(LayoutSource::LlmGenerated), record)),
                    Err(e) => record.failures.push(e),
                }
            }
            Err(e) => record.failures.push(e.to_string()),
        }
    }
    if let Some(e) = last_transport {
        return Err((record, e));
    }
    record.fallback = true;
    Ok((gtos_copy(gt, opts.seed, r, i), record))
}

/// Absorbs floating point drift from canvas-to-frame rescaling.
fn clamp_rounding(b: &mut crate::annotations::BBox, frame: ImageFrame) {
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    b.x = b.x.max(0.0);
    b.y = b.y.max(0.0);
    if b.right() > fw {
        b.w = fw - b.x;
    }
    if b.bottom() > fh {
        b.h = fh - b.y;
    }
}

/// Generates `alpha × |set.layouts|` layouts by in-context completion.
///
/// Ground-truth layouts are partitioned, in order, into consecutive example
/// batches of `batch_size`. For every layout and round a query caption is
/// made by reordering that layout's objects and the model completes it with
/// the layout's batch as examples, shuffled afresh on every attempt. A slot
/// whose attempts all fail to parse falls back to an oversampled copy of its
/// ground-truth layout; a slot whose final attempt fails in transport aborts
/// the whole run, returning the slots completed before it.
pub fn generate_layouts(
    set: &FewShotSet,
    backend: &dyn CompletionBackend,
    opts: &GenerationOptions,
) -> Result<GenerationOutput, SpeError> {
    if opts.alpha < 1 {
        return Err(SpeError::Argument("alpha must be >= 1".into()));
    }
    if opts.batch_size < 1 {
        return Err(SpeError::Argument("batch size must be >= 1".into()));
    }
    if set.layouts.iter().any(|l| l.objects.is_empty()) {
        return Err(SpeError::Argument("ground-truth layouts must be non-empty".into()));
    }
    let examples = set
        .layouts
        .chunks(opts.batch_size)
        .map(|chunk| {
            chunk
                .iter()
                .map(|l| describe_layout(l, opts.canvas))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SpeError::Argument(e.to_string()))?;
    let ctx = SlotContext {
        set,
        examples: &examples,
        backend,
        opts,
    };
    let n = set.layouts.len();
    let results: Vec<_> = (0..opts.alpha * n)
        .into_par_iter()
        .map(|slot| fill_slot(&ctx, slot / n, slot % n))
        .collect();

    let mut out = GenerationOutput::default();
    for (slot, result) in results.into_iter().enumerate() {
        match result {
            Ok((layout, record)) => {
                out.layouts.push(layout);
                out.records.push(record);
            }
            Err((_, source)) => {
                return Err(SpeError::Aborted {
                    slot,
                    completed: out.layouts.len(),
                    partial: Box::new(out),
                    source,
                })
            }
        }
    }
    Ok(out)
}
