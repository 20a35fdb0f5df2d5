use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_gmm, CovarianceKind, FitOptions, GaussianMixture, GmmError};
use crate::annotations::{
    BBox, CategoryLabel, FewShotSet, ImageFrame, Layout, LayoutObject, LayoutSource,
};
use crate::seed::{derive_seed, rng_from, stage};

/// Draws allowed per box before the repair stage clamps it.
pub const BOX_RESAMPLES: usize = 10;
/// Minimum box side after repair, as a fraction of the frame side.
pub const MIN_BOX_FRACTION: f64 = 0.02;
const DRAFT_ATTEMPTS: usize = 100;

/// How object co-occurrences are drafted when sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleVariant {
    /// Copy the category counts of the seed ground-truth layout.
    DraftFromGt,
    /// Sample counts from a mixture fitted on per-image count vectors.
    FittedCooccurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMixture {
    pub category: CategoryLabel,
    pub instances: usize,
    pub mixture: GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceModel {
    /// Axis order of the count vectors.
    pub categories: Vec<CategoryLabel>,
    pub mixture: GaussianMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub components: usize,
    pub covariance: CovarianceKind,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            components: 3,
            covariance: CovarianceKind::Full,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// One box mixture per category over normalized `(x/W, y/H, w/W, h/H)`
/// vectors, plus an optional co-occurrence mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmEnsemble {
    pub variant: EnsembleVariant,
    pub normalization: String,
    pub options: EnsembleOptions,
    pub per_category: Vec<CategoryMixture>,
    pub cooccurrence: Option<CooccurrenceModel>,
}

impl GmmEnsemble {
    pub fn mixture_for(&self, category_id: u64) -> Option<&CategoryMixture> {
        self.per_category.iter().find(|m| m.category.id == category_id)
    }

    pub fn save(&self, path: &Path) -> Result<(), GmmError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| GmmError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| GmmError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GmmError> {
        let text = std::fs::read_to_string(path).map_err(|e| GmmError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GmmError::Io(e.to_string()))
    }
}

fn normalize(b: &BBox, f: ImageFrame) -> Vec<f64> {
    let (w, h) = (f.width as f64, f.height as f64);
    vec![b.x / w, b.y / h, b.w / w, b.h / h]
}

/// Fits one mixture per category present in `set`, with the component count
/// clamped to the category's instance count.
pub fn fit_ensemble(
    set: &FewShotSet,
    variant: EnsembleVariant,
    opts: &EnsembleOptions,
) -> Result<GmmEnsemble, GmmError> {
    if set.layouts.is_empty() {
        return Err(GmmError::Argument("few-shot set is empty".into()));
    }
    let mut samples: BTreeMap<u64, (CategoryLabel, Vec<Vec<f64>>)> = BTreeMap::new();
    for l in &set.layouts {
        for o in &l.objects {
            samples
                .entry(o.category.id)
                .or_insert_with(|| (o.category.clone(), Vec::new()))
                .1
                .push(normalize(&o.bbox, l.frame));
        }
    }
    let fit = |data: &[Vec<f64>], tag: u64| {
        let fo = FitOptions {
            components: opts.components.min(data.len()),
            max_iters: opts.max_iters,
            tol: opts.tol,
            seed: derive_seed(opts.seed, &[stage::GMM_FIT, tag]),
            covariance: opts.covariance,
        };
        fit_gmm(data, &fo).map(|(g, _)| g)
    };
    let per_category = samples
        .into_values()
        .map(|(category, data)| {
            Ok(CategoryMixture {
                mixture: fit(&data, category.id)?,
                instances: data.len(),
                category,
            })
        })
        .collect::<Result<Vec<_>, GmmError>>()?;

    let cooccurrence = match variant {
        EnsembleVariant::DraftFromGt => None,
        EnsembleVariant::FittedCooccurrence => {
            let categories: Vec<CategoryLabel> =
                per_category.iter().map(|m| m.category.clone()).collect();
            let counts: Vec<Vec<f64>> = set
                .layouts
                .iter()
                .map(|l| {
                    let c = l.category_counts();
                    categories
                        .iter()
                        .map(|cat| *c.get(&cat.id).unwrap_or(&0) as f64)
                        .collect()
                })
                .collect();
            Some(CooccurrenceModel {
                mixture: fit(&counts, u64::MAX)?,
                categories,
            })
        }
    };

    Ok(GmmEnsemble {
        variant,
        normalization: "x/W, y/H, w/W, h/H".into(),
        options: opts.clone(),
        per_category,
        cooccurrence,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub round: usize,
    pub gt_index: usize,
    /// Boxes that needed at least one redraw.
    pub resampled_boxes: usize,
    /// Boxes clamped after exhausting the redraw budget.
    pub repaired_boxes: usize,
    /// Categories absent from the ensemble, filled with ground-truth boxes.
    pub fallback_categories: Vec<String>,
    /// Co-occurrence drafts that rounded to all zeros and were redrawn.
    pub rejected_drafts: usize,
    /// No non-empty co-occurrence draft was found; ground-truth counts were used.
    pub draft_fallback: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SampleOutput {
    /// Round-major: entry `r·N + i` is round `r` seeded by layout `i`.
    pub layouts: Vec<Layout>,
    pub records: Vec<SampleRecord>,
}

fn box_is_valid(b: &BBox, f: ImageFrame) -> bool {
    let (fw, fh) = (f.width as f64, f.height as f64);
    b.x >= 0.0
        && b.y >= 0.0
        && b.w >= MIN_BOX_FRACTION * fw
        && b.h >= MIN_BOX_FRACTION * fh
        && b.right() <= fw
        && b.bottom() <= fh
}

/// Clamps origin into the frame and shrinks the size to fit, keeping the minimum size.
fn repair_box(b: &BBox, f: ImageFrame) -> BBox {
    let (fw, fh) = (f.width as f64, f.height as f64);
    let finite = |v: f64, d: f64| if v.is_finite() { v } else { d };
    let w = finite(b.w, fw * 0.5).clamp(MIN_BOX_FRACTION * fw, fw);
    let h = finite(b.h, fh * 0.5).clamp(MIN_BOX_FRACTION * fh, fh);
    let x = finite(b.x, 0.0).clamp(0.0, fw - w);
    let y = finite(b.y, 0.0).clamp(0.0, fh - h);
    BBox::new(x, y, w, h)
}

fn sample_box(
    mixture: &GaussianMixture,
    frame: ImageFrame,
    rng: &mut ChaCha8Rng,
    record: &mut SampleRecord,
) -> BBox {
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    let mut last = BBox::new(0.0, 0.0, 0.0, 0.0);
    for draw in 0..=BOX_RESAMPLES {
        let v = mixture.sample(rng);
        last = BBox::new(v[0] * fw, v[1] * fh, v[2] * fw, v[3] * fh);
        if box_is_valid(&last, frame) {
            if draw > 0 {
                record.resampled_boxes += 1;
            }
            return last;
        }
    }
    record.resampled_boxes += 1;
    record.repaired_boxes += 1;
    repair_box(&last, frame)
}

/// Drafted `(category, count)` pairs for one slot.
fn draft(
    ensemble: &GmmEnsemble,
    gt: &Layout,
    rng: &mut ChaCha8Rng,
    record: &mut SampleRecord,
) -> Vec<CategoryLabel> {
    let from_gt = || gt.objects.iter().map(|o| o.category.clone()).collect();
    let Some(model) = &ensemble.cooccurrence else {
        return from_gt();
    };
    for _ in 0..DRAFT_ATTEMPTS {
        let counts: Vec<usize> = model
            .mixture
            .sample(rng)
            .iter()
            .map(|c| c.round_ties_even().max(0.0) as usize)
            .collect();
        if counts.iter().all(|&c| c == 0) {
            record.rejected_drafts += 1;
            continue;
        }
        return model
            .categories
            .iter()
            .zip(counts)
            .flat_map(|(cat, n)| std::iter::repeat_n(cat.clone(), n))
            .collect();
    }
    record.draft_fallback = true;
    from_gt()
}

/// Samples `alpha × |set.layouts|` layouts from a fitted ensemble.
///
/// For every ground-truth layout and round a co-occurrence is drafted (copied
/// from the layout, or drawn from the co-occurrence mixture), then one box per
/// drafted object is sampled from its category mixture in the seed layout's
/// frame. A box outside the frame or smaller than the minimum size is redrawn
/// up to [`BOX_RESAMPLES`] times and then repaired by clamping. Categories
/// missing from the ensemble reuse a random ground-truth box of that category.
pub fn sample_layouts(
    ensemble: &GmmEnsemble,
    set: &FewShotSet,
    alpha: usize,
    rng_seed: u64,
) -> Result<SampleOutput, GmmError> {
    if alpha < 1 {
        return Err(GmmError::Argument("alpha must be >= 1".into()));
    }
    let mut gt_boxes: BTreeMap<u64, Vec<(BBox, ImageFrame)>> = BTreeMap::new();
    for l in &set.layouts {
        for o in &l.objects {
            gt_boxes.entry(o.category.id).or_default().push((o.bbox, l.frame));
        }
    }
    let n = set.layouts.len();
    let mut out = SampleOutput::default();
    for slot in 0..alpha * n {
        let (round, index) = (slot / n, slot % n);
        let gt = &set.layouts[index];
        let mut rng = rng_from(rng_seed, &[stage::GMM_SAMPLE, round as u64, index as u64]);
        let mut record = SampleRecord {
            round,
            gt_index: index,
            ..Default::default()
        };
        let categories = draft(ensemble, gt, &mut rng, &mut record);
        let mut objects = Vec::with_capacity(categories.len());
        for cat in categories {
            let bbox = match ensemble.mixture_for(cat.id) {
                Some(m) => sample_box(&m.mixture, gt.frame, &mut rng, &mut record),
                None => {
                    if !record.fallback_categories.contains(&cat.name) {
                        record.fallback_categories.push(cat.name.clone());
                    }
                    let pool = gt_boxes.get(&cat.id).ok_or_else(|| {
                        GmmError::Argument(format!("category {} has no ground-truth boxes", cat.name))
                    })?;
                    let (b, f) = pool[rng.random_range(0..pool.len())];
                    repair_box(&b.rescale(f, gt.frame), gt.frame)
                }
            };
            objects.push(LayoutObject::new(cat, bbox));
        }
        let layout = Layout::new(gt.frame, objects, LayoutSource::GmmGenerated)
            .map_err(GmmError::Argument)?;
        out.layouts.push(layout);
        out.records.push(record);
    }
    Ok(out)
}
