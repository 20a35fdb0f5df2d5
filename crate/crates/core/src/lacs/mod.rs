//! Layout-aware CLIP scoring.
//!
//! For every distinct category `c` of a layout:
//!
//! * `cs` is the first softmax component of the scorer logits for the image
//!   against the texts `[c, "background"]`;
//! * `cs_mask` is the same for the image with every box of `c` painted white,
//!   against `[c, "white space"]`.
//!
//! The sample score is the mean of `cs - cs_mask` over categories. Content of
//! `c` outside its boxes survives masking and raises `cs_mask`, so samples with
//! out-of-layout hallucinations rank lower.

mod http;
mod mock;
mod report;

pub use http::HttpClipScorer;
pub use mock::MockScorer;
pub use report::{read_score_records, write_score_records, CategoryRecord, QualitySummary, ScoreRecord};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{normalize_name, CategoryLabel, Layout};

pub const BACKGROUND_TEXT: &str = "background";
pub const WHITE_SPACE_TEXT: &str = "white space";
pub const MASK_COLOR: Rgb<u8> = Rgb([255, 255, 255]);

#[derive(Debug, Error)]
pub enum LacsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("scorer failure: {0}")]
    Scorer(String),
    #[error("no box yields a non-empty crop")]
    NoValidCrops,
}

/// Image-text similarity model returning one cosine-similarity logit per text.
pub trait ImageTextScorer: Send + Sync {
    fn id(&self) -> String;

    fn logits(&self, image: &RgbImage, texts: &[String]) -> Result<Vec<f64>, LacsError>;

    /// Whether `logits` may be called from several threads at once.
    fn is_concurrent(&self) -> bool {
        true
    }
}

/// Softmax over `logits`, computed with the maximum subtracted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn first_softmax(
    scorer: &dyn ImageTextScorer,
    image: &RgbImage,
    texts: [String; 2],
) -> Result<f64, LacsError> {
    let logits = scorer.logits(image, &texts)?;
    if logits.len() != 2 || logits.iter().any(|z| !z.is_finite()) {
        return Err(LacsError::Scorer(format!(
            "expected two finite logits, got {logits:?}"
        )));
    }
    Ok(softmax(&logits)[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: CategoryLabel,
    pub cs: f64,
    pub cs_mask: f64,
    pub delta: f64,
}

impl CategoryScore {
    pub fn new(category: CategoryLabel, cs: f64, cs_mask: f64) -> Self {
        Self {
            category,
            cs,
            cs_mask,
            delta: cs - cs_mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    /// Position of the sample within its generated batch.
    pub sample_index: usize,
    pub per_category: Vec<CategoryScore>,
    pub lacs: f64,
}

impl SampleScore {
    /// Aggregates per-category scores; `lacs` is the mean of their deltas.
    pub fn from_categories(
        sample_index: usize,
        per_category: Vec<CategoryScore>,
    ) -> Result<Self, LacsError> {
        if per_category.is_empty() {
            return Err(LacsError::Argument("no categories to score".into()));
        }
        let lacs = per_category.iter().map(|c| c.delta).sum::<f64>() / per_category.len() as f64;
        Ok(Self {
            sample_index,
            per_category,
            lacs,
        })
    }
}

/// Copy of `image` with every box of `category` filled pure white.
pub fn mask_category(
    image: &RgbImage,
    layout: &Layout,
    category: &CategoryLabel,
) -> Result<RgbImage, LacsError> {
    let frame = crate::annotations::ImageFrame::new(image.width(), image.height());
    let mut rects = layout
        .boxes_of(category.id)
        .map(|b| b.rescale(layout.frame, frame).pixel_rect(frame))
        .peekable();
    if rects.peek().is_none() {
        return Err(LacsError::Argument(format!(
            "category {} does not occur in the layout",
            category.name
        )));
    }
    let mut out = image.clone();
    for r in rects {
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                out.put_pixel(x, y, MASK_COLOR);
            }
        }
    }
    Ok(out)
}

/// Category presence on the unmasked image: softmax of `[name, "background"]`.
pub fn category_cs(
    scorer: &dyn ImageTextScorer,
    image: &RgbImage,
    category: &CategoryLabel,
) -> Result<f64, LacsError> {
    first_softmax(
        scorer,
        image,
        [normalize_name(&category.name), BACKGROUND_TEXT.to_string()],
    )
}

/// Category presence on the masked image: softmax of `[name, "white space"]`.
pub fn category_cs_mask(
    scorer: &dyn ImageTextScorer,
    masked_image: &RgbImage,
    category: &CategoryLabel,
) -> Result<f64, LacsError> {
    first_softmax(
        scorer,
        masked_image,
        [normalize_name(&category.name), WHITE_SPACE_TEXT.to_string()],
    )
}

/// Scores one generated image against its conditioning layout, with one
/// `(cs, cs_mask)` pair per distinct category.
pub fn score_sample(
    scorer: &dyn ImageTextScorer,
    image: &RgbImage,
    layout: &Layout,
    sample_index: usize,
) -> Result<SampleScore, LacsError> {
    if layout.objects.is_empty() {
        return Err(LacsError::Argument("layout has no objects".into()));
    }
    let per_category = layout
        .distinct_categories()
        .into_iter()
        .map(|cat| {
            let cs = category_cs(scorer, image, &cat)?;
            let masked = mask_category(image, layout, &cat)?;
            let cs_mask = category_cs_mask(scorer, &masked, &cat)?;
            Ok(CategoryScore::new(cat, cs, cs_mask))
        })
        .collect::<Result<Vec<_>, LacsError>>()?;
    SampleScore::from_categories(sample_index, per_category)
}

/// Sample indices of the `top_n` highest scores, best first; ties go to the
/// lower sample index.
pub fn rank_and_pick(scores: &[SampleScore], top_n: usize) -> Result<Vec<usize>, LacsError> {
    if top_n < 1 || top_n > scores.len() {
        return Err(LacsError::Argument(format!(
            "top_n must lie in [1, {}], got {top_n}",
            scores.len()
        )));
    }
    let mut order: Vec<&SampleScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.lacs
            .total_cmp(&a.lacs)
            .then(a.sample_index.cmp(&b.sample_index))
    });
    Ok(order.iter().take(top_n).map(|s| s.sample_index).collect())
}

/// Mean LACS over a set of samples.
pub fn mlacs(scores: &[SampleScore]) -> Result<f64, LacsError> {
    if scores.is_empty() {
        return Err(LacsError::Argument("no scores".into()));
    }
    Ok(scores.iter().map(|s| s.lacs).sum::<f64>() / scores.len() as f64)
}

/// Mean classification score of box crops.
///
/// Each crop is scored against every name in `category_names` plus
/// `"background"`; the softmax entry of the box's own category is averaged.
/// Boxes whose crop is empty are skipped.
pub fn cs_crop(
    scorer: &dyn ImageTextScorer,
    image: &RgbImage,
    layout: &Layout,
    category_names: &[String],
) -> Result<f64, LacsError> {
    if layout.objects.is_empty() {
        return Err(LacsError::Argument("layout has no objects".into()));
    }
    let mut texts: Vec<String> = category_names.iter().map(|n| normalize_name(n)).collect();
    for o in &layout.objects {
        let n = normalize_name(&o.category.name);
        if !texts.contains(&n) {
            texts.push(n);
        }
    }
    texts.push(BACKGROUND_TEXT.to_string());
    let frame = crate::annotations::ImageFrame::new(image.width(), image.height());

    let mut total = 0.0;
    let mut count = 0usize;
    for (i, o) in layout.objects.iter().enumerate() {
        let r = o.bbox.rescale(layout.frame, frame).pixel_rect(frame);
        if r.is_empty() {
            log::warn!("skipping empty crop for box {i} ({})", o.category.name);
            continue;
        }
        let crop = image::imageops::crop_imm(image, r.x0, r.y0, r.width(), r.height()).to_image();
        let logits = scorer.logits(&crop, &texts)?;
        if logits.len() != texts.len() {
            return Err(LacsError::Scorer(format!(
                "expected {} logits, got {}",
                texts.len(),
                logits.len()
            )));
        }
        let idx = texts
            .iter()
            .position(|t| *t == normalize_name(&o.category.name))
            .expect("own category is among the texts");
        total += softmax(&logits)[idx];
        count += 1;
    }
    if count == 0 {
        return Err(LacsError::NoValidCrops);
    }
    Ok(total / count as f64)
}
