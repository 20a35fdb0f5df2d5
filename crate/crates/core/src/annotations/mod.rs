//! Detection annotations: boxes, category labels, layouts and few-shot sets.
//!
//! All coordinates follow the COCO convention: `[x, y, w, h]` in pixels with a
//! top-left origin.

mod coco;
pub(crate) mod gtos;

pub use coco::{emit_coco, load_coco, CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
pub use gtos::{flip_layout, oversample_gtos};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack for floating point comparisons against frame bounds.
pub const BOUNDS_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed COCO JSON at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid annotations: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<AnnotationIssue>),
    #[error("annotation {annotation_id} references unknown category id {category_id}")]
    UnknownCategory { annotation_id: u64, category_id: u64 },
    #[error("annotation {annotation_id} references unknown image id {image_id}")]
    UnknownImage { annotation_id: u64, image_id: u64 },
    #[error("category registry: {0}")]
    Registry(String),
    #[error("invalid shot list line {line}: {content:?}")]
    ShotList { line: usize, content: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("layout {index}: {reason}")]
    InvalidLayout { index: usize, reason: String },
    #[error("{layouts} layouts but {images} images")]
    CountMismatch { layouts: usize, images: usize },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A single offending annotation found while loading.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationIssue {
    pub annotation_id: u64,
    pub reason: String,
}

impl fmt::Display for AnnotationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "annotation {}: {}", self.annotation_id, self.reason)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_array(b: [f64; 4]) -> Self {
        Self::new(b[0], b[1], b[2], b[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Checks positivity and containment in `frame`; returns the reason on failure.
    pub fn check(&self, frame: ImageFrame) -> Result<(), String> {
        let vals = [self.x, self.y, self.w, self.h];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite box {:?}", vals));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("non-positive size w={} h={}", self.w, self.h));
        }
        if self.x < -BOUNDS_EPS || self.y < -BOUNDS_EPS {
            return Err(format!("negative origin x={} y={}", self.x, self.y));
        }
        if self.right() > frame.width as f64 + BOUNDS_EPS
            || self.bottom() > frame.height as f64 + BOUNDS_EPS
        {
            return Err(format!(
                "box [{}, {}, {}, {}] exceeds {}x{} frame",
                self.x, self.y, self.w, self.h, frame.width, frame.height
            ));
        }
        Ok(())
    }

    /// Mirrors the box about the vertical centre line of `frame`.
    pub fn flip_x(&self, frame: ImageFrame) -> Self {
        Self::new(frame.width as f64 - self.x - self.w, self.y, self.w, self.h)
    }

    /// Maps the box from one frame to another by independent axis scaling.
    pub fn rescale(&self, from: ImageFrame, to: ImageFrame) -> Self {
        let sx = to.width as f64 / from.width as f64;
        let sy = to.height as f64 / from.height as f64;
        Self::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }

    /// Integer pixel rectangle covered by the box, clipped to `frame`.
    ///
    /// A pixel column `i` is covered when `[i, i + 1)` overlaps `[x, x + w)`.
    pub fn pixel_rect(&self, frame: ImageFrame) -> PixelRect {
        let x0 = self.x.floor().max(0.0) as u32;
        let y0 = self.y.floor().max(0.0) as u32;
        let x1 = (self.right().ceil().max(0.0) as u32).min(frame.width);
        let y1 = (self.bottom().ceil().max(0.0) as u32).min(frame.height);
        PixelRect {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1,
            y1,
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Grows the rectangle by `margin` on every side, saturating at zero.
    pub fn expand(&self, margin: u32) -> PixelRect {
        PixelRect {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            x1: self.x1.saturating_add(margin),
            y1: self.y1.saturating_add(margin),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub id: u64,
    pub name: String,
}

impl CategoryLabel {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
        }
    }
}

/// Category labels indexed by id, with unique ids and non-empty names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryRegistry {
    by_id: BTreeMap<u64, CategoryLabel>,
}

impl CategoryRegistry {
    pub fn new(labels: impl IntoIterator<Item = CategoryLabel>) -> Result<Self, AnnotationError> {
        let mut by_id = BTreeMap::new();
        for label in labels {
            if label.name.trim().is_empty() {
                return Err(AnnotationError::Registry(format!(
                    "category {} has an empty name",
                    label.id
                )));
            }
            if by_id.insert(label.id, label.clone()).is_some() {
                return Err(AnnotationError::Registry(format!(
                    "duplicate category id {}",
                    label.id
                )));
            }
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: u64) -> Option<&CategoryLabel> {
        self.by_id.get(&id)
    }

    /// Case-insensitive lookup by name.
    pub fn by_name(&self, name: &str) -> Option<&CategoryLabel> {
        let needle = name.trim().to_lowercase();
        self.by_id
            .values()
            .find(|c| c.name.trim().to_lowercase() == needle)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CategoryLabel> {
        self.by_id.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.by_id.values().map(|c| c.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutSource {
    GroundTruth,
    LlmGenerated,
    GmmGenerated,
    Oversampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutObject {
    pub category: CategoryLabel,
    pub bbox: BBox,
}

impl LayoutObject {
    pub fn new(category: CategoryLabel, bbox: BBox) -> Self {
        Self { category, bbox }
    }
}

/// Category-labelled boxes in an image frame, plus the caption describing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub frame: ImageFrame,
    pub objects: Vec<LayoutObject>,
    pub caption: String,
    pub source: LayoutSource,
}

impl Layout {
    /// Builds a layout with a caption synthesized from the object order.
    pub fn new(
        frame: ImageFrame,
        objects: Vec<LayoutObject>,
        source: LayoutSource,
    ) -> Result<Self, String> {
        let caption = caption_for(objects.iter().map(|o| o.category.name.as_str()));
        let layout = Self {
            frame,
            objects,
            caption,
            source,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.frame.width == 0 || self.frame.height == 0 {
            return Err("empty image frame".into());
        }
        for (i, obj) in self.objects.iter().enumerate() {
            obj.bbox
                .check(self.frame)
                .map_err(|e| format!("object {i} ({}): {e}", obj.category.name))?;
        }
        let mut from_caption = caption_names(&self.caption);
        let mut from_objects: Vec<String> = self
            .objects
            .iter()
            .map(|o| normalize_name(&o.category.name))
            .collect();
        from_caption.sort();
        from_objects.sort();
        if from_caption != from_objects {
            return Err(format!(
                "caption {:?} does not match objects {:?}",
                self.caption, from_objects
            ));
        }
        Ok(())
    }

    /// Distinct categories in order of first appearance.
    pub fn distinct_categories(&self) -> Vec<CategoryLabel> {
        let mut seen = Vec::<CategoryLabel>::new();
        for obj in &self.objects {
            if !seen.iter().any(|c| c.id == obj.category.id) {
                seen.push(obj.category.clone());
            }
        }
        seen
    }

    pub fn boxes_of(&self, category_id: u64) -> impl Iterator<Item = &BBox> {
        self.objects
            .iter()
            .filter(move |o| o.category.id == category_id)
            .map(|o| &o.bbox)
    }

    /// Per-category instance counts keyed by category id.
    pub fn category_counts(&self) -> BTreeMap<u64, usize> {
        let mut counts = BTreeMap::new();
        for obj in &self.objects {
            *counts.entry(obj.category.id).or_insert(0) += 1;
        }
        counts
    }

    /// Rescales every box into `frame`; caption and source are kept.
    pub fn rescaled(&self, frame: ImageFrame) -> Layout {
        Layout {
            frame,
            objects: self
                .objects
                .iter()
                .map(|o| LayoutObject::new(o.category.clone(), o.bbox.rescale(self.frame, frame)))
                .collect(),
            caption: self.caption.clone(),
            source: self.source,
        }
    }

    pub fn with_source(mut self, source: LayoutSource) -> Self {
        self.source = source;
        self
    }
}

pub(crate) fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase()
}

/// Indefinite article by leading-vowel heuristic.
pub fn article_for(name: &str) -> &'static str {
    match name.trim().chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

pub fn phrase_for(name: &str) -> String {
    format!("{} {}", article_for(name), name.trim())
}

/// Comma-joined article phrases, e.g. `"a cat, a car, an orange"`.
pub fn caption_for<'a>(names: impl IntoIterator<Item = &'a str>) -> String {
    names
        .into_iter()
        .map(phrase_for)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Splits a caption into its object phrases.
pub fn caption_phrases(caption: &str) -> Vec<String> {
    caption
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

/// Category names mentioned by a caption, lowercased and without articles.
pub fn caption_names(caption: &str) -> Vec<String> {
    caption_phrases(caption)
        .into_iter()
        .map(|p| {
            let lower = p.to_lowercase();
            let stripped = lower
                .strip_prefix("an ")
                .or_else(|| lower.strip_prefix("a "))
                .unwrap_or(&lower);
            stripped.trim().to_string()
        })
        .collect()
}

/// Reference to an image file backing a layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: u64,
    pub file_name: String,
}

/// Ground-truth few-shot annotations grouped into one layout per image.
#[derive(Debug, Clone)]
pub struct FewShotSet {
    pub shots: usize,
    pub layouts: Vec<Layout>,
    /// Image behind each layout, parallel to `layouts`.
    pub images: Vec<ImageRef>,
    pub categories: CategoryRegistry,
    /// The selected subset of the source file, kept verbatim for merging.
    pub raw: CocoDataset,
    pub shot_list: Option<String>,
}

impl FewShotSet {
    /// Builds a set from in-memory layouts; used by tests and synthetic inputs.
    pub fn from_layouts(
        layouts: Vec<Layout>,
        categories: CategoryRegistry,
    ) -> Result<Self, AnnotationError> {
        let images: Vec<ImageRef> = (0..layouts.len())
            .map(|i| ImageRef {
                id: i as u64 + 1,
                file_name: format!("{:012}.jpg", i + 1),
            })
            .collect();
        let raw = CocoDataset::from_layouts(&layouts, &images, &categories)?;
        let shots = infer_shots(&instance_counts(&layouts));
        Ok(Self {
            shots,
            layouts,
            images,
            categories,
            raw,
            shot_list: None,
        })
    }

    /// Number of ground-truth instances per category id.
    pub fn instance_counts(&self) -> BTreeMap<u64, usize> {
        instance_counts(&self.layouts)
    }

    /// Categories with at least one instance, in id order.
    pub fn present_categories(&self) -> Vec<CategoryLabel> {
        let counts = self.instance_counts();
        self.categories
            .iter()
            .filter(|c| counts.contains_key(&c.id))
            .cloned()
            .collect()
    }
}

pub(crate) fn instance_counts(layouts: &[Layout]) -> BTreeMap<u64, usize> {
    let mut counts = BTreeMap::new();
    for l in layouts {
        for (id, n) in l.category_counts() {
            *counts.entry(id).or_insert(0) += n;
        }
    }
    counts
}

/// Most common per-category instance count; ties go to the smaller count.
pub(crate) fn infer_shots(counts: &BTreeMap<u64, usize>) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in counts.values() {
        *freq.entry(n).or_insert(0) += 1;
    }
    freq.iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&k, _)| k)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> CategoryLabel {
        CategoryLabel::new(17, "cat")
    }

    #[test]
    fn caption_uses_vowel_articles() {
        assert_eq!(
            caption_for(["cat", "orange", "person", "umbrella"]),
            "a cat, an orange, a person, an umbrella"
        );
        assert_eq!(caption_names("a cat, an orange"), vec!["cat", "orange"]);
    }

    #[test]
    fn layout_rejects_out_of_frame_and_degenerate() {
        let frame = ImageFrame::new(640, 480);
        let ok = Layout::new(
            frame,
            vec![LayoutObject::new(cat(), BBox::new(10.0, 10.0, 100.0, 100.0))],
            LayoutSource::GroundTruth,
        )
        .unwrap();
        assert_eq!(ok.caption, "a cat");
        assert!(Layout::new(
            frame,
            vec![LayoutObject::new(cat(), BBox::new(600.0, 10.0, 100.0, 100.0))],
            LayoutSource::GroundTruth
        )
        .is_err());
        assert!(Layout::new(
            frame,
            vec![LayoutObject::new(cat(), BBox::new(0.0, 0.0, 0.0, 10.0))],
            LayoutSource::GroundTruth
        )
        .is_err());
    }

    #[test]
    fn caption_mismatch_is_invalid() {
        let mut l = Layout::new(
            ImageFrame::new(100, 100),
            vec![LayoutObject::new(cat(), BBox::new(0.0, 0.0, 10.0, 10.0))],
            LayoutSource::GroundTruth,
        )
        .unwrap();
        l.caption = "a cat, a cat".into();
        assert!(l.validate().is_err());
    }

    #[test]
    fn pixel_rect_covers_partial_pixels() {
        let frame = ImageFrame::new(100, 100);
        let r = BBox::new(10.0, 10.0, 50.0, 50.0).pixel_rect(frame);
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (10, 10, 60, 60));
        let r = BBox::new(10.5, 0.0, 2.0, 99.9).pixel_rect(frame);
        assert_eq!((r.x0, r.x1, r.y1), (10, 13, 100));
    }

    #[test]
    fn registry_rejects_duplicates_and_empty_names() {
        assert!(CategoryRegistry::new([CategoryLabel::new(1, "a"), CategoryLabel::new(1, "b")]).is_err());
        assert!(CategoryRegistry::new([CategoryLabel::new(1, " ")]).is_err());
        let reg = CategoryRegistry::new([CategoryLabel::new(3, "Dog")]).unwrap();
        assert_eq!(reg.by_name("dog").unwrap().id, 3);
    }

    #[test]
    fn shots_inferred_from_modal_count() {
        let counts: BTreeMap<u64, usize> = [(1, 10), (2, 10), (3, 12)].into_iter().collect();
        assert_eq!(infer_shots(&counts), 10);
    }
}
