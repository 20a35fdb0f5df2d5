use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::LayoutDescription;
use crate::annotations::{phrase_for, ImageFrame, Layout};

const DEFAULT_TEMPLATE: &str = include_str!("../../assets/layout_prompt.txt");
const PLACEHOLDERS: [&str; 4] = ["{CANVAS_W}", "{CANVAS_H}", "{EXAMPLES}", "{QUERY_CAPTION}"];
const CONTINUATION: &str = "objects:";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("at least one in-context example is required")]
    NoExamples,
    #[error("query caption is empty")]
    EmptyCaption,
    #[error("layout has no objects")]
    EmptyLayout,
    #[error("examples use different canvases")]
    MixedCanvas,
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("template must end with the `objects:` continuation point")]
    BadTemplateEnding,
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Prompt template text with `{CANVAS_W}`, `{CANVAS_H}`, `{EXAMPLES}` and
/// `{QUERY_CAPTION}` placeholders, ending at the `objects:` continuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateText(String);

impl TemplateText {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let text = text.trim_end();
        if let Some(missing) = PLACEHOLDERS.iter().find(|p| !text.contains(*p)) {
            return Err(PromptError::MissingPlaceholder(missing));
        }
        if !text.ends_with(CONTINUATION) {
            return Err(PromptError::BadTemplateEnding);
        }
        Ok(Self(text.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for TemplateText {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is well formed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    /// Template text carrying the instructions, canvas bounds and placeholders.
    pub instruction_header: TemplateText,
    pub examples: Vec<LayoutDescription>,
    pub query_caption: String,
    pub canvas: ImageFrame,
}

impl PromptTemplate {
    pub fn render(&self) -> String {
        let examples = self
            .examples
            .iter()
            .map(LayoutDescription::serialize)
            .collect::<Vec<_>>()
            .join("\n\n");
        self.instruction_header
            .as_str()
            .replace("{CANVAS_W}", &self.canvas.width.to_string())
            .replace("{CANVAS_H}", &self.canvas.height.to_string())
            .replace("{EXAMPLES}", &examples)
            .replace("{QUERY_CAPTION}", &self.query_caption)
    }
}

pub fn build_prompt(
    examples: &[LayoutDescription],
    query_caption: &str,
    rng_seed: u64,
) -> Result<PromptTemplate, PromptError> {
    build_prompt_with(&TemplateText::default(), examples, query_caption, rng_seed)
}

/// Assembles a prompt with the examples shuffled by `rng_seed`.
pub fn build_prompt_with(
    template: &TemplateText,
    examples: &[LayoutDescription],
    query_caption: &str,
    rng_seed: u64,
) -> Result<PromptTemplate, PromptError> {
    let first = examples.first().ok_or(PromptError::NoExamples)?;
    if query_caption.trim().is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    if examples.iter().any(|e| e.canvas != first.canvas) {
        return Err(PromptError::MixedCanvas);
    }
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    Ok(PromptTemplate {
        instruction_header: template.clone(),
        examples: shuffled,
        query_caption: query_caption.to_string(),
        canvas: first.canvas,
    })
}

/// The layout's caption with its object phrases reordered by `rng_seed`.
pub fn make_query_caption(base_layout: &Layout, rng_seed: u64) -> Result<String, PromptError> {
    if base_layout.objects.is_empty() {
        return Err(PromptError::EmptyLayout);
    }
    let mut phrases: Vec<String> = base_layout
        .objects
        .iter()
        .map(|o| phrase_for(&o.category.name))
        .collect();
    phrases.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    Ok(phrases.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{caption_phrases, BBox, CategoryLabel, LayoutObject, LayoutSource};
    use crate::llm::DescribedObject;

    fn desc(name: &str, x: i64) -> LayoutDescription {
        LayoutDescription {
            caption: format!("a {name}"),
            objects: vec![DescribedObject {
                name: name.into(),
                bbox: [x, 0, 10, 10],
            }],
            canvas: ImageFrame::new(512, 512),
        }
    }

    fn three_objects() -> Layout {
        let objs = ["cat", "car", "person"]
            .iter()
            .enumerate()
            .map(|(i, n)| {
                LayoutObject::new(
                    CategoryLabel::new(i as u64, *n),
                    BBox::new(10.0 * i as f64, 0.0, 5.0, 5.0),
                )
            })
            .collect();
        Layout::new(ImageFrame::new(100, 100), objs, LayoutSource::GroundTruth).unwrap()
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let ex: Vec<_> = (0..5).map(|i| desc(&format!("c{i}"), i)).collect();
        let a = build_prompt(&ex, "a c0", 0).unwrap();
        let b = build_prompt(&ex, "a c0", 1).unwrap();
        assert_ne!(a.examples, b.examples);
        let mut sa = a.examples.clone();
        let mut sb = b.examples.clone();
        sa.sort_by_key(|d| d.objects[0].bbox[0]);
        sb.sort_by_key(|d| d.objects[0].bbox[0]);
        assert_eq!(sa, ex);
        assert_eq!(sb, ex);
        assert_eq!(a, build_prompt(&ex, "a c0", 0).unwrap());
    }

    #[test]
    fn rendered_prompt_ends_at_continuation_and_contains_examples() {
        let ex: Vec<_> = (0..3).map(|i| desc(&format!("thing{i}"), i)).collect();
        let p = build_prompt(&ex, "a thing1", 4).unwrap().render();
        assert!(p.ends_with("caption: 'a thing1'\nobjects:"));
        for e in &ex {
            assert!(p.contains(&e.caption));
        }
        assert!(p.contains("512 pixels wide"));
        assert!(p.contains("x + w <= 512"));
    }

    #[test]
    fn single_example_is_kept() {
        let ex = vec![desc("cat", 3)];
        assert_eq!(build_prompt(&ex, "a cat", 9).unwrap().examples, ex);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(build_prompt(&[], "a cat", 0), Err(PromptError::NoExamples)));
        assert!(matches!(
            build_prompt(&[desc("cat", 0)], "  ", 0),
            Err(PromptError::EmptyCaption)
        ));
    }

    #[test]
    fn query_caption_permutes_phrases() {
        let l = three_objects();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..20 {
            let q = make_query_caption(&l, seed).unwrap();
            let mut p = caption_phrases(&q);
            seen.insert(q.clone());
            p.sort();
            assert_eq!(p, vec!["a car", "a cat", "a person"]);
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn template_validation() {
        assert!(matches!(
            TemplateText::parse("{CANVAS_W} {CANVAS_H} {EXAMPLES} objects:"),
            Err(PromptError::MissingPlaceholder("{QUERY_CAPTION}"))
        ));
        assert!(matches!(
            TemplateText::parse("{CANVAS_W} {CANVAS_H} {EXAMPLES} {QUERY_CAPTION}"),
            Err(PromptError::BadTemplateEnding)
        ));
        assert!(TemplateText::parse("{CANVAS_W}{CANVAS_H}{EXAMPLES}{QUERY_CAPTION}\nobjects:\n\n").is_ok());
    }
}
