//! Layout extrapolation with a text-completion language model.
//!
//! Ground-truth layouts are serialized as layout descriptions
//! (`caption: '...'` / `objects: ['name', [x, y, w, h], ...]`) on an integer
//! prompt canvas, embedded as in-context examples, and the model is asked to
//! continue the `objects:` list for a reordered query caption. Responses are
//! parsed back into validated layouts.

mod backend;
mod generate;
mod parse;
mod prompt;

pub use backend::{
    BackendError, CannedCompletionBackend, CompletionBackend, CompletionRequest,
    FixedCompletionBackend, OpenAiCompletionBackend, SyntheticCompletionBackend,
};
pub use generate::{generate_layouts, GenerationOptions, GenerationOutput, SlotRecord, SpeError};
pub use parse::{parse_layout_response, parse_objects_list, ParseError};
pub use prompt::{build_prompt, build_prompt_with, make_query_caption, PromptError, PromptTemplate, TemplateText};

use serde::{Deserialize, Serialize};

use crate::annotations::{caption_for, ImageFrame, Layout};

/// Default integer coordinate space presented to the language model.
pub const DEFAULT_CANVAS: ImageFrame = ImageFrame {
    width: 512,
    height: 512,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribedObject {
    pub name: String,
    /// `[x, y, w, h]` on the prompt canvas.
    pub bbox: [i64; 4],
}

/// Textual form of a layout on the prompt canvas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDescription {
    pub caption: String,
    pub objects: Vec<DescribedObject>,
    pub canvas: ImageFrame,
}

fn quote(name: &str) -> String {
    if name.contains('\'') {
        format!("\"{name}\"")
    } else {
        format!("'{name}'")
    }
}

impl LayoutDescription {
    /// The `objects:` list, e.g. `['cat', [51, 51, 102, 102], 'car', [0, 0, 10, 10]]`.
    pub fn objects_list(&self) -> String {
        let body = self
            .objects
            .iter()
            .map(|o| {
                let [x, y, w, h] = o.bbox;
                format!("{}, [{x}, {y}, {w}, {h}]", quote(&o.name))
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("[{body}]")
    }

    /// Two-line serialization used for in-context examples.
    pub fn serialize(&self) -> String {
        format!(
            "caption: '{}'\nobjects: {}",
            self.caption,
            self.objects_list()
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid prompt canvas {width}x{height}")]
pub struct CanvasError {
    pub width: u32,
    pub height: u32,
}

fn to_canvas_span(start: f64, len: f64, scale: f64, limit: u32) -> (i64, i64) {
    let limit = limit as i64;
    let s = ((start * scale).round() as i64).clamp(0, limit - 1);
    let l = ((len * scale).round() as i64).clamp(1, limit - s);
    (s, l)
}

/// Rescales a layout onto the integer prompt canvas.
///
/// Each coordinate is scaled and rounded independently, then clamped so the
/// box keeps a positive size inside the canvas. Object order is preserved and
/// the caption is regenerated from it.
pub fn describe_layout(layout: &Layout, canvas: ImageFrame) -> Result<LayoutDescription, CanvasError> {
    if canvas.width == 0 || canvas.height == 0 {
        return Err(CanvasError {
            width: canvas.width,
            height: canvas.height,
        });
    }
    let sx = canvas.width as f64 / layout.frame.width as f64;
    let sy = canvas.height as f64 / layout.frame.height as f64;
    let objects = layout
        .objects
        .iter()
        .map(|o| {
            let (x, w) = to_canvas_span(o.bbox.x, o.bbox.w, sx, canvas.width);
            let (y, h) = to_canvas_span(o.bbox.y, o.bbox.h, sy, canvas.height);
            DescribedObject {
                name: o.category.name.clone(),
                bbox: [x, y, w, h],
            }
        })
        .collect::<Vec<_>>();
    Ok(LayoutDescription {
        caption: caption_for(objects.iter().map(|o| o.name.as_str())),
        objects,
        canvas,
    })
}
