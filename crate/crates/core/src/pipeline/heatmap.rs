//! Box-density heatmaps per category.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::annotations::{CategoryLabel, Layout};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub category: String,
    pub width: u32,
    pub height: u32,
    pub boxes: usize,
    /// Row-major counts, `height` rows of `width` cells.
    pub counts: Vec<u32>,
}

impl HeatmapGrid {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.counts[(y * self.width + x) as usize]
    }

    pub fn max(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Counts, for every cell of a `resolution` grid, the boxes of `category` that
/// overlap it with positive area. Each layout frame is scaled onto the grid.
pub fn heatmap(layouts: &[Layout], category: &CategoryLabel, resolution: (u32, u32)) -> HeatmapGrid {
    let (w, h) = resolution;
    let mut counts = vec![0u32; (w as usize) * (h as usize)];
    let mut boxes = 0;
    for l in layouts {
        let (fw, fh) = (l.frame.width as f64, l.frame.height as f64);
        for b in l.boxes_of(category.id) {
            boxes += 1;
            let (x0, x1) = cell_span(b.x * w as f64 / fw, (b.x + b.w) * w as f64 / fw, w);
            let (y0, y1) = cell_span(b.y * h as f64 / fh, (b.y + b.h) * h as f64 / fh, h);
            for y in y0..y1 {
                for x in x0..x1 {
                    counts[(y * w + x) as usize] += 1;
                }
            }
        }
    }
    HeatmapGrid {
        category: category.name.clone(),
        width: w,
        height: h,
        boxes,
        counts,
    }
}

/// Cells `[i, i + 1)` overlapping `[lo, hi)` with positive length. Edges
/// within 1e-9 of a cell boundary are snapped onto it.
fn cell_span(lo: f64, hi: f64, n: u32) -> (u32, u32) {
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (lo, hi) = (snap(lo), snap(hi));
    if hi <= lo {
        return (0, 0);
    }
    let a = lo.floor().clamp(0.0, n as f64) as u32;
    let b = hi.ceil().clamp(0.0, n as f64) as u32;
    (a.min(b), b)
}

/// Black → purple → orange → pale yellow.
const COLORMAP: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 4.0]),
    (0.25, [87.0, 16.0, 110.0]),
    (0.5, [188.0, 55.0, 84.0]),
    (0.75, [249.0, 142.0, 9.0]),
    (1.0, [252.0, 255.0, 164.0]),
];

pub fn colormap(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let i = COLORMAP
        .windows(2)
        .position(|w| t <= w[1].0)
        .unwrap_or(COLORMAP.len() - 2);
    let (t0, c0) = COLORMAP[i];
    let (t1, c1) = COLORMAP[i + 1];
    let u = (t - t0) / (t1 - t0);
    let ch = |k: usize| (c0[k] + u * (c1[k] - c0[k])).round() as u8;
    Rgb([ch(0), ch(1), ch(2)])
}

/// Renders counts normalized by the grid maximum.
pub fn render_heatmap(grid: &HeatmapGrid) -> RgbImage {
    let max = grid.max().max(1) as f64;
    RgbImage::from_fn(grid.width, grid.height, |x, y| colormap(grid.get(x, y) as f64 / max))
}

/// Writes `{stem}.png` and `{stem}.json` into `dir`.
pub fn write_heatmap(grid: &HeatmapGrid, dir: &Path, stem: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let png = dir.join(format!("{stem}.png"));
    crate::png::save(&render_heatmap(grid), &png).map_err(|e| PipelineError::io(&png, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string(grid).expect("grid serializes");
    std::fs::write(&json, text + "\n").map_err(|e| PipelineError::io(&json, e))
}

/// File-name-safe form of a category name.
pub fn file_stem(name: &str) -> String {
    name.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{BBox, ImageFrame, LayoutObject, LayoutSource};

    fn layout(frame: (u32, u32), boxes: &[[f64; 4]]) -> Layout {
        let cat = CategoryLabel::new(1, "cat");
        Layout::new(
            ImageFrame::new(frame.0, frame.1),
            boxes
                .iter()
                .map(|b| LayoutObject::new(cat.clone(), BBox::from_array(*b)))
                .collect(),
            LayoutSource::GroundTruth,
        )
        .unwrap()
    }

    #[test]
    fn full_frame_box_is_all_ones() {
        let g = heatmap(&[layout((640, 480), &[[0.0, 0.0, 640.0, 480.0]])], &CategoryLabel::new(1, "cat"), (64, 64));
        assert!(g.counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn empty_input_is_zero() {
        let g = heatmap(&[], &CategoryLabel::new(1, "cat"), (8, 4));
        assert_eq!(g.counts, vec![0; 32]);
        assert_eq!(g.boxes, 0);
    }

    #[test]
    fn partial_cells_count() {
        // Rescaled onto 10x10: x in [2.5, 5), y in [0, 1) -> columns 2..5, row 0.
        let g = heatmap(&[layout((100, 100), &[[25.0, 0.0, 25.0, 10.0]])], &CategoryLabel::new(1, "cat"), (10, 10));
        assert_eq!(g.total(), 3);
        assert_eq!((g.get(2, 0), g.get(4, 0), g.get(5, 0)), (1, 1, 0));
    }

    #[test]
    fn other_categories_are_ignored() {
        let g = heatmap(&[layout((10, 10), &[[0.0, 0.0, 5.0, 5.0]])], &CategoryLabel::new(2, "dog"), (10, 10));
        assert_eq!(g.total(), 0);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 4]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 164]));
        assert_eq!(colormap(0.5), Rgb([188, 55, 84]));
    }
}
