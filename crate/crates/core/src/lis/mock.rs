//! Deterministic stand-in for a diffusion backend.
//!
//! Draws a neutral grey canvas with one flat, category-coloured patch per
//! layout box and a 5×5 glyph in a darker shade of the same hue. With some
//! probability per image a patch of a layout category is injected outside
//! every layout box, mimicking out-of-layout hallucinations; its rectangle is
//! reported in the batch metadata.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{layout_rects, ImageBatch, LisError, RenderMetadata, SynthesisBackend, SynthesisRequest};
use crate::annotations::{normalize_name, CategoryLabel, PixelRect};
use crate::seed::{rng_from, stage};

pub const BACKGROUND: Rgb<u8> = Rgb([128, 128, 128]);
/// Pixels kept clear around layout boxes when placing hallucinations.
const CLEARANCE: u32 = 1;
const PLACEMENT_TRIES: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hallucination {
    pub category: String,
    pub rect: PixelRect,
}

fn hsv(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round() as u8;
    Rgb([q(r), q(g), q(b)])
}

fn name_digest(name: &str) -> [u8; 32] {
    Sha256::digest(normalize_name(name).as_bytes()).into()
}

/// Patch and glyph colours of a category, derived from its name.
pub fn category_colors(name: &str) -> (Rgb<u8>, Rgb<u8>) {
    let d = name_digest(name);
    let hue = u16::from_le_bytes([d[0], d[1]]) as f64 / 65536.0 * 360.0;
    (hsv(hue, 0.85, 0.9), hsv(hue, 0.85, 0.45))
}

fn glyph_bits(name: &str) -> u32 {
    let d = name_digest(name);
    u32::from_le_bytes([d[2], d[3], d[4], d[5]]) & 0x01ff_ffff
}

fn fill(img: &mut RgbImage, r: &PixelRect, color: Rgb<u8>) {
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            img.put_pixel(x, y, color);
        }
    }
}

fn draw_patch(img: &mut RgbImage, r: &PixelRect, name: &str) {
    let (patch, glyph) = category_colors(name);
    fill(img, r, patch);
    let cell = r.width().min(r.height()) / 10;
    if cell == 0 {
        return;
    }
    let bits = glyph_bits(name);
    let ox = r.x0 + (r.width() - 5 * cell) / 2;
    let oy = r.y0 + (r.height() - 5 * cell) / 2;
    for gy in 0..5 {
        for gx in 0..5 {
            if bits >> (gy * 5 + gx) & 1 == 1 {
                let c = PixelRect {
                    x0: ox + gx * cell,
                    y0: oy + gy * cell,
                    x1: ox + (gx + 1) * cell,
                    y1: oy + (gy + 1) * cell,
                };
                fill(img, &c, glyph);
            }
        }
    }
}

fn place_hallucination(
    rng: &mut ChaCha8Rng,
    width: u32,
    height: u32,
    blocked: &[PixelRect],
) -> Option<PixelRect> {
    let mut side = ((width.min(height) as f64) * rng.random_range(0.08..0.2)).round() as u32;
    side = side.max(2);
    while side >= 2 {
        if side <= width && side <= height {
            for _ in 0..PLACEMENT_TRIES {
                let x0 = rng.random_range(0..=width - side);
                let y0 = rng.random_range(0..=height - side);
                let r = PixelRect {
                    x0,
                    y0,
                    x1: x0 + side,
                    y1: y0 + side,
                };
                if !blocked.iter().any(|b| b.intersects(&r)) {
                    return Some(r);
                }
            }
        }
        side /= 2;
    }
    None
}

/// Renders a mock batch. Injection happens independently per image with
/// probability `hallucination_rate`; when no free area is left outside the
/// layout boxes nothing is injected.
pub fn mock_render(request: &SynthesisRequest, hallucination_rate: f64) -> ImageBatch {
    let layout = &request.layout;
    let (w, h) = (layout.frame.width, layout.frame.height);
    let rects = layout_rects(layout);
    let blocked: Vec<PixelRect> = rects.iter().map(|r| r.expand(CLEARANCE)).collect();
    let categories: Vec<CategoryLabel> = layout.distinct_categories();
    let rate = hallucination_rate.clamp(0.0, 1.0);

    let mut clean = RgbImage::from_pixel(w, h, BACKGROUND);
    for (obj, r) in layout.objects.iter().zip(&rects) {
        draw_patch(&mut clean, r, &obj.category.name);
    }

    let mut images = Vec::with_capacity(request.params.batch_size);
    let mut metadata = Vec::with_capacity(request.params.batch_size);
    for i in 0..request.params.batch_size {
        let mut rng = rng_from(request.seed, &[stage::RENDER, i as u64]);
        let mut img = clean.clone();
        let mut meta = RenderMetadata::default();
        if !categories.is_empty() && rng.random_bool(rate) {
            let cat = &categories[rng.random_range(0..categories.len())];
            if let Some(r) = place_hallucination(&mut rng, w, h, &blocked) {
                draw_patch(&mut img, &r, &cat.name);
                meta.hallucinations.push(Hallucination {
                    category: cat.name.clone(),
                    rect: r,
                });
            }
        }
        images.push(img);
        metadata.push(meta);
    }
    ImageBatch {
        images,
        request: request.clone(),
        backend_id: format!("mock-renderer(rate={rate})"),
        metadata,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockRenderer {
    pub hallucination_rate: f64,
}

impl SynthesisBackend for MockRenderer {
    fn id(&self) -> String {
        format!("mock-renderer(rate={})", self.hallucination_rate)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn synthesize(&self, request: &SynthesisRequest) -> Result<ImageBatch, LisError> {
        Ok(mock_render(request, self.hallucination_rate))
    }
}
