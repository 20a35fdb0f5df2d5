//! Deterministic scorer for the mock renderer.
//!
//! A category text scores `ln(p + ε)`, where `p` is the fraction of pixels
//! painted in that category's patch or glyph colour. `"background"` scores the
//! constant `ln(β)` and `"white space"` scores `ln(λ·W + ε)` with `W` the
//! fraction of pure-white pixels. With `λ < β` the sample score strictly drops
//! whenever the renderer injects a patch outside the layout.

use image::RgbImage;

use super::{ImageTextScorer, LacsError, BACKGROUND_TEXT, MASK_COLOR, WHITE_SPACE_TEXT};
use crate::lis::category_colors;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockScorer {
    pub epsilon: f64,
    pub background: f64,
    pub white_space: f64,
}

impl Default for MockScorer {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            background: 0.1,
            white_space: 0.05,
        }
    }
}

fn fraction(image: &RgbImage, pred: impl Fn(&image::Rgb<u8>) -> bool) -> f64 {
    let n = image.pixels().len();
    if n == 0 {
        return 0.0;
    }
    image.pixels().filter(|p| pred(p)).count() as f64 / n as f64
}

impl ImageTextScorer for MockScorer {
    fn id(&self) -> String {
        format!(
            "mock-scorer(eps={},bg={},ws={})",
            self.epsilon, self.background, self.white_space
        )
    }

    fn logits(&self, image: &RgbImage, texts: &[String]) -> Result<Vec<f64>, LacsError> {
        Ok(texts
            .iter()
            .map(|t| {
                let t = t.trim().to_lowercase();
                if t == BACKGROUND_TEXT {
                    self.background.ln()
                } else if t == WHITE_SPACE_TEXT {
                    let w = fraction(image, |p| *p == MASK_COLOR);
                    (self.white_space * w + self.epsilon).ln()
                } else {
                    let (patch, glyph) = category_colors(&t);
                    let p = fraction(image, |q| *q == patch || *q == glyph);
                    (p + self.epsilon).ln()
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn logits_follow_pixel_fractions() {
        let s = MockScorer::default();
        let (patch, _) = category_colors("cat");
        let mut img = RgbImage::from_pixel(10, 10, Rgb([128, 128, 128]));
        for x in 0..5 {
            for y in 0..10 {
                img.put_pixel(x, y, patch);
            }
        }
        for y in 0..10 {
            img.put_pixel(9, y, MASK_COLOR);
        }
        let texts: Vec<String> = ["cat", "background", "white space", "dog"]
            .iter()
            .map(|t| t.to_string())
            .collect();
        let l = s.logits(&img, &texts).unwrap();
        assert!((l[0] - (0.5f64 + 1e-9).ln()).abs() < 1e-12);
        assert!((l[1] - 0.1f64.ln()).abs() < 1e-12);
        assert!((l[2] - (0.05 * 0.1f64 + 1e-9).ln()).abs() < 1e-12);
        assert!((l[3] - 1e-9f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn white_image_scores_low_mask() {
        let img = RgbImage::from_pixel(8, 8, MASK_COLOR);
        let cat = crate::annotations::CategoryLabel::new(1, "cat");
        let v = super::super::category_cs_mask(&MockScorer::default(), &img, &cat).unwrap();
        assert!(v < 0.5);
    }
}
