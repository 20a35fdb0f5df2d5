//! Image encoding helpers shared by the HTTP adapters and the pipeline.

use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, ImageFormat, RgbImage};

pub fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

/// Decodes PNG or JPEG bytes, detected from the header.
pub fn decode(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

pub fn encode_base64(img: &RgbImage) -> String {
    STANDARD.encode(encode(img))
}

pub fn decode_base64(text: &str) -> Result<RgbImage, String> {
    let bytes = STANDARD.decode(text.trim()).map_err(|e| e.to_string())?;
    decode(&bytes).map_err(|e| e.to_string())
}

pub fn save(img: &RgbImage, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode(img))
}

pub fn load(path: &Path) -> Result<RgbImage, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    image::load_from_memory(&bytes)
        .map(DynamicImage::into_rgb8)
        .map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| image::Rgb([x as u8, y as u8, 7]));
        assert_eq!(decode_base64(&encode_base64(&img)).unwrap(), img);
    }
}
