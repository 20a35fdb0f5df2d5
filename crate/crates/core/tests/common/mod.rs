#![allow(dead_code)]

use std::path::PathBuf;

use augment_core::annotations::{BBox, CategoryLabel, CategoryRegistry, FewShotSet, ImageFrame, Layout, LayoutObject, LayoutSource};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub const NAMES: [&str; 6] = ["cat", "dog", "traffic light", "apple", "umbrella", "person"];

pub fn registry() -> CategoryRegistry {
    CategoryRegistry::new(NAMES.iter().enumerate().map(|(i, n)| CategoryLabel::new(i as u64 + 1, *n))).unwrap()
}

/// Random valid layout with 1..=max_objects boxes of at least 2×2 pixels.
pub fn random_layout<R: Rng>(rng: &mut R, frame: ImageFrame, max_objects: usize) -> Layout {
    let reg = registry();
    let labels: Vec<CategoryLabel> = reg.iter().cloned().collect();
    let n = rng.random_range(1..=max_objects);
    let (fw, fh) = (frame.width as f64, frame.height as f64);
    let objects = (0..n)
        .map(|_| {
            let w = rng.random_range(2.0..fw * 0.6);
            let h = rng.random_range(2.0..fh * 0.6);
            let x = rng.random_range(0.0..fw - w);
            let y = rng.random_range(0.0..fh - h);
            LayoutObject::new(labels[rng.random_range(0..labels.len())].clone(), BBox::new(x, y, w, h))
        })
        .collect();
    Layout::new(frame, objects, LayoutSource::GroundTruth).unwrap()
}

pub fn random_set<R: Rng>(rng: &mut R, n: usize) -> FewShotSet {
    let layouts = (0..n)
        .map(|_| {
            let frame = ImageFrame::new(rng.random_range(64..400), rng.random_range(64..400));
            random_layout(rng, frame, 4)
        })
        .collect();
    FewShotSet::from_layouts(layouts, registry()).unwrap()
}
