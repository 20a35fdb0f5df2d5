//! Ground-truth oversampling with random x-axis flips.

use rand::Rng;

use super::{AnnotationError, FewShotSet, Layout, LayoutObject, LayoutSource};
use crate::seed::{rng_from, stage};

/// Mirrors every box of the layout horizontally. Applying it twice is the identity.
pub fn flip_layout(layout: &Layout) -> Layout {
    Layout {
        frame: layout.frame,
        objects: layout
            .objects
            .iter()
            .map(|o| LayoutObject::new(o.category.clone(), o.bbox.flip_x(layout.frame)))
            .collect(),
        caption: layout.caption.clone(),
        source: layout.source,
    }
}

/// One oversampled copy of `layout` for slot `(round, index)`, flipped with p = 0.5.
pub(crate) fn gtos_copy(layout: &Layout, seed: u64, round: u64, index: u64) -> Layout {
    let mut rng = rng_from(seed, &[stage::GTOS, round, index]);
    let copy = if rng.random_bool(0.5) {
        flip_layout(layout)
    } else {
        layout.clone()
    };
    copy.with_source(LayoutSource::Oversampled)
}

/// Returns `ratio × |layouts|` copies in round-major order: entry `r·N + i` is
/// round `r` of ground-truth layout `i`. Each copy is independently flipped with
/// probability one half, decided by a generator seeded from `(seed, r, i)`, so a
/// smaller ratio always yields a prefix of a larger one.
pub fn oversample_gtos(
    set: &FewShotSet,
    ratio: usize,
    seed: u64,
) -> Result<Vec<Layout>, AnnotationError> {
    if ratio < 1 {
        return Err(AnnotationError::Argument(format!(
            "augmentation ratio must be >= 1, got {ratio}"
        )));
    }
    Ok((0..ratio as u64)
        .flat_map(|r| {
            set.layouts
                .iter()
                .enumerate()
                .map(move |(i, l)| gtos_copy(l, seed, r, i as u64))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{BBox, CategoryLabel, CategoryRegistry, ImageFrame};

    fn set_of_two() -> FewShotSet {
        let cat = CategoryLabel::new(1, "cat");
        let frame = ImageFrame::new(640, 480);
        let layouts = vec![
            Layout::new(
                frame,
                vec![LayoutObject::new(cat.clone(), BBox::new(10.0, 20.0, 100.0, 50.0))],
                LayoutSource::GroundTruth,
            )
            .unwrap(),
            Layout::new(
                frame,
                vec![LayoutObject::new(cat.clone(), BBox::new(300.0, 200.0, 40.0, 40.0))],
                LayoutSource::GroundTruth,
            )
            .unwrap(),
        ];
        FewShotSet::from_layouts(layouts, CategoryRegistry::new([cat]).unwrap()).unwrap()
    }

    #[test]
    fn cardinality_and_source() {
        let out = oversample_gtos(&set_of_two(), 4, 0).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|l| l.source == LayoutSource::Oversampled));
        assert!(out.iter().all(|l| l.validate().is_ok()));
    }

    #[test]
    fn flip_arithmetic() {
        let b = BBox::new(10.0, 5.0, 100.0, 20.0).flip_x(ImageFrame::new(640, 480));
        assert_eq!(b, BBox::new(530.0, 5.0, 100.0, 20.0));
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let set = set_of_two();
        let a = oversample_gtos(&set, 4, 3).unwrap();
        assert_eq!(a, oversample_gtos(&set, 4, 3).unwrap());
        let b = oversample_gtos(&set, 8, 3).unwrap();
        assert_eq!(&b[..8], &a[..]);
    }

    #[test]
    fn flips_both_ways_across_copies() {
        let set = set_of_two();
        let out = oversample_gtos(&set, 32, 1).unwrap();
        let flipped = out
            .iter()
            .zip(set.layouts.iter().cycle())
            .filter(|(o, gt)| o.objects != gt.objects)
            .count();
        assert!(flipped > 8 && flipped < 56, "flipped {flipped} of 64");
    }

    #[test]
    fn zero_ratio_rejected() {
        assert!(matches!(
            oversample_gtos(&set_of_two(), 0, 0),
            Err(AnnotationError::Argument(_))
        ));
    }
}
