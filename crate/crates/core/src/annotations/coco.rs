//! COCO detection JSON reading and writing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    infer_shots, instance_counts, AnnotationError, AnnotationIssue, BBox, CategoryLabel,
    CategoryRegistry, FewShotSet, ImageFrame, ImageRef, Layout, LayoutObject, LayoutSource,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A COCO detection document. Unknown fields are carried through untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default)]
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn parse_error(text: &str, err: serde_json::Error) -> AnnotationError {
    let (line, column) = (err.line(), err.column());
    let offset = if line == 0 {
        0
    } else {
        text.split_inclusive('\n')
            .take(line - 1)
            .map(str::len)
            .sum::<usize>()
            + column.saturating_sub(1)
    };
    AnnotationError::Parse {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

impl CocoDataset {
    pub fn from_json_str(text: &str) -> Result<Self, AnnotationError> {
        serde_json::from_str(text).map_err(|e| parse_error(text, e))
    }

    pub fn read(path: &Path) -> Result<Self, AnnotationError> {
        let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), AnnotationError> {
        let write_err = |source| AnnotationError::Write {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(write_err)?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("COCO document serializes");
        text.push('\n');
        fs::write(path, text).map_err(write_err)
    }

    pub fn registry(&self) -> Result<CategoryRegistry, AnnotationError> {
        CategoryRegistry::new(
            self.categories
                .iter()
                .map(|c| CategoryLabel::new(c.id, c.name.clone())),
        )
    }

    /// Builds a document from layouts, using the given image ids verbatim.
    pub fn from_layouts(
        layouts: &[Layout],
        images: &[ImageRef],
        registry: &CategoryRegistry,
    ) -> Result<Self, AnnotationError> {
        let mut doc = CocoDataset {
            categories: registry
                .iter()
                .map(|c| CocoCategory {
                    id: c.id,
                    name: c.name.clone(),
                    extra: Map::new(),
                })
                .collect(),
            ..Default::default()
        };
        doc.push_layouts(layouts, images, 1)?;
        Ok(doc)
    }

    /// Appends layouts as new images with fresh ids above any existing id.
    ///
    /// Returns the assigned image ids.
    pub fn append_layouts(
        &mut self,
        layouts: &[Layout],
        file_names: &[String],
    ) -> Result<Vec<u64>, AnnotationError> {
        if layouts.len() != file_names.len() {
            return Err(AnnotationError::CountMismatch {
                layouts: layouts.len(),
                images: file_names.len(),
            });
        }
        let first_image = self.images.iter().map(|i| i.id).max().unwrap_or(0) + 1;
        let refs: Vec<ImageRef> = file_names
            .iter()
            .enumerate()
            .map(|(i, f)| ImageRef {
                id: first_image + i as u64,
                file_name: f.clone(),
            })
            .collect();
        let known: BTreeSet<u64> = self.categories.iter().map(|c| c.id).collect();
        let mut missing = BTreeMap::new();
        for l in layouts {
            for o in &l.objects {
                if !known.contains(&o.category.id) {
                    missing.insert(o.category.id, o.category.name.clone());
                }
            }
        }
        for (id, name) in missing {
            self.categories.push(CocoCategory {
                id,
                name,
                extra: Map::new(),
            });
        }
        self.categories.sort_by_key(|c| c.id);
        let first_ann = self.annotations.iter().map(|a| a.id).max().unwrap_or(0) + 1;
        self.push_layouts(layouts, &refs, first_ann)?;
        Ok(refs.into_iter().map(|r| r.id).collect())
    }

    fn push_layouts(
        &mut self,
        layouts: &[Layout],
        images: &[ImageRef],
        first_annotation_id: u64,
    ) -> Result<(), AnnotationError> {
        if layouts.len() != images.len() {
            return Err(AnnotationError::CountMismatch {
                layouts: layouts.len(),
                images: images.len(),
            });
        }
        for (index, layout) in layouts.iter().enumerate() {
            layout
                .validate()
                .map_err(|reason| AnnotationError::InvalidLayout { index, reason })?;
        }
        let mut ann_id = first_annotation_id;
        for (layout, image) in layouts.iter().zip(images) {
            self.images.push(CocoImage {
                id: image.id,
                file_name: image.file_name.clone(),
                width: layout.frame.width,
                height: layout.frame.height,
                extra: Map::new(),
            });
            for obj in &layout.objects {
                let mut extra = Map::new();
                extra.insert("area".into(), Value::from(obj.bbox.area()));
                extra.insert("iscrowd".into(), Value::from(0));
                self.annotations.push(CocoAnnotation {
                    id: ann_id,
                    image_id: image.id,
                    category_id: obj.category.id,
                    bbox: obj.bbox.to_array(),
                    extra,
                });
                ann_id += 1;
            }
        }
        Ok(())
    }
}

fn read_shot_list(path: &Path) -> Result<BTreeSet<u64>, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id = line.parse::<u64>().map_err(|_| AnnotationError::ShotList {
            line: i + 1,
            content: line.to_string(),
        })?;
        ids.insert(id);
    }
    Ok(ids)
}

/// Loads COCO detection annotations, optionally restricted to a shot list of
/// annotation ids, and groups them into one ground-truth layout per image.
///
/// Images without any selected annotation are dropped.
pub fn load_coco(path: &Path, shot_list: Option<&Path>) -> Result<FewShotSet, AnnotationError> {
    let doc = CocoDataset::read(path)?;
    let selection = shot_list.map(read_shot_list).transpose()?;
    let mut set = few_shot_from_document(doc, selection.as_ref())?;
    set.shot_list = shot_list.map(|p| p.display().to_string());
    Ok(set)
}

pub(crate) fn few_shot_from_document(
    doc: CocoDataset,
    selection: Option<&BTreeSet<u64>>,
) -> Result<FewShotSet, AnnotationError> {
    let categories = doc.registry()?;
    let images: BTreeMap<u64, &CocoImage> = doc.images.iter().map(|i| (i.id, i)).collect();

    if let Some(sel) = selection {
        let present: BTreeSet<u64> = doc.annotations.iter().map(|a| a.id).collect();
        let absent = sel.difference(&present).count();
        if absent > 0 {
            log::warn!("{absent} shot-list ids do not occur in the annotation file");
        }
    }

    let selected: Vec<&CocoAnnotation> = doc
        .annotations
        .iter()
        .filter(|a| selection.is_none_or(|s| s.contains(&a.id)))
        .collect();

    let mut issues = Vec::new();
    let mut per_image: BTreeMap<u64, Vec<LayoutObject>> = BTreeMap::new();
    for ann in &selected {
        let image = images
            .get(&ann.image_id)
            .ok_or(AnnotationError::UnknownImage {
                annotation_id: ann.id,
                image_id: ann.image_id,
            })?;
        let category = categories
            .get(ann.category_id)
            .ok_or(AnnotationError::UnknownCategory {
                annotation_id: ann.id,
                category_id: ann.category_id,
            })?;
        let bbox = BBox::from_array(ann.bbox);
        if let Err(reason) = bbox.check(ImageFrame::new(image.width, image.height)) {
            issues.push(AnnotationIssue {
                annotation_id: ann.id,
                reason,
            });
            continue;
        }
        per_image
            .entry(ann.image_id)
            .or_default()
            .push(LayoutObject::new(category.clone(), bbox));
    }
    if !issues.is_empty() {
        return Err(AnnotationError::Validation(issues));
    }

    let mut layouts = Vec::new();
    let mut refs = Vec::new();
    for image in &doc.images {
        let Some(objects) = per_image.remove(&image.id) else {
            continue;
        };
        let frame = ImageFrame::new(image.width, image.height);
        let layout = Layout::new(frame, objects, LayoutSource::GroundTruth).map_err(|reason| {
            AnnotationError::InvalidLayout {
                index: layouts.len(),
                reason,
            }
        })?;
        layouts.push(layout);
        refs.push(ImageRef {
            id: image.id,
            file_name: image.file_name.clone(),
        });
    }

    let counts = instance_counts(&layouts);
    let shots = infer_shots(&counts);
    for (id, n) in &counts {
        if *n != shots {
            let name = categories.get(*id).map(|c| c.name.as_str()).unwrap_or("?");
            log::warn!("category {name} has {n} instances, expected {shots}-shot");
        }
    }

    let kept_images: BTreeSet<u64> = refs.iter().map(|r| r.id).collect();
    let raw = CocoDataset {
        images: doc
            .images
            .iter()
            .filter(|i| kept_images.contains(&i.id))
            .cloned()
            .collect(),
        annotations: selected.into_iter().cloned().collect(),
        categories: doc.categories.clone(),
        extra: doc.extra.clone(),
    };

    Ok(FewShotSet {
        shots,
        layouts,
        images: refs,
        categories,
        raw,
        shot_list: None,
    })
}

/// Writes layouts as a COCO document with image and annotation ids numbered
/// from 1. Boxes are written as given; an invalid layout aborts the write.
pub fn emit_coco(
    layouts: &[Layout],
    images: &[String],
    path: &Path,
) -> Result<CocoDataset, AnnotationError> {
    if layouts.len() != images.len() {
        return Err(AnnotationError::CountMismatch {
            layouts: layouts.len(),
            images: images.len(),
        });
    }
    let mut labels = BTreeMap::new();
    for l in layouts {
        for o in &l.objects {
            labels.entry(o.category.id).or_insert_with(|| o.category.clone());
        }
    }
    let registry = CategoryRegistry::new(labels.into_values())?;
    let refs: Vec<ImageRef> = images
        .iter()
        .enumerate()
        .map(|(i, f)| ImageRef {
            id: i as u64 + 1,
            file_name: f.clone(),
        })
        .collect();
    let doc = CocoDataset::from_layouts(layouts, &refs, &registry)?;
    doc.write(path)?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_CAT: &str = r#"{
        "images": [{"id": 1, "file_name": "a.jpg", "width": 640, "height": 480}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 17, "bbox": [10, 10, 100, 100]}],
        "categories": [{"id": 17, "name": "cat"}]
    }"#;

    #[test]
    fn single_object_file() {
        let doc = CocoDataset::from_json_str(ONE_CAT).unwrap();
        let set = few_shot_from_document(doc, None).unwrap();
        assert_eq!(set.layouts.len(), 1);
        assert_eq!(set.layouts[0].caption, "a cat");
        assert_eq!(set.layouts[0].frame, ImageFrame::new(640, 480));
        assert_eq!(set.shots, 1);
    }

    #[test]
    fn zero_width_box_names_the_annotation() {
        let text = ONE_CAT.replace("[10, 10, 100, 100]", "[10, 10, 0, 100]");
        let doc = CocoDataset::from_json_str(&text).unwrap();
        match few_shot_from_document(doc, None) {
            Err(AnnotationError::Validation(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].annotation_id, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let text = ONE_CAT.replace("[10, 10, 100, 100]", "[600, 10, 100, 100]");
        let doc = CocoDataset::from_json_str(&text).unwrap();
        assert!(matches!(
            few_shot_from_document(doc, None),
            Err(AnnotationError::Validation(_))
        ));
    }

    #[test]
    fn unknown_category_is_a_registry_error() {
        let text = ONE_CAT.replace("\"category_id\": 17", "\"category_id\": 99");
        let doc = CocoDataset::from_json_str(&text).unwrap();
        assert!(matches!(
            few_shot_from_document(doc, None),
            Err(AnnotationError::UnknownCategory {
                annotation_id: 5,
                category_id: 99
            })
        ));
    }

    #[test]
    fn malformed_json_reports_byte_offset() {
        let text = "{\n  \"images\": [,]\n}";
        match CocoDataset::from_json_str(text) {
            Err(AnnotationError::Parse { offset, line, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(&text[offset..offset + 1], ",");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shot_selection_filters_annotations() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.jpg", "width": 100, "height": 100},
                       {"id": 2, "file_name": "b.jpg", "width": 100, "height": 100}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
                            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [5, 5, 10, 10]},
                            {"id": 3, "image_id": 2, "category_id": 1, "bbox": [5, 5, 10, 10]}],
            "categories": [{"id": 1, "name": "dog"}]
        }"#;
        let doc = CocoDataset::from_json_str(text).unwrap();
        let sel: BTreeSet<u64> = [2].into_iter().collect();
        let set = few_shot_from_document(doc, Some(&sel)).unwrap();
        assert_eq!(set.layouts.len(), 1);
        assert_eq!(set.layouts[0].objects.len(), 1);
        assert_eq!(set.raw.annotations.len(), 1);
        assert_eq!(set.raw.images.len(), 1);
    }

    #[test]
    fn extra_fields_survive() {
        let text = ONE_CAT.replace("\"width\": 640", "\"coco_url\": \"http://x\", \"width\": 640");
        let doc = CocoDataset::from_json_str(&text).unwrap();
        let round: CocoDataset =
            serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(round.images[0].extra["coco_url"], "http://x");
    }
}
