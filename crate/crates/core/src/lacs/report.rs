//! Score reports: one JSON line per sample plus an aggregate summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategoryScore, SampleScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub name: String,
    pub cs: f64,
    pub cs_mask: f64,
    pub delta: f64,
}

impl From<&CategoryScore> for CategoryRecord {
    fn from(c: &CategoryScore) -> Self {
        Self {
            name: c.category.name.clone(),
            cs: c.cs,
            cs_mask: c.cs_mask,
            delta: c.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_ref: String,
    pub layout_id: String,
    pub per_category: Vec<CategoryRecord>,
    pub lacs: f64,
    pub picked: bool,
}

impl ScoreRecord {
    pub fn new(sample_ref: String, layout_id: String, score: &SampleScore, picked: bool) -> Self {
        Self {
            sample_ref,
            layout_id,
            per_category: score.per_category.iter().map(CategoryRecord::from).collect(),
            lacs: score.lacs,
            picked,
        }
    }
}

/// Aggregate quality of a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    /// Mean LACS of the picked samples.
    pub mlacs: f64,
    /// Mean LACS of every generated sample.
    pub mlacs_all: f64,
    /// Mean CS-Crop of the picked samples.
    pub cs_crop: Option<f64>,
    pub n_samples: usize,
    pub picked_fraction: f64,
}

pub fn write_score_records(path: &Path, records: &[ScoreRecord]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_score_records(path: &Path) -> std::io::Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::CategoryLabel;

    #[test]
    fn jsonl_round_trip() {
        let score = SampleScore::from_categories(
            2,
            vec![CategoryScore::new(CategoryLabel::new(1, "cat"), 0.9, 0.25)],
        )
        .unwrap();
        let recs = vec![
            ScoreRecord::new("l0_2".into(), "l0".into(), &score, true),
            ScoreRecord::new("l0_3".into(), "l0".into(), &score, false),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.jsonl");
        write_score_records(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"sample_ref":"l0_2","layout_id":"l0","per_category":[{"name":"cat""#));
        assert_eq!(read_score_records(&p).unwrap(), recs);
    }
}
