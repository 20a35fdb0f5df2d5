mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use augment_core::annotations::{BBox, CocoDataset, ImageFrame};
use augment_core::lacs::{read_score_records, MockScorer};
use augment_core::llm::{BackendError, CompletionBackend, CompletionRequest, FixedCompletionBackend, SyntheticCompletionBackend};
use augment_core::lis::{ImageBatch, LisError, MockRenderer, SynthesisBackend, SynthesisRequest};
use augment_core::pipeline::{
    run_with, score_dataset, sweep_ratios, topn_study, Backends, PipelineConfig, PipelineError, SpeMethod,
};
use common::fixture;

fn config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        annotations: fixture("tiny10.json"),
        spe_method: SpeMethod::Gtos,
        out: out.to_path_buf(),
        mock: true,
        ..Default::default()
    }
}

fn mock() -> Backends {
    Backends::mock(0.3)
}

/// Mock renderer that counts calls and fails every call after the first `fail_after`.
struct Counting {
    inner: MockRenderer,
    calls: Arc<AtomicUsize>,
    fail_after: Option<usize>,
}

impl SynthesisBackend for Counting {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn is_deterministic(&self) -> bool {
        true
    }
    fn synthesize(&self, r: &SynthesisRequest) -> Result<ImageBatch, LisError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.fail_after {
            Some(k) if n >= k => Err(LisError::Protocol("simulated interruption".into())),
            _ => self.inner.synthesize(r),
        }
    }
}

fn counting(calls: &Arc<AtomicUsize>, fail_after: Option<usize>) -> Backends {
    Backends {
        lis: Box::new(Counting {
            inner: MockRenderer { hallucination_rate: 0.3 },
            calls: calls.clone(),
            fail_after,
        }),
        ..mock()
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn default_run_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&config(dir.path()), &mock()).unwrap();
    assert_eq!(out.summary.n_gt_layouts, 10);
    assert_eq!(out.summary.n_generated_layouts, 40);
    assert_eq!(out.summary.n_generated_images, 40);
    assert_eq!(out.dataset.images.len(), 50);
    assert_eq!(out.provenance.len(), 200);
    assert_eq!(out.scores.iter().filter(|s| s.picked).count(), 40);
    assert!(out.summary.quality.mlacs >= out.summary.quality.mlacs_all);

    let doc = CocoDataset::read(&dir.path().join("dataset.json")).unwrap();
    assert_eq!(doc.images.len(), 50);
    let ids: BTreeSet<u64> = doc.images.iter().map(|i| i.id).collect();
    assert_eq!(ids.len(), 50);
    for a in &doc.annotations {
        let img = doc.images.iter().find(|i| i.id == a.image_id).unwrap();
        BBox::from_array(a.bbox).check(ImageFrame::new(img.width, img.height)).unwrap();
    }
    for p in &out.provenance {
        assert!(dir.path().join(&p.image_file).is_file());
    }
    let picked_with_ids = out.provenance.iter().filter(|p| p.dataset_image_id.is_some()).count();
    assert_eq!(picked_with_ids, 40);
    assert_eq!(read_score_records(&dir.path().join("scores.jsonl")).unwrap().len(), 200);
    assert!(dir.path().join("heatmaps/cat_gt.png").is_file());
    assert!(dir.path().join("heatmaps/cat_gtos.json").is_file());
    assert!(dir.path().join("config.toml").is_file());
}

#[test]
fn original_entries_are_kept_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&config(dir.path()), &mock()).unwrap();
    let src = CocoDataset::read(&fixture("tiny10.json")).unwrap();
    assert_eq!(&out.dataset.images[..10], &src.images[..]);
    assert_eq!(&out.dataset.annotations[..src.annotations.len()], &src.annotations[..]);
}

#[test]
fn top3_triples_the_images() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig { top_n: 3, ..config(dir.path()) };
    let out = run_with(&c, &mock()).unwrap();
    assert_eq!(out.summary.n_generated_images, 3 * 4 * 10);
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_with(&config(a.path()), &mock()).unwrap();
    run_with(&config(b.path()), &mock()).unwrap();
    for f in ["dataset.json", "scores.jsonl", "summary.json", "images/L000007_3.png", "heatmaps/dog_gt.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    run_with(&PipelineConfig { seed: 1, ..config(c.path()) }, &mock()).unwrap();
    assert_ne!(read(&a.path().join("dataset.json")), read(&c.path().join("dataset.json")));
}

#[test]
fn resume_repeats_no_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let calls = Arc::new(AtomicUsize::new(0));
    let err = run_with(&c, &counting(&calls, Some(13))).unwrap_err();
    assert!(matches!(err, PipelineError::Synthesis { .. }));
    let first = calls.load(Ordering::SeqCst);
    assert_eq!(first, 40);

    let calls = Arc::new(AtomicUsize::new(0));
    let out = run_with(&c, &counting(&calls, None)).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 40 - 13);
    assert_eq!((out.synthesized, out.reused), (27, 13));

    let calls = Arc::new(AtomicUsize::new(0));
    run_with(&c, &counting(&calls, None)).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 0);

    let fresh = tempfile::tempdir().unwrap();
    run_with(&config(fresh.path()), &mock()).unwrap();
    assert_eq!(read(&dir.path().join("dataset.json")), read(&fresh.path().join("dataset.json")));
    assert_eq!(read(&dir.path().join("scores.jsonl")), read(&fresh.path().join("scores.jsonl")));
}

#[test]
fn changed_parameters_invalidate_work() {
    let dir = tempfile::tempdir().unwrap();
    run_with(&config(dir.path()), &mock()).unwrap();
    let mut c = config(dir.path());
    c.lis.steps = 20;
    let calls = Arc::new(AtomicUsize::new(0));
    run_with(&c, &counting(&calls, None)).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 40);
}

fn generated_files(doc: &CocoDataset) -> BTreeSet<String> {
    doc.images
        .iter()
        .filter(|i| i.file_name.starts_with("images/"))
        .map(|i| i.file_name.clone())
        .collect()
}

#[test]
fn sweep_datasets_are_nested_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig {
        sweep: Some(vec![4, 1, 2]),
        ..config(dir.path())
    };
    let report = sweep_ratios(&c, &mock()).unwrap();
    let alphas: Vec<usize> = report.entries.iter().map(|e| e.alpha).collect();
    assert_eq!(alphas, vec![1, 2, 4]);
    let mut prev = BTreeSet::new();
    for e in &report.entries {
        assert_eq!(e.n_generated_layouts, e.alpha * 10);
        assert_eq!(e.n_generated_images, e.alpha * 10);
        assert!(e.mlacs.is_finite());
        let doc = CocoDataset::read(&dir.path().join(&e.dataset)).unwrap();
        let files = generated_files(&doc);
        assert_eq!(files.len(), e.alpha * 10);
        assert!(prev.is_subset(&files));
        prev = files;
    }
    assert!(dir.path().join("sweep/report.json").is_file());
}

#[test]
fn sweep_matches_a_plain_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sweep_ratios(&PipelineConfig { sweep: Some(vec![2, 4]), ..config(a.path()) }, &mock()).unwrap();
    run_with(&config(b.path()), &mock()).unwrap();
    assert_eq!(read(&a.path().join("sweep/alpha_4/dataset.json")), read(&b.path().join("dataset.json")));
}

#[test]
fn topn_study_counts_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig {
        lis_batch: 8,
        topn_study: Some(vec![8, 1, 4]),
        mock_hallucination_rate: 0.5,
        ..config(dir.path())
    };
    let calls = Arc::new(AtomicUsize::new(0));
    let b = Backends {
        lis: Box::new(Counting {
            inner: MockRenderer { hallucination_rate: 0.5 },
            calls: calls.clone(),
            fail_after: None,
        }),
        ..mock()
    };
    let report = topn_study(&c, &b).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 40);
    let ns: Vec<usize> = report.entries.iter().map(|e| e.top_n).collect();
    assert_eq!(ns, vec![1, 4, 8]);
    for e in &report.entries {
        assert_eq!(e.n_generated_images, e.top_n * 40);
    }
    for w in report.entries.windows(2) {
        assert!(w[1].mlacs <= w[0].mlacs + 1e-12);
    }
    let top1 = generated_files(&CocoDataset::read(&dir.path().join(&report.entries[0].dataset)).unwrap());
    let top8 = generated_files(&CocoDataset::read(&dir.path().join(&report.entries[2].dataset)).unwrap());
    assert!(top1.is_subset(&top8));
    assert!(report.epoch_rescaling_note.contains("epochs"));
}

#[test]
fn topn_above_batch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig { topn_study: Some(vec![1, 8]), ..config(dir.path()) };
    assert!(matches!(topn_study(&c, &mock()), Err(PipelineError::Config(_))));
}

#[test]
fn every_layout_method_runs() {
    for m in [SpeMethod::Llm, SpeMethod::Gmm1, SpeMethod::Gmm2, SpeMethod::Gtos] {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig { spe_method: m, alpha: 2, ..config(dir.path()) };
        let out = run_with(&c, &mock()).unwrap();
        assert_eq!(out.summary.n_generated_images, 20, "{m}");
        assert_eq!(out.dataset.images.len(), 30, "{m}");
        let cache: Vec<_> = std::fs::read_dir(dir.path().join("spe")).unwrap().collect();
        assert!(!cache.is_empty(), "{m}");
    }
}

/// Claims the synthetic model's id but must never be called.
struct Unreachable;

impl CompletionBackend for Unreachable {
    fn id(&self) -> String {
        SyntheticCompletionBackend::default().id()
    }
    fn is_deterministic(&self) -> bool {
        true
    }
    fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
        panic!("layouts should come from the cache");
    }
}

#[test]
fn layouts_are_cached_between_runs() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig { spe_method: SpeMethod::Llm, ..config(dir.path()) };
    let first = run_with(&c, &mock()).unwrap();
    let again = run_with(&c, &Backends { llm: Box::new(Unreachable), ..mock() }).unwrap();
    assert_eq!(again.synthesized, 0);
    assert_eq!(first.scores, again.scores);

    // Another model is a different cache entry.
    let b = Backends {
        llm: Box::new(FixedCompletionBackend("garbage".into())),
        ..mock()
    };
    let out = run_with(&c, &b).unwrap();
    assert_eq!(out.summary.spe_fallbacks, 40);
}

#[test]
fn missing_backends_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let c = PipelineConfig { mock: false, spe_method: SpeMethod::Llm, ..config(dir.path()) };
    assert!(matches!(Backends::from_config(&c), Err(PipelineError::Config(_))));
    let c = PipelineConfig { mock: false, ..config(dir.path()) };
    let b = Backends::from_config(&c).unwrap();
    assert!(matches!(run_with(&c, &b), Err(PipelineError::Synthesis { .. })));
}

#[test]
fn generated_images_can_be_rescored() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(&config(dir.path()), &mock()).unwrap();
    let mut doc = out.dataset.clone();
    let keep: BTreeSet<u64> = doc.images.iter().filter(|i| i.file_name.starts_with("images/")).map(|i| i.id).collect();
    doc.images.retain(|i| keep.contains(&i.id));
    doc.annotations.retain(|a| keep.contains(&a.image_id));
    let path = dir.path().join("generated_only.json");
    doc.write(&path).unwrap();
    let (records, summary) = score_dataset(&path, dir.path(), &MockScorer::default()).unwrap();
    assert_eq!(records.len(), 40);
    assert!((summary.mlacs - out.summary.quality.mlacs).abs() < 1e-12);
}
