use std::fs;

use fgdata_core::config::RejectedPolicy;
use fgdata_core::export::{export_release, IMAGES_DIR, MANIFEST_FILE};
use fgdata_core::fixtures::{write_corpus, FixtureCorpus, FixtureSpec};
use fgdata_core::manifest::{load_manifest, save_manifest, ImageRecord};
use fgdata_core::models::BackendRegistry;
use fgdata_core::pipeline::{load_rgb, CompositeConfig, DatasetRoots, Pipeline};
use fgdata_core::qa::{FlagKind, ReviewAction, ReviewContext, ReviewDecision, ReviewSession};
use fgdata_core::{ReviewState, Split};

fn small() -> FixtureSpec {
    FixtureSpec {
        clean: 8,
        ..FixtureSpec::default()
    }
}

#[test]
fn foreground_keeps_subject_and_whitens_background() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path().join("src"), &small()).unwrap();
    let p = Pipeline::new(&BackendRegistry::default(), FixtureCorpus::pipeline_config()).unwrap();
    let roots = DatasetRoots::new(&corpus.root, dir.path().join("fg"));
    let (out, stats) = p.process_dataset(&corpus.manifest, &roots, 3).unwrap();
    assert_eq!(stats.processed, 13);
    assert_eq!(stats.flagged, 5);
    assert_eq!(out.name, "Fixture_FG");
    assert_eq!(out.provenance.source, "Fixture");
    assert_eq!(out.provenance.config_digest.as_deref(), Some(FixtureCorpus::pipeline_config().digest().as_str()));

    for r in out.records.iter().filter(|r| !r.is_flagged()) {
        let src = load_rgb(&corpus.root.join(&r.source_path)).unwrap();
        let fg = load_rgb(&roots.out_root.join(r.fg_path.as_ref().unwrap())).unwrap();
        let mask = r.mask.as_ref().unwrap().decode().unwrap();
        assert_eq!(fg.dimensions(), src.dimensions());
        for (x, y, p) in fg.enumerate_pixels() {
            let want = if mask.get(y as usize, x as usize) { *src.get_pixel(x, y) } else { image::Rgb([255, 255, 255]) };
            assert_eq!(*p, want, "{} at ({x},{y})", r.record_id);
        }
    }
    for r in out.records.iter().filter(|r| r.is_flagged()) {
        assert!(r.fg_path.is_none());
    }
}

#[test]
fn transparent_mode_writes_rgba_png() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path().join("src"), &small()).unwrap();
    let mut cfg = FixtureCorpus::pipeline_config();
    cfg.composite = CompositeConfig::transparent();
    let p = Pipeline::new(&BackendRegistry::default(), cfg).unwrap();
    let roots = DatasetRoots::new(&corpus.root, dir.path().join("fg"));
    let (out, _) = p.process_dataset(&corpus.manifest, &roots, 1).unwrap();
    let r = out.records.iter().find(|r| r.fg_path.is_some()).unwrap();
    let img = image::open(roots.out_root.join(r.fg_path.as_ref().unwrap())).unwrap();
    assert!(img.color().has_alpha());
    assert!(img.to_rgba8().pixels().any(|p| p.0[3] == 0));
}

#[test]
fn missing_image_becomes_processing_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = write_corpus(dir.path().join("src"), &small()).unwrap();
    corpus
        .manifest
        .records
        .push(ImageRecord::new("train/class_00/gone.png", 0, "class_00", Split::Train));
    let p = Pipeline::new(&BackendRegistry::default(), FixtureCorpus::pipeline_config()).unwrap();
    let (out, stats) = p
        .process_dataset(&corpus.manifest, &DatasetRoots::new(&corpus.root, dir.path().join("fg")), 2)
        .unwrap();
    assert_eq!(out.records.len(), 14);
    assert!(out.records[13].has_flag(FlagKind::ProcessingError));
    assert_eq!(stats.failures.len(), 1);
}

#[test]
fn manifest_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path().join("src"), &small()).unwrap();
    let p = Pipeline::new(&BackendRegistry::default(), FixtureCorpus::pipeline_config()).unwrap();
    let (out, _) = p
        .process_dataset(&corpus.manifest, &DatasetRoots::new(&corpus.root, dir.path().join("fg")), 2)
        .unwrap();
    let path = dir.path().join("fg.manifest.jsonl");
    save_manifest(&out, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), out);
}

#[test]
fn review_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path().join("src"), &small()).unwrap();
    let cfg = FixtureCorpus::pipeline_config();
    let p = Pipeline::new(&BackendRegistry::default(), cfg.clone()).unwrap();
    let roots = DatasetRoots::new(&corpus.root, dir.path().join("fg"));
    let (out, _) = p.process_dataset(&corpus.manifest, &roots, 2).unwrap();
    let ctx = ReviewContext {
        segmenter: p.segmenter(),
        vocabulary: cfg.detector.vocabulary.clone(),
        composite: cfg.composite,
        thresholds: cfg.thresholds.clone(),
        roots: roots.clone(),
    };
    let mut session = ReviewSession::open(out, ctx, None).unwrap();
    let blank = corpus.expected.iter().find(|(_, k)| **k == FlagKind::NoSubject).unwrap().0.clone();
    let wrong = corpus.expected.iter().find(|(_, k)| **k == FlagKind::WrongSubject).unwrap().0.clone();
    for (id, action) in [(&blank, ReviewAction::Reject), (&wrong, ReviewAction::Accept)] {
        session
            .decide(ReviewDecision {
                record_id: id.clone(),
                action,
                manual_box: None,
                reviewer: "t".into(),
                timestamp: chrono::Utc::now(),
            })
            .unwrap();
    }
    assert_eq!(session.record(&wrong).unwrap().review, ReviewState::Accepted);

    let release = dir.path().join("release");
    let (m, rep) = export_release(session.manifest(), &roots, &release, RejectedPolicy::Drop).unwrap();
    assert_eq!((rep.exported, rep.dropped_rejected, rep.skipped_pending), (9, 1, 3));
    assert_eq!(m.records.len(), 9);
    for r in &m.records {
        assert!(release.join(IMAGES_DIR).join(r.fg_path.as_ref().unwrap()).is_file());
    }
    assert_eq!(load_manifest(release.join(MANIFEST_FILE)).unwrap(), m);

    let keep = dir.path().join("release_keep");
    let (_, rep) = export_release(session.manifest(), &roots, &keep, RejectedPolicy::KeepSource).unwrap();
    assert_eq!(rep.kept_source, 1);
    assert_eq!(
        fs::read(keep.join(IMAGES_DIR).join(&blank)).unwrap(),
        fs::read(corpus.root.join(&blank)).unwrap()
    );
}
