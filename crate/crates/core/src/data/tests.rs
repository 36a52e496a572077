use tempfile::TempDir;

use super::synth::*;
use super::*;

fn small_synth(seed: u64) -> Dataset {
    let mut cfg = SynthConfig::desk_default("unit", seed);
    cfg.n_train = 40;
    cfg.n_test = 20;
    make_synthetic_classed_dataset(&cfg)
}

#[test]
fn store_round_trip_is_pixel_identical() {
    let tmp = TempDir::new().unwrap();
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let ds = small_synth(3);
    let rec = store
        .put_dataset(&ds, serde_json::json!({"seed": 3}), &[], ArtifactKind::Dataset)
        .unwrap();
    let loaded = store.get_dataset(ArtifactKind::Dataset, &rec.artifact_id).unwrap();
    assert_eq!(loaded.train.n(), ds.train.n());
    assert_eq!(loaded.test.n(), ds.test.n());
    for (a, b) in ds.train.samples.iter().zip(&loaded.train.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.pixels, b.pixels, "pixels changed for {}", a.id);
    }
}

#[test]
fn identical_content_gets_identical_id() {
    let tmp = TempDir::new().unwrap();
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let ds = small_synth(5);
    let r1 = store
        .put_dataset(&ds, serde_json::json!({}), &[], ArtifactKind::Dataset)
        .unwrap();
    let r2 = store
        .put_dataset(&ds, serde_json::json!({}), &[], ArtifactKind::Dataset)
        .unwrap();
    assert_eq!(r1.artifact_id, r2.artifact_id);
    assert_eq!(store.records().unwrap().len(), 1, "no duplicate records");

    let other = small_synth(6);
    let r3 = store
        .put_dataset(&other, serde_json::json!({}), &[], ArtifactKind::Dataset)
        .unwrap();
    assert_ne!(r1.artifact_id, r3.artifact_id);
}

#[test]
fn register_rejects_unknown_parent() {
    let tmp = TempDir::new().unwrap();
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let err = store
        .register(
            ArtifactKind::Model,
            "deadbeef",
            serde_json::json!({}),
            &["no-such-parent".into()],
        )
        .unwrap_err();
    assert!(matches!(err, crate::Error::UnknownArtifact(_)));
}

#[test]
fn lineage_depth_one() {
    let tmp = TempDir::new().unwrap();
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let ds = small_synth(7);
    let parent = store
        .put_dataset(&ds, serde_json::json!({}), &[], ArtifactKind::Dataset)
        .unwrap();
    store
        .register(
            ArtifactKind::PoisonedSet,
            "child0000",
            serde_json::json!({"gamma": 0.1}),
            &[parent.artifact_id.clone()],
        )
        .unwrap();
    let ancestors = store.lineage("child0000").unwrap();
    assert_eq!(ancestors.len(), 1);
    assert_eq!(ancestors[0].artifact_id, parent.artifact_id);
}

#[test]
fn ingest_class_tree_and_counts() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let ds = small_synth(11);
    // write out a class-per-subfolder tree using the synthetic data
    for s in &ds.train.samples {
        let dir = src.join("train").join(format!("class{}", s.label));
        std::fs::create_dir_all(&dir).unwrap();
        super::store::encode_png(&s.pixels, &dir.join(format!("{}.png", s.id))).unwrap();
    }
    for s in &ds.test.samples {
        let dir = src.join("test").join(format!("class{}", s.label));
        std::fs::create_dir_all(&dir).unwrap();
        super::store::encode_png(&s.pixels, &dir.join(format!("{}.png", s.id))).unwrap();
    }
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let cfg = IngestConfig::new("tree");
    let out = ingest_directory(&store, &src, &cfg).unwrap();
    assert_eq!(out.dataset.k, 10);
    assert_eq!(out.dataset.train.n(), 40);
    assert_eq!(out.dataset.test.n(), 20);
    assert!(out.failures.is_empty());

    // determinism: ingesting the same tree twice yields the same artifact id
    let again = ingest_directory(&store, &src, &cfg).unwrap();
    assert_eq!(out.record.artifact_id, again.record.artifact_id);
}

#[test]
fn ingest_aborts_when_corruption_exceeds_tolerance() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let mut cfg = SynthConfig::desk_default("unit", 13);
    cfg.n_train = 49;
    cfg.n_test = 0;
    let ds = make_synthetic_classed_dataset(&cfg);
    for s in ds.train.samples.iter().take(49) {
        let dir = src.join(format!("class{}", s.label % 2));
        std::fs::create_dir_all(&dir).unwrap();
        super::store::encode_png(&s.pixels, &dir.join(format!("{}.png", s.id))).unwrap();
    }
    // one truncated file out of 50 (2% > 1% tolerance)
    std::fs::write(src.join("class0").join("broken.png"), b"\x89PNG\r\n\x1a\nnope").unwrap();
    let store = ArtifactStore::open(tmp.path().join("store")).unwrap();
    let err = ingest_directory(&store, &src, &IngestConfig::new("bad")).unwrap_err();
    match err {
        crate::Error::IngestFailures { failed, total, examples } => {
            assert_eq!(failed, 1);
            assert_eq!(total, 50);
            assert!(examples.contains("broken.png"), "{examples}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn noise_set_is_deterministic_and_uniform() {
    let shape = ImageShape::new(3, 32, 32);
    let a = make_synthetic_noise_set(100, shape, 7);
    let b = make_synthetic_noise_set(100, shape, 7);
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.pixels, y.pixels);
    }
    let c = make_synthetic_noise_set(10, shape, 8);
    assert_ne!(a.samples[0].pixels, c.samples[0].pixels);

    // chi-square over 256 bins, ~1M pixels; critical value for alpha=0.01,
    // df=255 is 310.457
    let mut counts = [0u64; 256];
    let mut total = 0u64;
    let big = make_synthetic_noise_set(330, shape, 42);
    for s in &big.samples {
        for &v in s.pixels.iter() {
            counts[v as usize] += 1;
            total += 1;
        }
    }
    let expected = total as f64 / 256.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    assert!(total >= 1_000_000, "need at least 1e6 pixels, got {total}");
    assert!(chi2 < 310.457, "chi2 {chi2} exceeds alpha=0.01 critical value");
}

#[test]
fn classed_synth_is_deterministic() {
    let a = small_synth(21);
    let b = small_synth(21);
    for (x, y) in a.train.samples.iter().zip(&b.train.samples) {
        assert_eq!(x.pixels, y.pixels);
    }
}

#[test]
fn validate_rejects_bad_labels_and_duplicate_ids() {
    let mut ds = small_synth(1);
    ds.train.samples[0].label = 99;
    assert!(ds.train.validate().is_err());

    let mut ds = small_synth(1);
    let dup = ds.train.samples[0].id.clone();
    ds.train.samples[1].id = dup;
    assert!(ds.train.validate().is_err());
}
