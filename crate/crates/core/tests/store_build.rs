use std::collections::BTreeSet;
use std::path::Path;

use parseid_core::eval::NamingRule;
use parseid_core::store::{build_from_dataset, FeatureStore};
use parseid_core::synthetic::{random_record, Dataset, DatasetSpec};
use parseid_core::EngineConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(dir: &Path, identities: usize, views: usize) {
    Dataset::generate(&DatasetSpec {
        identities,
        views,
        ..Default::default()
    })
    .write(dir)
    .unwrap();
}

fn build(data: &Path, store_dir: &Path, parallelism: usize) -> (FeatureStore, parseid_core::store::BuildSummary) {
    let cfg = EngineConfig::default();
    let mut store = FeatureStore::open_or_create(store_dir, &cfg.version()).unwrap();
    let summary = build_from_dataset(
        &data.join("images"),
        &data.join("masks"),
        &mut store,
        &cfg,
        parallelism,
        Some(&NamingRule::default()),
    )
    .unwrap();
    (store, summary)
}

#[test]
fn ten_thousand_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = FeatureStore::open_or_create(dir.path(), "v").unwrap();
    let records: Vec<_> = (0..10_000).map(|i| random_record(&mut rng, format!("r{i:05}"), "v")).collect();
    assert_eq!(store.put_batch(&records).unwrap(), 10_000);

    let reopened = FeatureStore::open(dir.path()).unwrap();
    let mut back: Vec<_> = reopened.get_all().collect::<Result<_, _>>().unwrap();
    assert_eq!(back.len(), 10_000);
    back.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    assert!(back == records);
}

#[test]
fn empty_directory_gives_empty_store() {
    let data = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(data.path().join("images")).unwrap();
    std::fs::create_dir_all(data.path().join("masks")).unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let (store, summary) = build(data.path(), store_dir.path(), 2);
    assert_eq!((summary.ok, summary.failed), (0, 0));
    assert!(store.is_empty());
}

#[test]
fn single_pair() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), 1, 1);
    let store_dir = tempfile::tempdir().unwrap();
    let (store, summary) = build(data.path(), store_dir.path(), 1);
    assert_eq!((summary.ok, summary.failed), (1, 0));
    assert_eq!(store.len(), 1);
    let rec = store.get("0001_c1s1_000001_00").unwrap().unwrap();
    assert_eq!((rec.person_id, rec.camera_id), (Some(1), Some(1)));
    assert!(rec.source.is_some());
}

#[test]
fn one_corrupt_mask_among_hundred() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), 25, 4);
    std::fs::write(data.path().join("masks/0013_c3s1_000201_00.png"), b"not a png").unwrap();
    let store_dir = tempfile::tempdir().unwrap();
    let (store, summary) = build(data.path(), store_dir.path(), 4);
    assert_eq!((summary.ok, summary.failed), (99, 1));
    assert_eq!(store.len(), 99);
    assert!(summary.failures[0].image.contains("0013_c3s1_000201_00"));
    assert!(!store.contains("0013_c3s1_000201_00"));
}

#[test]
fn missing_mask_directory_is_an_error() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), 1, 1);
    let cfg = EngineConfig::default();
    let store_dir = tempfile::tempdir().unwrap();
    let mut store = FeatureStore::open_or_create(store_dir.path(), &cfg.version()).unwrap();
    let res = build_from_dataset(
        &data.path().join("images"),
        &data.path().join("nope"),
        &mut store,
        &cfg,
        1,
        None,
    );
    assert!(res.is_err());
}

fn store_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![("index.json".to_string(), std::fs::read(dir.join("index.json")).unwrap())];
    let mut names: Vec<_> = std::fs::read_dir(dir.join("records"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for n in names {
        out.push((n.clone(), std::fs::read(dir.join("records").join(&n)).unwrap()));
    }
    out
}

#[test]
fn worker_count_does_not_change_store() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), 25, 4);
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    build(data.path(), one.path(), 1);
    build(data.path(), eight.path(), 8);
    let (a, b) = (store_files(one.path()), store_files(eight.path()));
    assert_eq!(a.len(), 101);
    assert!(a == b, "stores differ");
}

#[test]
fn rerun_skips_unchanged_pairs() {
    let data = tempfile::tempdir().unwrap();
    dataset(data.path(), 3, 2);
    let store_dir = tempfile::tempdir().unwrap();
    let (_, first) = build(data.path(), store_dir.path(), 2);
    assert_eq!(first.ok, 6);
    let record = store_dir.path().join("records/0002_c1s1_000001_00.json");
    let mtime = std::fs::metadata(&record).unwrap().modified().unwrap();

    let (_, second) = build(data.path(), store_dir.path(), 2);
    assert_eq!((second.ok, second.unchanged, second.failed), (0, 6, 0));
    assert_eq!(std::fs::metadata(&record).unwrap().modified().unwrap(), mtime);

    // touching one image's bytes re-extracts only that image
    let img = data.path().join("images/0002_c1s1_000001_00.png");
    let mut rgb = image::open(&img).unwrap().to_rgb8();
    rgb.put_pixel(0, 0, image::Rgb([1, 2, 3]));
    rgb.save(&img).unwrap();
    let (store, third) = build(data.path(), store_dir.path(), 2);
    assert_eq!((third.ok, third.unchanged), (1, 5));
    let ids: BTreeSet<&str> = store.ids().collect();
    assert_eq!(ids.len(), 6);
}
