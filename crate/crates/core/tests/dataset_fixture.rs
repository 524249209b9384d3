use std::path::PathBuf;

use sarsr::data::{
    label_histogram, load_dataset, make_pairs, split, Lineage, ShipClass, SplitSpec,
};
use sarsr::Error;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ships")
}

#[test]
fn fixture_loads_with_pinned_counts() {
    let ingested = load_dataset(&fixture(), 64).unwrap();
    // Cargo, Tanker, Fishing, Dredging, Passenger, Tug
    assert_eq!(label_histogram(&ingested.samples), [3, 3, 2, 1, 2, 2]);
    assert!(ingested
        .samples
        .iter()
        .all(|s| s.image.dims() == (64, 64) && s.lineage == Lineage::Hr));
    assert_eq!(ingested.warnings.len(), 1, "{:?}", ingested.warnings);
    assert!(ingested.warnings[0].contains("Submarine"));
    // class-major ordering
    let labels: Vec<usize> = ingested.samples.iter().map(|s| s.label).collect();
    assert!(labels.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn non_square_chips_are_cropped_and_resized() {
    let ingested = load_dataset(&fixture(), 32).unwrap();
    let tanker: Vec<_> = ingested
        .samples
        .iter()
        .filter(|s| s.class() == ShipClass::Tanker)
        .collect();
    assert_eq!(tanker.len(), 3);
    assert!(tanker.iter().all(|s| s.image.dims() == (32, 32)));
}

#[test]
fn singleton_class_cannot_be_stratified() {
    let samples = load_dataset(&fixture(), 64).unwrap().samples;
    match split(&samples, &SplitSpec::default()) {
        Err(Error::Split(msg)) => assert!(msg.contains("Dredging"), "{msg}"),
        other => panic!("expected split error, got {other:?}"),
    }
    let without: Vec<_> = samples
        .into_iter()
        .filter(|s| s.class() != ShipClass::Dredging)
        .collect();
    let pairs = make_pairs(&without).unwrap();
    assert_eq!(pairs.len(), 12);
    assert!(pairs.iter().all(|p| p.lr.dims() == (32, 32)));
}

#[test]
fn missing_class_folder_is_an_ingestion_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("Cargo")).unwrap();
    match load_dataset(tmp.path(), 64) {
        Err(Error::Ingestion(msg)) => assert!(msg.contains("Tug") && !msg.contains("Cargo,")),
        other => panic!("expected ingestion error, got {other:?}"),
    }
}
