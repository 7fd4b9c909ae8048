mod common;

use std::net::SocketAddr;

use privrisk_core::dataset::save_features;
use privrisk_service::{serve, ModelSnapshot, ServeError, SnapshotError, SnapshotPaths};

fn write_fixture(dir: &std::path::Path) -> SnapshotPaths {
    let s = common::snapshot(11);
    let paths = SnapshotPaths {
        taxonomy: None,
        attribute_checkpoint: dir.join("attributes.ckpt"),
        risk_checkpoint: dir.join("risk.ckpt"),
        profiles: dir.join("profiles.json"),
        features: dir.join("features.bin"),
        annotations: None,
    };
    s.predictor.to_checkpoint().save(&paths.attribute_checkpoint).unwrap();
    s.regressor.to_checkpoint(None).save(&paths.risk_checkpoint).unwrap();
    s.profiles.save(&paths.profiles).unwrap();
    save_features(&paths.features, &s.features).unwrap();
    paths
}

#[test]
fn snapshot_loads_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_fixture(dir.path());
    let loaded = ModelSnapshot::load(&paths).unwrap();
    let original = common::snapshot(11);
    assert_eq!(loaded.predictor, original.predictor);
    assert_eq!(loaded.regressor, original.regressor);
    assert_eq!(loaded.features, original.features);
}

#[tokio::test]
async fn missing_checkpoint_fails_before_binding() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = write_fixture(dir.path());
    paths.risk_checkpoint = dir.path().join("absent.ckpt");
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let err = serve(&paths, addr).await.unwrap_err();
    assert!(matches!(err, ServeError::Snapshot(SnapshotError::Checkpoint { .. })), "{err}");
}

#[test]
fn inconsistent_artifacts_are_rejected() {
    let s = common::snapshot(12);
    let mut regressor = s.regressor.clone();
    regressor.profile_ids = vec![0, 1, 5];
    let err = ModelSnapshot::new(
        s.taxonomy.clone(),
        s.predictor.clone(),
        regressor,
        s.profiles.clone(),
        s.features.clone(),
        &[],
    )
    .unwrap_err();
    assert!(matches!(err, SnapshotError::Inconsistent(_)));
}
