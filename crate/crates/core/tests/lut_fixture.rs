use std::path::Path;

use gmapd::lut::DutyCycleTable;
use gmapd::Error;

fn fixture() -> DutyCycleTable {
    DutyCycleTable::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/lut_2x2.json")).unwrap()
}

#[test]
fn fixture_loads_to_known_grid() {
    let t = fixture();
    assert_eq!(t.shape(), (2, 2));
    assert_eq!(t.v_e_axis, vec![14.0, 16.0]);
    assert_eq!(t.observed_rate_axis, vec![1e4, 1e5]);
    assert_eq!(t.eta_grid[1], vec![Some(0.94), Some(0.85)]);
}

#[test]
fn fixture_nodes_and_interpolation() {
    let t = fixture();
    assert_eq!(t.lookup_eta(14.0, 1e4).unwrap(), 0.92);
    assert_eq!(t.lookup_eta(16.0, 1e5).unwrap(), 0.85);
    // rows at 5.5e4: 0.86 and 0.895, averaged
    assert!((t.lookup_eta(15.0, 5.5e4).unwrap() - 0.8775).abs() < 1e-12);
    // halfway to the first node from the zero-rate column
    assert!((t.lookup_eta(14.0, 5e3).unwrap() - 0.925).abs() < 1e-12);
    assert!(matches!(t.lookup_eta(13.0, 1e4), Err(Error::OutOfRange { .. })));
    assert!(matches!(t.lookup_eta(15.0, 2e5), Err(Error::OutOfRange { .. })));
}

#[test]
fn fixture_round_trip() {
    let t = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.json");
    t.save(&path).unwrap();
    assert_eq!(DutyCycleTable::load(&path).unwrap(), t);
}
