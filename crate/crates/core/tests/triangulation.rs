use atr_core::geometry::{triangulate, ApPose, Arena, BearingSet, GeometryError, Point2};
use atr_core::selftest::triangulation_oracle;
use proptest::prelude::*;

#[test]
fn closed_form_matches_grid_search_and_recovers_exact_points() {
    for check in triangulation_oracle(100, 77) {
        assert!(check.passed, "{check}");
    }
}

#[test]
fn parallel_bearings_are_degenerate() {
    let aps = [
        ApPose::new(Point2::new(0.0, 0.0), 0.0, 0.03, 4).unwrap(),
        ApPose::new(Point2::new(0.0, 1.0), 0.0, 0.03, 4).unwrap(),
    ];
    let b = BearingSet::new(vec![0.0, 0.0]);
    assert!(matches!(triangulate(&b, &aps), Err(GeometryError::DegenerateGeometry { .. })));
}

proptest! {
    #[test]
    fn relabeling_aps_does_not_move_the_estimate(
        seed in 0u64..1000,
        x in 0.5f64..7.5,
        y in 0.5f64..7.5,
        noise in proptest::collection::vec(-0.05f64..0.05, 4),
    ) {
        let aps = atr_core::scenario::Scenario::clean(8.0).aps;
        let truth = Point2::new(x, y);
        let exact = BearingSet::from_point(&truth, &aps);
        let aoas: Vec<f64> = exact.aoas.iter().zip(&noise).map(|(a, n)| a + n).collect();
        let p = triangulate(&BearingSet::new(aoas.clone()), &aps).unwrap();
        let k = (seed % 4) as usize;
        let perm: Vec<usize> = (0..4).map(|i| (i + k) % 4).collect();
        let aps_p: Vec<_> = perm.iter().map(|&i| aps[i]).collect();
        let aoas_p: Vec<f64> = perm.iter().map(|&i| aoas[i]).collect();
        let q = triangulate(&BearingSet::new(aoas_p), &aps_p).unwrap();
        prop_assert!(p.dist(&q) < 1e-9);
        prop_assert!(Arena::square(8.0).contains(&truth));
    }
}
