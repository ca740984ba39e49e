use atr_core::chansim::sample_position;
use atr_core::geometry::Arena;
use atr_core::rng::sample_seed;

/// 99th percentile of chi-square with 15 degrees of freedom.
const CHI2_15_P99: f64 = 30.578;

#[test]
fn positions_are_uniform_over_the_arena() {
    let arena = Arena::square(8.0);
    let n = 8000;
    let mut counts = [0usize; 16];
    for i in 0..n {
        let p = sample_position(&arena, sample_seed(42, i));
        assert!(arena.contains(&p));
        let cx = ((p.x / 2.0) as usize).min(3);
        let cy = ((p.y / 2.0) as usize).min(3);
        counts[cy * 4 + cx] += 1;
    }
    let expected = n as f64 / 16.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_15_P99, "chi2 = {chi2}, counts {counts:?}");
}
