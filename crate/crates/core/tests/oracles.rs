mod common;

use common::{empirical_survival, kaplan_meier, ks_two_sample};

#[test]
fn km_without_censoring_is_empirical_survival() {
    let t = [3.0, 1.0, 2.0, 2.0, 5.0];
    let grid = [0.5, 1.0, 2.5, 4.0, 6.0];
    assert_eq!(kaplan_meier(&t, &[true; 5], &grid), empirical_survival(&t, &grid));
}

#[test]
fn km_handles_censoring() {
    // 4 at risk; death at 1 -> 3/4; censor at 2; death at 3 with 2 at risk -> 3/8
    let s = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false], &[1.5, 3.5]);
    assert!((s[0] - 0.75).abs() < 1e-15 && (s[1] - 0.375).abs() < 1e-15);
}

#[test]
fn ks_known_values() {
    assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
    assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
    assert!((ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5]) - 0.5).abs() < 1e-15);
}
