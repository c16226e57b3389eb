mod support;

use earmesh::model::{components_for_coverage, coverage_of};
use support::{cumulative_cut, reference_spectrum};

#[test]
fn whitening_round_trip_and_coverage_cut() {
    let c = support::check_pca();
    println!("{}", c.line());
    assert!(c.passed, "{}", c.line());
}

#[test]
fn cut_is_tight_on_the_reference_spectrum() {
    let s = reference_spectrum();
    assert_eq!(s.len(), 499);
    assert!((s[0] - 8e3).abs() < 1e-9 && (s[498] / 5e-7 - 1.0).abs() < 1e-9);
    let k = components_for_coverage(&s, 0.981).unwrap();
    assert_eq!(k, cumulative_cut(&s, 0.981));
    assert!(coverage_of(&s, k) >= 0.981);
    assert!(coverage_of(&s, k - 1) < 0.981);
}
