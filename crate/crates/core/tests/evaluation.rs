use earmesh::evaluation::{CedPoint, EvalReport};

const REFERENCE: &str = include_str!("fixtures/reference_stats.json");

#[test]
fn published_statistics_round_trip() {
    let r = EvalReport::from_json(REFERENCE).unwrap();
    assert_eq!(r.mean, 0.0398);
    assert_eq!(r.std, 0.009);
    assert_eq!(r.median, 0.0391);
    assert_eq!(r.fraction_below_0_1, 1.0);
    assert_eq!(r.fraction_below_0_06, 0.962);
    assert_eq!(r.ced[0], CedPoint { threshold: 0.06, fraction: 0.962 });
    let again = EvalReport::from_json(&r.to_json()).unwrap();
    assert_eq!(again, r);
    assert_eq!(r.to_json(), REFERENCE);
}

#[test]
fn tampered_reference_is_rejected() {
    let bad = REFERENCE.replace("\"fraction\": 0.962", "\"fraction\": 1.5");
    assert!(EvalReport::from_json(&bad).is_err());
    let unordered = REFERENCE.replace("\"threshold\": 0.1", "\"threshold\": 0.05");
    assert!(EvalReport::from_json(&unordered).is_err());
}
