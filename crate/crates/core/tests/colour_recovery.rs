mod support;

#[test]
fn five_dimensional_colour_family_is_recovered() {
    let c = support::check_colour_recovery();
    println!("{}", c.line());
    assert!(c.passed, "{}", c.line());
}
