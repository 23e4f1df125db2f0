//! Prints one PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p crib-cli --test acceptance -- --nocapture`.

use crib_cli::acceptance;

#[test]
fn acceptance_suite() {
    let checks = acceptance::run_all(1.0);
    assert_eq!(checks.len(), 10);
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<u8> = checks.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
