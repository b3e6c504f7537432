//! Acceptance suite: one labelled pass/fail line per criterion.
//! Populated incrementally as the library layers land.

#[test]
fn acceptance_placeholder() {}
