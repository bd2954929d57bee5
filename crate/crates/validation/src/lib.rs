//! Acceptance checks for the workspace. They live in `tests/acceptance.rs`
//! and run with `cargo test -p nonneg-dp-validation`.
