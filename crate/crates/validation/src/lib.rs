//! End-to-end acceptance checks for the `cemreg` tool; see `tests/acceptance.rs`.
