//! Helpers for unit tests: fixture loading relative to the workspace root.

use crate::sml::{parse, ClassDef};
use std::path::PathBuf;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> String {
    let path = fixture_path(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Parses a single-class fixture file.
pub fn fixture_class(name: &str) -> ClassDef {
    let mut classes = parse(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    assert_eq!(classes.len(), 1, "{name} should hold one class");
    classes.pop().unwrap()
}
