#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo")
}

/// Copy the demo fixture (without any previous outputs) into a fresh temp dir.
pub fn demo_copy() -> tempfile::TempDir {
    let src = demo_dir();
    let dst = tempfile::tempdir().unwrap();
    for entry in walkdir::WalkDir::new(&src).into_iter().filter_entry(|e| e.file_name() != "out") {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(&src).unwrap();
        let to = dst.path().join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&to).unwrap();
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
    dst
}
