//! Loading domain corpora from disk.

use std::path::Path;

use crossflow_core::Document;
use walkdir::WalkDir;

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 2] = ["txt", "md"];

/// One [`Document`] per `.txt`/`.md` file under `dir`, recursively.
///
/// `doc_id` is the path relative to `dir` with `/` separators; documents are
/// ordered by it.
pub fn load_corpus(dir: &Path, domain: &str) -> Result<Vec<Document>> {
    if !dir.is_dir() {
        return Err(Error::config(format!("corpus directory for domain {domain:?} not found: {}", dir.display())));
    }
    let mut docs = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::Ingest { path, source: e.into() }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !EXTENSIONS.contains(&ext) {
            continue;
        }
        let rel = path.strip_prefix(dir).expect("walkdir yields children of its root");
        let doc_id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Ingest { path: path.to_path_buf(), source })?;
        docs.push(Document::new(doc_id, domain, text));
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}
