//! On-disk vector index: JSON Lines, one header then one record per chunk.
//!
//! ```text
//! {"format":"crossflow-index","version":1,"dim":256,"count":2}
//! {"chunk_id":"a.txt#0","text":"...","vector":[0.125,-0.0625,...]}
//! ```
//!
//! `count` lets a load detect a file cut at a line boundary. Floats use the
//! shortest representation that round-trips, so vectors reload bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crossflow_core::{Embedding, VectorStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "crossflow-index";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    chunk_id: String,
    text: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    chunk_id: &'a str,
    text: &'a str,
    vector: &'a [f64],
}

/// Write `store` to `path`, replacing any existing file atomically.
pub fn save_index(store: &VectorStore, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let header = Header { format: FORMAT.into(), version: VERSION, dim: store.dim(), count: store.len() };
    let write = |w: &mut BufWriter<fs::File>, line: String| -> Result<()> {
        w.write_all(line.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| Error::io(&tmp, e))
    };
    write(&mut w, serde_json::to_string(&header).expect("header serializes"))?;
    for (chunk_id, text, vector) in store.iter() {
        let rec = RecordRef { chunk_id, text, vector: vector.values() };
        write(&mut w, serde_json::to_string(&rec).expect("record serializes"))?;
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read an index written by [`save_index`]. Any defect fails the whole load.
pub fn load_index(path: &Path) -> Result<VectorStore> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing index header")),
    };
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::parse(path, 1, format!("unsupported index {} v{}", header.format, header.version)));
    }
    let mut store = VectorStore::new(header.dim);
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if store.contains(&rec.chunk_id) {
            return Err(Error::parse(path, lineno, format!("duplicate chunk id {}", rec.chunk_id)));
        }
        if rec.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite vector component"));
        }
        store
            .insert_entry(rec.chunk_id, rec.text, Embedding::new(rec.vector))
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        seen += 1;
    }
    if seen != header.count {
        return Err(Error::parse(
            path,
            seen + 2,
            format!("truncated index: header promises {} records, found {seen}", header.count),
        ));
    }
    Ok(store)
}
