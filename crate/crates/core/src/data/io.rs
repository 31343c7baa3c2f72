//! JSON Lines dataset files: one [`ComplexRecord`] object per line, UTF-8.
//!
//! ```text
//! {"complex_id":"c1","smiles":"CCO","protein_id":"ERa","label":-7.25,
//!  "atoms":[{"element":"C","x":1.0,"y":2.0,"z":3.0,"is_ligand":true,"residue":-1}, ...]}
//! ```
//!
//! `protein_id` may be omitted and defaults to `"ERa"`. Blank lines are
//! ignored. Numbers are written with shortest round-trip formatting, so a
//! write/read cycle reproduces every coordinate and label exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::record::ComplexRecord;
use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept records without protein atoms.
    pub allow_ligand_only: bool,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ComplexRecord>> {
    load_dataset_with(path, LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Vec<ComplexRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut de = serde_json::Deserializer::from_str(&line);
        let record: ComplexRecord = match serde_path_to_error::deserialize(&mut de) {
            Ok(r) => r,
            Err(e) => {
                let field = e.path().to_string();
                let mut msg = e.inner().to_string();
                if let Some(id) = sniff_id(&line) {
                    msg = format!("record {id}: {msg}");
                }
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    field,
                    msg,
                });
            }
        };
        record
            .validate(opts.allow_ligand_only)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                field: "atoms".into(),
                msg: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Best-effort recovery of the id from a line that failed to parse.
fn sniff_id(line: &str) -> Option<&str> {
    let rest = &line[line.find("\"complex_id\"")? + 12..];
    let rest = &rest[rest.find('"')? + 1..];
    Some(&rest[..rest.find('"')?])
}

/// Writes the records to `path` through a temporary file and a rename.
pub fn save_dataset(path: impl AsRef<Path>, records: &[ComplexRecord]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = fs::File::create(&tmp).map_err(io_err(format!("creating {}", tmp.display())))?;
        let mut w = BufWriter::new(file);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::InvalidRecord {
                id: r.complex_id.clone(),
                msg: e.to_string(),
            })?;
            w.write_all(b"\n").map_err(io_err("writing dataset"))?;
        }
        w.flush().map_err(io_err("writing dataset"))?;
    }
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}
