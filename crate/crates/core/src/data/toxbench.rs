//! Conversion of an externally prepared ToxBench export into JSON Lines.
//!
//! The input is an index table plus one atom table per complex; parsing of
//! crystallographic structure files is left to upstream tooling. See
//! `docs/dataset_format.md` for the column mapping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::{Atom, ComplexRecord, DEFAULT_PROTEIN_ID};
use crate::error::{io_err, Error, Result};

/// Column names of the index table. Defaults follow the published release;
/// override any that differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexColumns {
    pub id: String,
    pub smiles: String,
    pub label: String,
    /// Optional column naming the atom-table file; defaults to `<id>.csv`.
    pub structure: Option<String>,
}

impl Default for IndexColumns {
    fn default() -> Self {
        IndexColumns {
            id: "ID".into(),
            smiles: "SMILES".into(),
            label: "dG".into(),
            structure: None,
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            field: name.to_string(),
            msg: "column not found in header".into(),
        })
}

fn parse_f64(s: &str, path: &Path, line: usize, field: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        msg: format!("{s:?}: {e}"),
    })
}

/// Reads an atom table with columns `element,x,y,z,is_ligand,residue`.
pub fn read_atom_table(path: &Path) -> Result<Vec<Atom>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        field: "<file>".into(),
        msg: e.to_string(),
    })?;
    let headers = rdr.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        field: "<header>".into(),
        msg: e.to_string(),
    })?;
    let cols: BTreeMap<&str, usize> = ["element", "x", "y", "z", "is_ligand", "residue"]
        .into_iter()
        .map(|c| column(headers, c, path).map(|i| (c, i)))
        .collect::<Result<_>>()?;
    let mut atoms = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            field: "<row>".into(),
            msg: e.to_string(),
        })?;
        let get = |c: &str| row.get(cols[c]).unwrap_or("");
        let flag = get("is_ligand").trim().to_ascii_lowercase();
        let is_ligand = match flag.as_str() {
            "1" | "true" | "t" | "yes" => true,
            "0" | "false" | "f" | "no" => false,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    field: "is_ligand".into(),
                    msg: format!("not a boolean: {other:?}"),
                })
            }
        };
        let residue = get("residue")
            .trim()
            .parse::<i64>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                field: "residue".into(),
                msg: e.to_string(),
            })?;
        atoms.push(Atom {
            element: get("element").trim().to_string(),
            x: parse_f64(get("x"), path, line, "x")?,
            y: parse_f64(get("y"), path, line, "y")?,
            z: parse_f64(get("z"), path, line, "z")?,
            is_ligand,
            residue: if is_ligand { -1 } else { residue },
        });
    }
    Ok(atoms)
}

/// Builds records from `index` (CSV) and atom tables found next to it or in
/// `structure_dir`.
pub fn convert_toxbench(
    index: &Path,
    structure_dir: Option<&Path>,
    columns: &IndexColumns,
) -> Result<Vec<ComplexRecord>> {
    let base: PathBuf = structure_dir
        .map(Path::to_path_buf)
        .or_else(|| index.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let mut rdr = csv::Reader::from_path(index).map_err(io_err_csv(index))?;
    let headers = rdr.headers().map_err(io_err_csv(index))?.clone();
    let id_c = column(&headers, &columns.id, index)?;
    let smiles_c = column(&headers, &columns.smiles, index)?;
    let label_c = column(&headers, &columns.label, index)?;
    let struct_c = match &columns.structure {
        Some(name) => Some(column(&headers, name, index)?),
        None => None,
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(io_err_csv(index))?;
        let id = row.get(id_c).unwrap_or("").trim().to_string();
        let file = match struct_c {
            Some(c) => row.get(c).unwrap_or("").trim().to_string(),
            None => format!("{id}.csv"),
        };
        let record = ComplexRecord {
            complex_id: id,
            smiles: row.get(smiles_c).unwrap_or("").trim().to_string(),
            protein_id: DEFAULT_PROTEIN_ID.to_string(),
            label: parse_f64(row.get(label_c).unwrap_or(""), index, line, &columns.label)?,
            atoms: read_atom_table(&base.join(file))?,
        };
        record.validate(false)?;
        out.push(record);
    }
    Ok(out)
}

fn io_err_csv(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(format!("reading {}", path.display()))(source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            field: "<csv>".into(),
            msg: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn converts_index_and_atom_tables() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("index.csv"),
            "ID,SMILES,dG,extra\nc1,CCO,-8.5,x\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("c1.csv"),
            "element,x,y,z,is_ligand,residue\nC,0,0,0,1,-1\nO,1.2,0,0,true,-1\nN,4,0,0,0,12\n",
        )
        .unwrap();
        let recs = convert_toxbench(
            &dir.path().join("index.csv"),
            None,
            &IndexColumns::default(),
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, -8.5);
        assert_eq!(recs[0].n_ligand(), 2);
        assert_eq!(recs[0].atoms[2].residue, 12);

        let cols = IndexColumns {
            label: "affinity".into(),
            ..IndexColumns::default()
        };
        let err = convert_toxbench(&dir.path().join("index.csv"), None, &cols).unwrap_err();
        assert!(err.to_string().contains("affinity"));
    }
}
