use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PROTEIN_ID: &str = "ERa";

fn default_protein_id() -> String {
    DEFAULT_PROTEIN_ID.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub element: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub is_ligand: bool,
    /// Residue index for protein atoms; `-1` for ligand atoms.
    pub residue: i64,
}

impl Atom {
    pub fn pos(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn set_pos(&mut self, p: [f64; 3]) {
        [self.x, self.y, self.z] = p;
    }
}

/// One protein-ligand complex with its affinity label in kcal/mol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRecord {
    pub complex_id: String,
    pub smiles: String,
    #[serde(default = "default_protein_id")]
    pub protein_id: String,
    pub label: f64,
    pub atoms: Vec<Atom>,
}

impl ComplexRecord {
    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.atoms.iter().map(Atom::pos).collect()
    }

    pub fn ligand_mask(&self) -> Vec<bool> {
        self.atoms.iter().map(|a| a.is_ligand).collect()
    }

    pub fn ligand_indices(&self) -> Vec<usize> {
        (0..self.atoms.len())
            .filter(|&i| self.atoms[i].is_ligand)
            .collect()
    }

    pub fn protein_indices(&self) -> Vec<usize> {
        (0..self.atoms.len())
            .filter(|&i| !self.atoms[i].is_ligand)
            .collect()
    }

    pub fn n_ligand(&self) -> usize {
        self.atoms.iter().filter(|a| a.is_ligand).count()
    }

    pub fn n_protein(&self) -> usize {
        self.atoms.len() - self.n_ligand()
    }

    /// Checks the record invariants. Ligand-only fixtures may skip the
    /// protein requirement with `allow_ligand_only`.
    pub fn validate(&self, allow_ligand_only: bool) -> Result<()> {
        let bad = |msg: String| Error::InvalidRecord {
            id: self.complex_id.clone(),
            msg,
        };
        if self.complex_id.is_empty() {
            return Err(bad("empty complex_id".into()));
        }
        if !self.label.is_finite() {
            return Err(bad(format!("non-finite label {}", self.label)));
        }
        if self.n_ligand() == 0 {
            return Err(bad("no ligand atoms".into()));
        }
        if self.n_protein() == 0 && !allow_ligand_only {
            return Err(bad("no protein atoms".into()));
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if !(a.x.is_finite() && a.y.is_finite() && a.z.is_finite()) {
                return Err(bad(format!("atom {i} has a non-finite coordinate")));
            }
            if !a.is_ligand && a.residue < 0 {
                return Err(bad(format!("protein atom {i} has residue {}", a.residue)));
            }
        }
        Ok(())
    }

    /// Applies `p ↦ R·p + t` to every atom.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: [f64; 3]) -> ComplexRecord {
        let mut out = self.clone();
        for a in &mut out.atoms {
            let p = a.pos();
            let mut q = translation;
            for (r, qr) in q.iter_mut().enumerate() {
                *qr += rotation[r][0] * p[0] + rotation[r][1] * p[1] + rotation[r][2] * p[2];
            }
            a.set_pos(q);
        }
        out
    }
}

/// Labels above `threshold` are set to it; others are left alone.
pub fn cap_labels(records: &[ComplexRecord], threshold: f64) -> Vec<ComplexRecord> {
    records
        .iter()
        .map(|r| ComplexRecord {
            label: if r.label > threshold {
                threshold
            } else {
                r.label
            },
            ..r.clone()
        })
        .collect()
}

/// Observed (protein, ligand) pairs over all possible pairs.
pub fn compute_density(records: &[ComplexRecord]) -> Result<f64> {
    use std::collections::BTreeSet;
    if records.is_empty() {
        return Err(Error::InvalidConfig("density of an empty dataset".into()));
    }
    let proteins: BTreeSet<&str> = records.iter().map(|r| r.protein_id.as_str()).collect();
    let ligands: BTreeSet<&str> = records.iter().map(|r| r.smiles.as_str()).collect();
    let pairs: BTreeSet<(&str, &str)> = records
        .iter()
        .map(|r| (r.protein_id.as_str(), r.smiles.as_str()))
        .collect();
    Ok(pairs.len() as f64 / (proteins.len() as f64 * ligands.len() as f64))
}
