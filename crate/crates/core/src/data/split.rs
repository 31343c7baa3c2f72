//! Ligand-disjoint splits. The split unit is the SMILES string, compared
//! verbatim: two spellings of the same molecule count as different ligands,
//! so inputs should be canonicalized upstream if that matters.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::ComplexRecord;
use crate::error::{Error, Result};

pub const PARTITION_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
    /// SMILES → partition index.
    pub assignment: BTreeMap<String, usize>,
}

impl SplitSpec {
    pub fn partition_of(&self, smiles: &str) -> Option<usize> {
        self.assignment.get(smiles).copied()
    }

    /// Records grouped by partition, keeping their input order.
    pub fn apply(&self, records: &[ComplexRecord]) -> Result<Vec<Vec<ComplexRecord>>> {
        let mut parts = vec![Vec::new(); self.fractions.len()];
        for r in records {
            let p = self.partition_of(&r.smiles).ok_or_else(|| {
                Error::Split(format!(
                    "SMILES {:?} of {} is not assigned",
                    r.smiles, r.complex_id
                ))
            })?;
            parts[p].push(r.clone());
        }
        Ok(parts)
    }

    /// Unique-SMILES count per partition.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.fractions.len()];
        for &p in self.assignment.values() {
            c[p] += 1;
        }
        c
    }
}

/// Largest-remainder apportionment of `total` items; ties go to the lower
/// index.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Split(format!(
            "fractions must be positive, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Shuffles the unique SMILES with `seed` and deals them out in partition
/// order according to [`apportion`].
pub fn split_by_smiles(
    records: &[ComplexRecord],
    fractions: &[f64],
    seed: u64,
) -> Result<SplitSpec> {
    check_fractions(fractions)?;
    let unique: BTreeSet<&str> = records.iter().map(|r| r.smiles.as_str()).collect();
    if unique.len() < fractions.len() {
        return Err(Error::Split(format!(
            "{} unique SMILES cannot fill {} partitions",
            unique.len(),
            fractions.len()
        )));
    }
    let mut smiles: Vec<&str> = unique.into_iter().collect();
    smiles.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(smiles.len(), fractions);
    let mut assignment = BTreeMap::new();
    let mut it = smiles.into_iter();
    for (p, &c) in counts.iter().enumerate() {
        for s in it.by_ref().take(c) {
            assignment.insert(s.to_string(), p);
        }
    }
    Ok(SplitSpec {
        fractions: fractions.to_vec(),
        seed,
        assignment,
    })
}

/// SMILES that appear in more than one of the given datasets.
pub fn smiles_overlap(parts: &[&[ComplexRecord]]) -> Vec<String> {
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    let mut shared = BTreeSet::new();
    for (p, recs) in parts.iter().enumerate() {
        for r in recs.iter() {
            match owner.get(r.smiles.as_str()) {
                Some(&q) if q != p => {
                    shared.insert(r.smiles.clone());
                }
                Some(_) => {}
                None => {
                    owner.insert(&r.smiles, p);
                }
            }
        }
    }
    shared.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::Atom;
    use proptest::prelude::*;

    fn records(n_smiles: usize, poses: usize) -> Vec<ComplexRecord> {
        let mut out = Vec::new();
        for s in 0..n_smiles {
            for p in 0..poses {
                out.push(ComplexRecord {
                    complex_id: format!("c{s}-{p}"),
                    smiles: format!("S{s}"),
                    protein_id: "ERa".into(),
                    label: -5.0,
                    atoms: vec![Atom {
                        element: "C".into(),
                        x: 0.0,
                        y: 0.0,
                        z: 0.0,
                        is_ligand: true,
                        residue: -1,
                    }],
                });
            }
        }
        out
    }

    #[test]
    fn exact_division_gives_exact_counts() {
        let spec = split_by_smiles(&records(100, 2), &[0.7, 0.15, 0.15], 3).unwrap();
        assert_eq!(spec.counts(), vec![70, 15, 15]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let rs = records(37, 3);
        let a = split_by_smiles(&rs, &[0.7, 0.15, 0.15], 11).unwrap();
        let b = split_by_smiles(&rs, &[0.7, 0.15, 0.15], 11).unwrap();
        assert_eq!(a, b);
        let c = split_by_smiles(&rs, &[0.7, 0.15, 0.15], 12).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn rejects_bad_fractions_and_tiny_sets() {
        assert!(split_by_smiles(&records(10, 1), &[0.7, 0.2, 0.2], 0).is_err());
        assert!(split_by_smiles(&records(10, 1), &[0.7, -0.15, 0.45], 0).is_err());
        assert!(split_by_smiles(&records(2, 5), &[0.7, 0.15, 0.15], 0).is_err());
    }

    #[test]
    fn apportion_known_cases() {
        assert_eq!(apportion(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
        assert_eq!(apportion(3, &[0.5, 0.25, 0.25]), vec![1, 1, 1]);
        assert_eq!(apportion(5, &[0.5, 0.3, 0.2]), vec![3, 1, 1]);
        assert_eq!(apportion(0, &[0.5, 0.5]), vec![0, 0]);
    }

    proptest! {
        #[test]
        fn partitions_are_ligand_disjoint_and_near_target(
            n_smiles in 3usize..200,
            poses in 1usize..4,
            seed in any::<u64>(),
            a in 0.1f64..0.8,
            b in 0.05f64..0.5,
        ) {
            let c = 1.0 - a - b;
            prop_assume!(c > 0.01);
            let fr = [a, b, c];
            let sum: f64 = fr.iter().sum();
            let fr: Vec<f64> = fr.iter().map(|f| f / sum).collect();
            prop_assume!(check_fractions(&fr).is_ok());
            let rs = records(n_smiles, poses);
            let spec = split_by_smiles(&rs, &fr, seed).unwrap();
            let parts = spec.apply(&rs).unwrap();
            let slices: Vec<&[ComplexRecord]> = parts.iter().map(|p| p.as_slice()).collect();
            prop_assert!(smiles_overlap(&slices).is_empty());
            prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), rs.len());
            for (count, f) in spec.counts().iter().zip(&fr) {
                prop_assert!((*count as f64 - f * n_smiles as f64).abs() <= 1.0);
            }
        }
    }
}
