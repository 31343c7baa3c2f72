//! Principal-axis frames, pocket extraction and contact enumeration.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::data::ComplexRecord;
use crate::error::{Error, Result};

/// Smallest eigenvalue gap accepted when building frames (Å²).
pub const MIN_EIGEN_GAP: f64 = 1e-9;

/// Sign patterns of the first two principal axes, in output order.
pub const SIGN_PATTERNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

/// A rigid transform. Columns of `rotation` are the frame axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Row-major 3×3 rotation, for feeding into tensors.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

/// The four orientation-preserving principal-axis frames of a point cloud,
/// centred at its centroid.
pub fn compute_frames(points: &[[f64; 3]]) -> Result<[Frame; 4]> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points for a frame, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
        / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let low_gap = lambda[1] - lambda[2];
    if low_gap < MIN_EIGEN_GAP {
        return Err(Error::DegenerateGeometry(format!(
            "two smallest covariance eigenvalues differ by {low_gap:.3e} (< {MIN_EIGEN_GAP:e})"
        )));
    }
    let high_gap = lambda[0] - lambda[1];
    if high_gap < MIN_EIGEN_GAP {
        return Err(Error::DegenerateGeometry(format!(
            "two largest covariance eigenvalues differ by {high_gap:.3e} (< {MIN_EIGEN_GAP:e})"
        )));
    }
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).normalize();

    Ok(SIGN_PATTERNS.map(|(s1, s2)| {
        let a = e1 * s1;
        let b = e2 * s2;
        let c = a.cross(&b);
        Frame {
            rotation: Matrix3::from_columns(&[a, b, c]),
            translation: centroid,
        }
    }))
}

/// `Rᵀ(x − t)` for every point.
pub fn apply_frame(frame: &Frame, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let rt = frame.rotation.transpose();
    points
        .iter()
        .map(|p| (rt * (Vector3::from(*p) - frame.translation)).into())
        .collect()
}

/// Inverse of [`apply_frame`]: `R·c + t`.
pub fn invert_frame(frame: &Frame, canonical: &[[f64; 3]]) -> Vec<[f64; 3]> {
    canonical
        .iter()
        .map(|c| (frame.rotation * Vector3::from(*c) + frame.translation).into())
        .collect()
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Atom pairs closer than a cutoff, ordered lexicographically by index pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactList {
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

impl ContactList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn left(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn right(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Pairs `(i, j)` with `i` from `left`, `j` from `right` and distance
/// strictly below `cutoff`. Both index lists must be ascending.
pub fn contacts_between(
    points: &[[f64; 3]],
    left: &[usize],
    right: &[usize],
    cutoff: f64,
) -> ContactList {
    let mut out = ContactList::default();
    for &i in left {
        for &j in right {
            let d = distance(points[i], points[j]);
            if d < cutoff {
                out.pairs.push((i, j));
                out.distances.push(d);
            }
        }
    }
    out
}

/// Pairs `(i, j)`, `i < j`, within `atoms`, closer than `cutoff`.
pub fn contacts_within(points: &[[f64; 3]], atoms: &[usize], cutoff: f64) -> ContactList {
    let mut out = ContactList::default();
    for (a, &i) in atoms.iter().enumerate() {
        for &j in &atoms[a + 1..] {
            let d = distance(points[i], points[j]);
            if d < cutoff {
                out.pairs.push((i, j));
                out.distances.push(d);
            }
        }
    }
    out
}

/// Ligand–protein atom pairs of `record` closer than `cutoff`, as
/// `(ligand atom, protein atom)` record indices.
pub fn pairwise_contacts(record: &ComplexRecord, cutoff: f64) -> Result<ContactList> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cutoff must be positive, got {cutoff}"
        )));
    }
    Ok(contacts_between(
        &record.coords(),
        &record.ligand_indices(),
        &record.protein_indices(),
        cutoff,
    ))
}

/// Keeps the ligand and the `k` protein residues nearest to it, measured by
/// minimum atom-atom distance. Ties go to the smaller residue index.
pub fn select_pocket(record: &ComplexRecord, k: usize) -> Result<ComplexRecord> {
    let lig: Vec<[f64; 3]> = record
        .atoms
        .iter()
        .filter(|a| a.is_ligand)
        .map(|a| a.pos())
        .collect();
    if lig.is_empty() {
        return Err(Error::InvalidRecord {
            id: record.complex_id.clone(),
            msg: "pocket selection needs ligand atoms".into(),
        });
    }
    let mut nearest: BTreeMap<i64, f64> = BTreeMap::new();
    for a in record.atoms.iter().filter(|a| !a.is_ligand) {
        let d = lig
            .iter()
            .map(|&l| distance(l, a.pos()))
            .fold(f64::INFINITY, f64::min);
        let e = nearest.entry(a.residue).or_insert(f64::INFINITY);
        *e = e.min(d);
    }
    if nearest.is_empty() {
        return Err(Error::InvalidRecord {
            id: record.complex_id.clone(),
            msg: "no protein atoms to form a pocket".into(),
        });
    }
    if k >= nearest.len() {
        return Ok(record.clone());
    }
    let mut ranked: Vec<(i64, f64)> = nearest.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let keep: BTreeSet<i64> = ranked.iter().take(k).map(|r| r.0).collect();
    let mut out = record.clone();
    out.atoms
        .retain(|a| a.is_ligand || keep.contains(&a.residue));
    Ok(out)
}
