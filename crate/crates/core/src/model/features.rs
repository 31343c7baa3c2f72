use crate::data::ComplexRecord;

/// Element vocabulary of the one-hot block; anything else maps to `other`.
pub const ELEMENTS: [&str; 10] = ["H", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I"];
pub const OTHER_SLOT: usize = ELEMENTS.len();
pub const LIGAND_SLOT: usize = ELEMENTS.len() + 1;
pub const FEATURE_DIM: usize = ELEMENTS.len() + 2;

pub fn element_slot(symbol: &str) -> usize {
    let s = symbol.trim();
    let mut chars = s.chars();
    let norm: String = match chars.next() {
        Some(c) => c
            .to_uppercase()
            .chain(chars.flat_map(char::to_lowercase))
            .collect(),
        None => String::new(),
    };
    ELEMENTS
        .iter()
        .position(|e| *e == norm)
        .unwrap_or(OTHER_SLOT)
}

/// Row-major `n × FEATURE_DIM` matrix: element one-hot, then the ligand bit.
pub fn featurize_atoms(record: &ComplexRecord) -> Vec<f64> {
    let mut a = vec![0.0; record.atoms.len() * FEATURE_DIM];
    for (i, atom) in record.atoms.iter().enumerate() {
        let row = &mut a[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
        row[element_slot(&atom.element)] = 1.0;
        if atom.is_ligand {
            row[LIGAND_SLOT] = 1.0;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Atom;

    fn atom(e: &str, lig: bool) -> Atom {
        Atom {
            element: e.into(),
            x: 0.0,
            y: 0.0,
            z: 0.0,
            is_ligand: lig,
            residue: if lig { -1 } else { 0 },
        }
    }

    fn record(atoms: Vec<Atom>) -> ComplexRecord {
        ComplexRecord {
            complex_id: "f".into(),
            smiles: "C".into(),
            protein_id: "P".into(),
            label: 0.0,
            atoms,
        }
    }

    #[test]
    fn carbon_ligand_row() {
        let a = featurize_atoms(&record(vec![atom("C", true)]));
        assert_eq!(a.len(), 12);
        let mut expected = vec![0.0; 12];
        expected[1] = 1.0;
        expected[11] = 1.0;
        assert_eq!(a, expected);
    }

    #[test]
    fn symbols_normalize_and_unknowns_fall_through() {
        assert_eq!(element_slot("CL"), 7);
        assert_eq!(element_slot("br"), 8);
        assert_eq!(element_slot("Zn"), OTHER_SLOT);
        assert_eq!(element_slot(""), OTHER_SLOT);
    }

    #[test]
    fn rows_follow_atom_permutation() {
        let atoms = vec![
            atom("N", false),
            atom("Cl", true),
            atom("Xe", false),
            atom("O", true),
        ];
        let base = featurize_atoms(&record(atoms.clone()));
        let perm = [2, 0, 3, 1];
        let permuted = featurize_atoms(&record(perm.iter().map(|&i| atoms[i].clone()).collect()));
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(
                permuted[row * FEATURE_DIM..(row + 1) * FEATURE_DIM],
                base[src * FEATURE_DIM..(src + 1) * FEATURE_DIM]
            );
        }
    }
}
