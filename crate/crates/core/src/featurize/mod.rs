//! Atom and bond feature matrices and the three binary fingerprints.

mod fingerprint;
mod keys;
mod morgan;
mod topological;

use serde::Serialize;
use thiserror::Error;

use crate::molgraph::{
    parse_smiles, tokenize_smiles, BondOrder, Element, MolError, MolecularGraph, TokenSequence, Vocab,
};
use crate::ndiff::Tensor;

pub use fingerprint::{fnv1a, BitFingerprint, FNV_OFFSET, FNV_PRIME};
pub use keys::{
    evaluate, key_id, key_table, parse_key_table, parse_path_pattern, structural_keys, AtomPattern,
    BondPattern, PathPattern, Predicate, StructuralKey, KEY_COUNT,
};
pub use morgan::{atom_invariant, morgan_fingerprint, morgan_ids};
pub use topological::{for_each_path, path_code, topological_fingerprint};

pub const ATOM_FEATURES: usize = 28;
pub const BOND_FEATURES: usize = 6;
pub const MORGAN_BITS: usize = 1024;
pub const MORGAN_RADIUS: usize = 2;
pub const TOPO_BITS: usize = 1024;
pub const TOPO_MAX_LEN: usize = 7;
pub const FINGERPRINT_WIDTH: usize = MORGAN_BITS + KEY_COUNT + TOPO_BITS;

const ELEMENT_SLOTS: [Element; 9] = [
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::P,
    Element::F,
    Element::CL,
    Element::BR,
    Element::I,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("fingerprint width {found} where {expected} was expected")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid hex digit {0:?}")]
    BadHex(char),
    #[error("structural key table line {line}: {message}")]
    KeyTable { line: usize, message: String },
    #[error(transparent)]
    Mol(#[from] MolError),
}

/// Column layout: element (10), degree 0-5 (6), charge -2..2 (5),
/// aromatic (1), hydrogens 0-4 (5), in ring (1).
pub fn atom_features(g: &MolecularGraph) -> Tensor {
    let mut t = Tensor::zeros(g.atom_count(), ATOM_FEATURES);
    for (i, a) in g.atoms.iter().enumerate() {
        let row = t.row_mut(i);
        let el = ELEMENT_SLOTS.iter().position(|&e| e == a.element).unwrap_or(9);
        row[el] = 1.0;
        row[10 + (a.degree as usize).min(5)] = 1.0;
        row[16 + (a.formal_charge.clamp(-2, 2) + 2) as usize] = 1.0;
        row[21] = a.aromatic as u8 as f64;
        row[22 + (a.total_h() as usize).min(4)] = 1.0;
        row[27] = a.in_ring as u8 as f64;
    }
    t
}

/// Column layout: single, double, triple, aromatic, in ring, conjugated.
pub fn bond_features(g: &MolecularGraph) -> Tensor {
    let mut t = Tensor::zeros(g.bond_count(), BOND_FEATURES);
    for (i, b) in g.bonds.iter().enumerate() {
        let row = t.row_mut(i);
        let slot = match b.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        row[slot] = 1.0;
        row[4] = b.in_ring as u8 as f64;
        row[5] = b.conjugated as u8 as f64;
    }
    t
}

/// Morgan, keys and topological bits as one 0/1 vector, in that order.
pub fn concat_fingerprints(
    m: &BitFingerprint,
    k: &BitFingerprint,
    t: &BitFingerprint,
) -> Result<Vec<f64>, FeatureError> {
    for (fp, w) in [(m, MORGAN_BITS), (k, KEY_COUNT), (t, TOPO_BITS)] {
        if fp.width() != w {
            return Err(FeatureError::WidthMismatch {
                expected: w,
                found: fp.width(),
            });
        }
    }
    let mut out = m.to_f64();
    out.extend(k.to_f64());
    out.extend(t.to_f64());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprints {
    pub morgan: BitFingerprint,
    pub keys: BitFingerprint,
    pub topological: BitFingerprint,
}

impl Fingerprints {
    pub fn compute(g: &MolecularGraph) -> Self {
        Self {
            morgan: morgan_fingerprint(g, MORGAN_RADIUS, MORGAN_BITS),
            keys: structural_keys(g),
            topological: topological_fingerprint(g, TOPO_MAX_LEN, TOPO_BITS),
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        concat_fingerprints(&self.morgan, &self.keys, &self.topological)
            .expect("default widths")
    }
}

/// Everything the model reads for one molecule, computed once and reused
/// across epochs.
#[derive(Debug, Clone)]
pub struct MoleculeFeatures {
    pub smiles: String,
    pub atoms: Tensor,
    pub bonds: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub fingerprint: Vec<f64>,
    pub tokens: TokenSequence,
}

impl MoleculeFeatures {
    pub fn from_smiles(smiles: &str, vocab: &Vocab) -> Result<Self, FeatureError> {
        let g = parse_smiles(smiles)?;
        Self::from_graph(&g, vocab)
    }

    pub fn from_graph(g: &MolecularGraph, vocab: &Vocab) -> Result<Self, FeatureError> {
        Ok(Self {
            smiles: g.source.clone(),
            atoms: atom_features(g),
            bonds: bond_features(g),
            edges: g.edge_list(),
            fingerprint: Fingerprints::compute(g).concat(),
            tokens: tokenize_smiles(&g.source, vocab)?,
        })
    }
}

/// One line of `featurize` output.
#[derive(Debug, Clone, Serialize)]
pub struct FeatureRecord {
    pub smiles: String,
    pub atom_features: Vec<Vec<f64>>,
    pub bond_features: Vec<Vec<f64>>,
    pub fp_morgan_hex: String,
    pub fp_keys_hex: String,
    pub fp_topo_hex: String,
}

impl FeatureRecord {
    pub fn from_smiles(smiles: &str) -> Result<Self, FeatureError> {
        let g = parse_smiles(smiles)?;
        let fps = Fingerprints::compute(&g);
        Ok(Self {
            smiles: smiles.to_string(),
            atom_features: atom_features(&g).to_rows(),
            bond_features: bond_features(&g).to_rows(),
            fp_morgan_hex: fps.morgan.to_hex(),
            fp_keys_hex: fps.keys.to_hex(),
            fp_topo_hex: fps.topological.to_hex(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    fn ones(row: &[f64]) -> Vec<usize> {
        row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect()
    }

    #[test]
    fn methane_row() {
        let x = atom_features(&g("C"));
        assert_eq!(x.dims(), (1, 28));
        assert_eq!(ones(x.row(0)), vec![0, 10, 18, 26]);
    }

    #[test]
    fn benzene_rows() {
        let x = atom_features(&g("c1ccccc1"));
        for r in 0..6 {
            assert_eq!(ones(x.row(r)), vec![0, 12, 18, 21, 23, 27]);
        }
    }

    #[test]
    fn ethanol_middle_carbon() {
        let x = atom_features(&g("CCO"));
        let r = ones(x.row(1));
        assert!(r.contains(&12) && r.contains(&24));
    }

    #[test]
    fn boron_and_unknowns_use_other_slot() {
        let x = atom_features(&g("B(C)C"));
        assert_eq!(x.get(0, 9), 1.0);
        let x = atom_features(&g("C[Si](C)(C)C"));
        assert_eq!(x.get(1, 9), 1.0);
    }

    #[test]
    fn bond_rows() {
        assert_eq!(bond_features(&g("C=C")).row(0), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = bond_features(&g("c1ccccc1"));
        for r in 0..6 {
            assert_eq!(b.row(r), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        }
        let b = bond_features(&g("CCO"));
        assert_eq!(b.rows(), 2);
        assert!((0..2).all(|r| b.get(r, 0) == 1.0));
    }

    #[test]
    fn concat_widths() {
        let z = concat_fingerprints(
            &BitFingerprint::new(1024),
            &BitFingerprint::new(64),
            &BitFingerprint::new(1024),
        )
        .unwrap();
        assert_eq!(z.len(), 2112);
        assert!(z.iter().all(|&v| v == 0.0));
        let err = concat_fingerprints(
            &BitFingerprint::new(512),
            &BitFingerprint::new(64),
            &BitFingerprint::new(1024),
        );
        assert!(matches!(err, Err(FeatureError::WidthMismatch { .. })));
    }
}
