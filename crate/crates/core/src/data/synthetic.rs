use std::collections::HashSet;

use super::{DataError, LabeledDataset};
use crate::ndiff::Rng;

/// `(label, chain unit)`; a molecule carries a label exactly when its unit
/// was placed into the chain.
pub const FRAGMENTS: [(&str, &str); 12] = [
    ("s00_hydroxyl", "C(O)"),
    ("s01_aromatic", "c1ccccc1"),
    ("s02_carbonyl", "C(=O)"),
    ("s03_amine", "C(N)"),
    ("s04_halogen", "C(Cl)"),
    ("s05_alkyne", "C#C"),
    ("s06_thioether", "C(SC)"),
    ("s07_cyclopentyl", "C1CCCC1"),
    ("s08_ether", "C(OC)"),
    ("s09_alkene", "C=C"),
    ("s10_cyclopropyl", "C1CC1"),
    ("s11_cyclobutyl", "C1CCC1"),
];

pub const MAX_SYNTHETIC_LABELS: usize = FRAGMENTS.len();

const HALOGENS: [&str; 3] = ["C(Cl)", "C(Br)", "C(F)"];
const FILLER: [&str; 3] = ["C", "C", "C(C)"];
const SCAFFOLD_ATTEMPTS: usize = 4096;

/// Zipf-shaped inclusion probabilities `0.5 / (k + 1)`.
pub fn synthetic_label_probabilities(n_labels: usize) -> Vec<f64> {
    (0..n_labels).map(|k| 0.5 / (k + 1) as f64).collect()
}

fn draw_labels(rng: &mut Rng, probs: &[f64]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| rng.bernoulli(p))
        .map(|(k, _)| k)
        .collect()
}

/// `extra` lengthens the leading filler so repeated attempts reach unused
/// scaffolds.
fn build_smiles(rng: &mut Rng, labels: &[usize], extra: usize) -> String {
    let mut units: Vec<&str> = labels
        .iter()
        .map(|&k| if k == 4 { HALOGENS[rng.below(3)] } else { FRAGMENTS[k].1 })
        .collect();
    rng.shuffle(&mut units);
    let mut s = String::new();
    let filler = |s: &mut String, rng: &mut Rng, min: usize| {
        for _ in 0..min + rng.below(3) {
            s.push_str(FILLER[rng.below(FILLER.len())]);
        }
    };
    filler(&mut s, rng, 1 + extra);
    for u in units {
        s.push_str(u);
        filler(&mut s, rng, 0);
    }
    s
}

/// Deterministic desk-scale dataset of chain molecules whose labels are
/// the structural units they contain. Labels are drawn independently with
/// Zipf-shaped probabilities; a repeated SMILES redraws only the scaffold,
/// lengthening the filler every few attempts.
pub fn synthetic_dataset(n_molecules: usize, n_labels: usize, seed: u64) -> Result<LabeledDataset, DataError> {
    if n_labels < 2 || n_labels > MAX_SYNTHETIC_LABELS || n_molecules < n_labels {
        return Err(DataError::BadParams(format!(
            "need n_molecules >= n_labels >= 2 and n_labels <= {MAX_SYNTHETIC_LABELS}, got {n_molecules} / {n_labels}"
        )));
    }
    let probs = synthetic_label_probabilities(n_labels);
    let mut rng = Rng::seed(seed);
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(n_molecules);
    while rows.len() < n_molecules {
        let labels = draw_labels(&mut rng, &probs);
        let Some(smiles) = (0..SCAFFOLD_ATTEMPTS)
            .map(|k| build_smiles(&mut rng, &labels, k / 8))
            .find(|s| !seen.contains(s))
        else {
            return Err(DataError::BadParams(format!(
                "could not produce {n_molecules} distinct molecules"
            )));
        };
        seen.insert(smiles.clone());
        let names: Vec<String> = labels.iter().map(|&k| FRAGMENTS[k].0.to_string()).collect();
        rows.push((smiles, names));
    }
    let mut ds = LabeledDataset::from_rows(rows)?;
    // keep every label slot even when a rare one was never drawn
    let full: Vec<String> = FRAGMENTS[..n_labels].iter().map(|f| f.0.to_string()).collect();
    if ds.vocab != full {
        for ls in ds.labels.iter_mut() {
            for l in ls.iter_mut() {
                *l = full.iter().position(|f| *f == ds.vocab[*l]).expect("known label");
            }
        }
        ds.vocab = full;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn deterministic_and_parseable() {
        let a = synthetic_dataset(200, 8, 3).unwrap();
        assert_eq!(a, synthetic_dataset(200, 8, 3).unwrap());
        assert_eq!(a.len(), 200);
        assert_eq!(a.num_labels(), 8);
        assert!(a.smiles.iter().all(|s| parse_smiles(s).is_ok()));
        assert_ne!(a, synthetic_dataset(200, 8, 4).unwrap());
    }

    #[test]
    fn bad_params() {
        assert!(synthetic_dataset(10, 1, 0).is_err());
        assert!(synthetic_dataset(3, 5, 0).is_err());
        assert!(synthetic_dataset(100, 13, 0).is_err());
    }
}
