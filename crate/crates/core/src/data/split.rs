use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset};
use crate::ndiff::Rng;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then rarest-label-first greedy assignment: each label's
/// first unassigned molecule goes to train (when train has room), the rest
/// go wherever the split is furthest below its target size.
pub fn split(ds: &LabeledDataset, fractions: [f64; 3], seed: u64) -> Result<Split, DataError> {
    if fractions.iter().any(|&f| !(f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(fractions));
    }
    let n = ds.len();
    let mut rng = Rng::seed(seed);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);

    let target: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut assigned = vec![false; n];

    let pick = |parts: &[Vec<usize>; 3]| {
        (0..3)
            .map(|k| (k, target[k] - parts[k].len() as f64))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    };

    let mut counts = vec![0usize; ds.num_labels()];
    for ls in &ds.labels {
        for &l in ls {
            counts[l] += 1;
        }
    }
    let mut by_rarity: Vec<usize> = (0..ds.num_labels()).filter(|&l| counts[l] > 0).collect();
    by_rarity.sort_by_key(|&l| (counts[l], l));

    for l in by_rarity {
        let mut in_train = parts[0].iter().any(|&i| ds.labels[i].contains(&l));
        for &i in &order {
            if assigned[i] || !ds.labels[i].contains(&l) {
                continue;
            }
            let k = if !in_train && counts[l] >= 2 && target[0] >= 1.0 && (parts[0].len() as f64) < target[0] {
                0
            } else {
                pick(&parts)
            };
            in_train |= k == 0;
            parts[k].push(i);
            assigned[i] = true;
        }
    }
    for &i in &order {
        if !assigned[i] {
            let k = pick(&parts);
            parts[k].push(i);
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}
