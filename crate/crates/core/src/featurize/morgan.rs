use std::collections::HashSet;

use super::fingerprint::{fnv1a, BitFingerprint};
use crate::molgraph::MolecularGraph;

/// Initial atom invariant: element, degree, charge, hydrogen count, aromatic.
pub fn atom_invariant(g: &MolecularGraph, atom: usize) -> u64 {
    let a = &g.atoms[atom];
    fnv1a(&[
        a.element.atomic_number(),
        a.degree,
        a.formal_charge as u8,
        a.total_h(),
        a.aromatic as u8,
    ])
}

/// Atom ids after each round, `ids[r][atom]` for `r` in `0..=radius`.
pub fn morgan_ids(g: &MolecularGraph, radius: usize) -> Vec<Vec<u64>> {
    let n = g.atom_count();
    let mut rounds = vec![(0..n).map(|a| atom_invariant(g, a)).collect::<Vec<_>>()];
    for _ in 0..radius {
        let prev = rounds.last().unwrap();
        let next = (0..n)
            .map(|a| {
                let mut nbrs: Vec<(u8, u64)> = g
                    .neighbors(a)
                    .iter()
                    .map(|&(nb, b)| (g.bonds[b].order.code(), prev[nb]))
                    .collect();
                nbrs.sort_unstable();
                let mut bytes = prev[a].to_le_bytes().to_vec();
                for (code, id) in nbrs {
                    bytes.push(code);
                    bytes.extend_from_slice(&id.to_le_bytes());
                }
                fnv1a(&bytes)
            })
            .collect();
        rounds.push(next);
    }
    rounds
}

/// Circular fingerprint. An environment is the atoms and bonds within
/// `r` hops of its center; an environment covering exactly the same atoms
/// and bonds as one from an earlier round (or an earlier center in the same
/// round with a smaller id) contributes no bit.
pub fn morgan_fingerprint(g: &MolecularGraph, radius: usize, nbits: usize) -> BitFingerprint {
    let mut fp = BitFingerprint::new(nbits);
    let n = g.atom_count();
    let ids = morgan_ids(g, radius);
    let mut atoms: Vec<Vec<bool>> = (0..n).map(|a| (0..n).map(|x| x == a).collect()).collect();
    let mut bonds: Vec<Vec<bool>> = vec![vec![false; g.bond_count()]; n];
    let mut seen: HashSet<(Vec<bool>, Vec<bool>)> = HashSet::new();

    for (r, round) in ids.iter().enumerate() {
        if r > 0 {
            let (pa, pb) = (atoms.clone(), bonds.clone());
            for c in 0..n {
                for &(nb, b) in g.neighbors(c) {
                    bonds[c][b] = true;
                    for k in 0..n {
                        atoms[c][k] |= pa[nb][k];
                    }
                    for k in 0..g.bond_count() {
                        bonds[c][k] |= pb[nb][k];
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&c| round[c]);
        for c in order {
            if seen.insert((atoms[c].clone(), bonds[c].clone())) {
                fp.set((round[c] % nbits as u64) as usize);
            }
        }
    }
    fp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn fp(s: &str, r: usize) -> BitFingerprint {
        morgan_fingerprint(&parse_smiles(s).unwrap(), r, 1024)
    }

    #[test]
    fn order_invariant() {
        assert_eq!(fp("CO", 2), fp("OC", 2));
    }

    #[test]
    fn methane_radius_one_is_one_bit() {
        assert_eq!(fp("C", 1).popcount(), 1);
    }

    #[test]
    fn ethanol_radius_one_within_bounds() {
        let c = fp("CCO", 1).popcount();
        assert!((3..=6).contains(&c), "{c}");
    }
}
