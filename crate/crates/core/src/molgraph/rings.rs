use std::collections::{BTreeSet, VecDeque};

use super::MolecularGraph;

/// Consecutive atom pairs of a ring, including the closing pair.
pub fn cycle_edges(ring: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

/// Minimum cycle basis (Horton candidates + GF(2) elimination). The basis
/// has `bonds - atoms + 1` cycles for a connected graph; each is reported
/// as atoms in traversal order.
pub fn ring_perception(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let n = g.atom_count();
    let m = g.bond_count();
    if n == 0 || m + 1 <= n {
        return Vec::new();
    }
    let rank = m + 1 - n;
    let words = m.div_ceil(64);

    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for root in 0..n {
        let parent = bfs_parents(g, root);
        let path_to_root = |mut v: usize| {
            let mut p = vec![v];
            while v != root {
                v = parent[v].expect("connected graph");
                p.push(v);
            }
            p
        };
        for b in &g.bonds {
            let px = path_to_root(b.begin);
            let py = path_to_root(b.end);
            // the two paths may only share the root
            let shared = px.iter().filter(|a| py.contains(a)).count();
            if shared != 1 {
                continue;
            }
            let mut cycle: Vec<usize> = px.into_iter().rev().collect();
            cycle.extend(py.into_iter().take_while(|&a| a != root));
            if cycle.len() >= 3 {
                candidates.insert((cycle.len(), canonical_rotation(cycle)));
            }
        }
    }

    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut rings = Vec::new();
    for (_, cycle) in candidates {
        let mut vec = vec![0u64; words];
        for (a, b) in cycle_edges(&cycle) {
            let bi = g
                .neighbors(a)
                .iter()
                .find(|&&(nb, _)| nb == b)
                .map(|&(_, bi)| bi)
                .expect("cycle edge");
            vec[bi / 64] ^= 1 << (bi % 64);
        }
        let mut reduced = vec.clone();
        for (row, &p) in basis.iter().zip(&pivots) {
            if reduced[p / 64] >> (p % 64) & 1 == 1 {
                for (r, w) in reduced.iter_mut().zip(row) {
                    *r ^= w;
                }
            }
        }
        if let Some(p) = first_bit(&reduced) {
            basis.push(reduced);
            pivots.push(p);
            rings.push(cycle);
            if rings.len() == rank {
                break;
            }
        }
    }
    rings
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn bfs_parents(g: &MolecularGraph, root: usize) -> Vec<Option<usize>> {
    let mut parent = vec![None; g.atom_count()];
    let mut seen = vec![false; g.atom_count()];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let mut next: Vec<usize> = g.neighbors(v).iter().map(|&(n, _)| n).collect();
        next.sort_unstable();
        for nb in next {
            if !seen[nb] {
                seen[nb] = true;
                parent[nb] = Some(v);
                queue.push_back(nb);
            }
        }
    }
    parent
}

/// Rotates so the smallest atom leads, then picks the direction with the
/// smaller second atom.
fn canonical_rotation(mut cycle: Vec<usize>) -> Vec<usize> {
    let k = cycle.iter().enumerate().min_by_key(|(_, &a)| a).map(|(i, _)| i).unwrap_or(0);
    cycle.rotate_left(k);
    if cycle.len() > 2 && cycle[cycle.len() - 1] < cycle[1] {
        cycle[1..].reverse();
    }
    cycle
}
