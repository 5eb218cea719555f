use super::fingerprint::{fnv1a, BitFingerprint};
use crate::molgraph::MolecularGraph;

/// Canonical byte code of a path given as atoms; the smaller of the two
/// reading directions wins.
pub fn path_code(g: &MolecularGraph, path: &[usize]) -> Vec<u8> {
    let encode = |seq: &mut dyn Iterator<Item = &usize>| {
        let seq: Vec<usize> = seq.copied().collect();
        let mut out = Vec::with_capacity(seq.len() * 3);
        for (i, &a) in seq.iter().enumerate() {
            let atom = &g.atoms[a];
            out.push(atom.element.atomic_number());
            out.push(atom.aromatic as u8);
            if let Some(&next) = seq.get(i + 1) {
                out.push(g.bond_between(a, next).expect("path bond").order.code());
            }
        }
        out
    };
    let fwd = encode(&mut path.iter());
    let rev = encode(&mut path.iter().rev());
    fwd.min(rev)
}

/// Visits every simple path with 1..=`max_len` bonds, once per direction.
pub fn for_each_path(g: &MolecularGraph, max_len: usize, mut f: impl FnMut(&[usize])) {
    fn dfs(
        g: &MolecularGraph,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        max_len: usize,
        f: &mut dyn FnMut(&[usize]),
    ) {
        let last = *path.last().unwrap();
        for &(nb, _) in g.neighbors(last) {
            if on_path[nb] {
                continue;
            }
            path.push(nb);
            on_path[nb] = true;
            f(path);
            if path.len() <= max_len {
                dfs(g, path, on_path, max_len, f);
            }
            on_path[nb] = false;
            path.pop();
        }
    }
    let mut on_path = vec![false; g.atom_count()];
    for start in 0..g.atom_count() {
        let mut path = vec![start];
        on_path[start] = true;
        dfs(g, &mut path, &mut on_path, max_len, &mut f);
        on_path[start] = false;
    }
}

pub fn topological_fingerprint(g: &MolecularGraph, max_len: usize, nbits: usize) -> BitFingerprint {
    let mut fp = BitFingerprint::new(nbits);
    for_each_path(g, max_len, |p| {
        let h = fnv1a(&path_code(g, p));
        fp.set((h % nbits as u64) as usize);
    });
    fp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn fp(s: &str) -> BitFingerprint {
        topological_fingerprint(&parse_smiles(s).unwrap(), 7, 1024)
    }

    #[test]
    fn ethane_has_one_path() {
        assert_eq!(fp("CC").popcount(), 1);
    }

    #[test]
    fn direction_canonical() {
        assert_eq!(fp("CCO"), fp("OCC"));
    }

    #[test]
    fn path_lengths_bounded() {
        let g = parse_smiles("CCCCCCCCCC").unwrap();
        let mut longest = 0;
        for_each_path(&g, 3, |p| longest = longest.max(p.len() - 1));
        assert_eq!(longest, 3);
    }
}
