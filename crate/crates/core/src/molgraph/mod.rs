//! SMILES parsing into validated molecular graphs, ring perception and
//! SMILES tokenization.
//!
//! Supported: organic-subset and bracket atoms, branches, ring closures
//! `1`-`9` and `%nn`, bond symbols `- = # :`, lowercase aromatic atoms.
//! Stereo markers (`/`, `\`, `@`) are accepted and ignored. Disconnected
//! input (`.`) is rejected.

mod element;
mod lexer;
mod rings;
mod tokenize;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use element::Element;
pub use lexer::{lex, BracketAtom, LexKind, Lexeme};
pub use rings::{cycle_edges, ring_perception};
pub use tokenize::{tokenize_smiles, TokenSequence, Vocab, UNK_TOKEN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MolError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("SMILES must be ASCII")]
    NonAscii,
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("ring bond {0} never closed")]
    UnclosedRingBond(u16),
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("atom {atom} ({element}) exceeds its allowed valence")]
    ValenceExceeded { atom: usize, element: Element },
    #[error("multi-fragment SMILES ('.') is not supported")]
    MultiFragmentUnsupported,
    #[error("unexpected character {ch:?} at {pos}")]
    UnexpectedCharacter { ch: char, pos: usize },
    #[error("bracket atom at {0} is never closed")]
    UnclosedBracket(usize),
    #[error("malformed bracket atom at {0}")]
    MalformedBracket(usize),
    #[error("bond or ring closure without a preceding atom")]
    DanglingBond,
    #[error("atoms {0} and {1} are bonded twice")]
    DuplicateBond(usize, usize),
    #[error("ring closure {0} uses conflicting bond symbols")]
    ConflictingRingBond(u16),
    #[error("aromatic atom {0} is not part of a ring")]
    AromaticOutsideRing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer contribution to valence; aromatic bonds count as 1 and the
    /// delocalized extra bond is accounted for per atom.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }

    pub fn is_multiple(self) -> bool {
        self != BondOrder::Single
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    /// Clamped to `[-2, 2]`.
    pub formal_charge: i8,
    /// Hydrogen count written inside brackets.
    pub explicit_h: Option<u8>,
    /// Hydrogens implied by the valence table (organic subset only).
    pub implicit_h: u8,
    pub degree: u8,
    pub in_ring: bool,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(0) + self.implicit_h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    pub conjugated: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Minimum cycle basis, each ring as atoms in traversal order.
    pub rings: Vec<Vec<usize>>,
    pub source: String,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor, bond index)` pairs of `atom`.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// Sum of bond valence contributions at `atom` (aromatic bonds count 1).
    pub fn bond_valence(&self, atom: usize) -> u8 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.bonds.iter().map(|b| (b.begin, b.end)).collect()
    }
}

struct Builder {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Builder {
    fn add_bond(&mut self, a: usize, b: usize, order: Option<BondOrder>) -> Result<(), MolError> {
        if a == b || self.adjacency[a].iter().any(|&(n, _)| n == b) {
            return Err(MolError::DuplicateBond(a.min(b), a.max(b)));
        }
        let order = order.unwrap_or(if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        let idx = self.bonds.len();
        self.bonds.push(Bond {
            begin: a,
            end: b,
            order,
            in_ring: false,
            conjugated: false,
        });
        self.adjacency[a].push((b, idx));
        self.adjacency[b].push((a, idx));
        Ok(())
    }
}

/// Parses one connected molecule.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, MolError> {
    let lexemes = lex(text)?;
    let mut g = Builder {
        atoms: Vec::new(),
        bonds: Vec::new(),
        adjacency: Vec::new(),
    };
    let mut prev: Option<usize> = None;
    // Some(None) marks a stereo bond symbol that defaults like an implicit bond.
    let mut pending: Option<Option<BondOrder>> = None;
    let mut branches: Vec<usize> = Vec::new();
    let mut open_rings: BTreeMap<u16, (usize, Option<BondOrder>)> = BTreeMap::new();
    let mut bracketed: Vec<bool> = Vec::new();

    for lx in &lexemes {
        match &lx.kind {
            LexKind::Atom { .. } | LexKind::Bracket(_) => {
                let atom = match &lx.kind {
                    LexKind::Atom { element, aromatic } => Atom {
                        element: *element,
                        aromatic: *aromatic,
                        formal_charge: 0,
                        explicit_h: None,
                        implicit_h: 0,
                        degree: 0,
                        in_ring: false,
                    },
                    LexKind::Bracket(b) => Atom {
                        element: b.element,
                        aromatic: b.aromatic,
                        formal_charge: b.charge,
                        explicit_h: Some(b.hcount),
                        implicit_h: 0,
                        degree: 0,
                        in_ring: false,
                    },
                    _ => unreachable!(),
                };
                bracketed.push(matches!(lx.kind, LexKind::Bracket(_)));
                g.atoms.push(atom);
                g.adjacency.push(Vec::new());
                let idx = g.atoms.len() - 1;
                if let Some(p) = prev {
                    g.add_bond(p, idx, pending.take().flatten())?;
                } else if pending.is_some() {
                    return Err(MolError::DanglingBond);
                }
                prev = Some(idx);
            }
            LexKind::Bond(order) => {
                if prev.is_none() || pending.is_some() {
                    return Err(MolError::DanglingBond);
                }
                pending = Some(*order);
            }
            LexKind::BranchOpen => {
                let p = prev.ok_or(MolError::UnbalancedParenthesis)?;
                if pending.is_some() {
                    return Err(MolError::DanglingBond);
                }
                branches.push(p);
            }
            LexKind::BranchClose => {
                if pending.is_some() {
                    return Err(MolError::DanglingBond);
                }
                prev = Some(branches.pop().ok_or(MolError::UnbalancedParenthesis)?);
            }
            LexKind::RingClosure(n) => {
                let p = prev.ok_or(MolError::DanglingBond)?;
                let order = pending.take().flatten();
                match open_rings.remove(n) {
                    Some((other, first_order)) => {
                        let order = match (first_order, order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(MolError::ConflictingRingBond(*n))
                            }
                            (a, b) => a.or(b),
                        };
                        g.add_bond(other, p, order)?;
                    }
                    None => {
                        open_rings.insert(*n, (p, order));
                    }
                }
            }
            LexKind::Dot => return Err(MolError::MultiFragmentUnsupported),
        }
    }
    if !branches.is_empty() {
        return Err(MolError::UnbalancedParenthesis);
    }
    if pending.is_some() {
        return Err(MolError::DanglingBond);
    }
    if let Some((&n, _)) = open_rings.iter().next() {
        return Err(MolError::UnclosedRingBond(n));
    }

    let Builder {
        mut atoms,
        mut bonds,
        adjacency,
    } = g;
    for (i, atom) in atoms.iter_mut().enumerate() {
        atom.degree = adjacency[i].len() as u8;
        let bond_sum: u8 = adjacency[i].iter().map(|&(_, b)| bonds[b].order.valence()).sum();
        if bracketed[i] {
            let allowed = atom.element.allowed_valences(atom.formal_charge);
            if let Some(&max) = allowed.last() {
                if bond_sum + atom.explicit_h.unwrap_or(0) > max {
                    return Err(MolError::ValenceExceeded {
                        atom: i,
                        element: atom.element,
                    });
                }
            }
        } else {
            atom.implicit_h = implicit_hydrogens(atom, bond_sum).ok_or(MolError::ValenceExceeded {
                atom: i,
                element: atom.element,
            })?;
        }
    }

    let mut graph = MolecularGraph {
        atoms,
        bonds: Vec::new(),
        rings: Vec::new(),
        source: text.to_string(),
        adjacency,
    };
    std::mem::swap(&mut graph.bonds, &mut bonds);
    let rings = ring_perception(&graph);
    for ring in &rings {
        for (a, b) in cycle_edges(ring) {
            let bi = graph
                .neighbors(a)
                .iter()
                .find(|&&(n, _)| n == b)
                .map(|&(_, bi)| bi)
                .expect("ring edge exists");
            graph.bonds[bi].in_ring = true;
            graph.atoms[a].in_ring = true;
            graph.atoms[b].in_ring = true;
        }
    }
    graph.rings = rings;
    if let Some(i) = graph.atoms.iter().position(|a| a.aromatic && !a.in_ring) {
        return Err(MolError::AromaticOutsideRing(i));
    }
    assign_conjugation(&mut graph);
    Ok(graph)
}

/// Implicit hydrogens for an organic-subset atom from its bond valence sum.
/// Aromatic atoms reserve one unit of their lowest valence for the
/// delocalized bond (benzene `c` -> 1 H, pyridine `n` -> 0 H, thiophene
/// `s` -> 0 H) and never take a higher valence to make room for hydrogens.
fn implicit_hydrogens(atom: &Atom, bond_sum: u8) -> Option<u8> {
    let allowed = atom.element.allowed_valences(atom.formal_charge);
    if allowed.is_empty() {
        return Some(0);
    }
    let fit = |used: u8| allowed.iter().find(|&&v| v >= used).map(|&v| v - used);
    if atom.aromatic {
        let lowest = allowed[0];
        if bond_sum < lowest {
            Some(lowest - bond_sum - 1)
        } else {
            fit(bond_sum).map(|_| 0)
        }
    } else {
        fit(bond_sum)
    }
}

/// Aromatic bonds are conjugated; a single bond is conjugated when both ends
/// carry another multiple bond; a multiple bond is conjugated when it touches
/// a conjugated single bond.
fn assign_conjugation(g: &mut MolecularGraph) {
    let has_other_multiple = |g: &MolecularGraph, atom: usize, except: usize| {
        g.neighbors(atom)
            .iter()
            .any(|&(_, b)| b != except && g.bonds[b].order.is_multiple())
    };
    let mut flags = vec![false; g.bonds.len()];
    for (i, b) in g.bonds.iter().enumerate() {
        flags[i] = match b.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => has_other_multiple(g, b.begin, i) && has_other_multiple(g, b.end, i),
            _ => false,
        };
    }
    for (i, b) in g.bonds.iter().enumerate() {
        if matches!(b.order, BondOrder::Double | BondOrder::Triple) {
            flags[i] = [b.begin, b.end].iter().any(|&a| {
                g.neighbors(a)
                    .iter()
                    .any(|&(_, nb)| nb != i && g.bonds[nb].order == BondOrder::Single && flags[nb])
            });
        }
    }
    for (b, f) in g.bonds.iter_mut().zip(flags) {
        b.conjugated = f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(g: &MolecularGraph) -> Vec<u8> {
        g.atoms.iter().map(|a| a.implicit_h).collect()
    }

    #[test]
    fn ethanol() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bonds.len(), 2);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(h(&g), vec![3, 2, 1]);
        assert!(g.rings.is_empty());
    }

    #[test]
    fn benzene() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bonds.len(), 6);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic && b.in_ring));
        assert_eq!(h(&g), vec![1; 6]);
        assert_eq!(g.rings.len(), 1);
        assert_eq!(g.rings[0].len(), 6);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_smiles("C(").unwrap_err(), MolError::UnbalancedParenthesis);
        assert_eq!(parse_smiles("C)C").unwrap_err(), MolError::UnbalancedParenthesis);
        assert_eq!(parse_smiles("C1CC").unwrap_err(), MolError::UnclosedRingBond(1));
        assert!(matches!(parse_smiles("CQ"), Err(MolError::UnknownElement(_))));
        assert!(matches!(parse_smiles("C(C)(C)(C)(C)C"), Err(MolError::ValenceExceeded { .. })));
        assert!(matches!(parse_smiles("O=O=O"), Err(MolError::ValenceExceeded { .. })));
        assert_eq!(parse_smiles("CC.O").unwrap_err(), MolError::MultiFragmentUnsupported);
        assert_eq!(parse_smiles("").unwrap_err(), MolError::EmptyInput);
        assert_eq!(parse_smiles("=C").unwrap_err(), MolError::DanglingBond);
        assert!(matches!(parse_smiles("C12CC12"), Err(MolError::DuplicateBond(..))));
        assert!(matches!(parse_smiles("cc"), Err(MolError::AromaticOutsideRing(_))));
    }

    #[test]
    fn heteroatoms_and_charges() {
        let g = parse_smiles("c1ccncc1").unwrap();
        assert_eq!(h(&g), vec![1, 1, 1, 0, 1, 1]);
        let g = parse_smiles("c1ccoc1").unwrap();
        assert_eq!(g.atoms[3].implicit_h, 0);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atoms[3].total_h(), 1);
        let g = parse_smiles("CS(=O)(=O)C").unwrap();
        assert_eq!(g.atoms[1].implicit_h, 0);
        let g = parse_smiles("CS").unwrap();
        assert_eq!(g.atoms[1].implicit_h, 1);
        let g = parse_smiles("C[N+](C)(C)C").unwrap();
        assert_eq!(g.atoms[1].formal_charge, 1);
        assert!(matches!(parse_smiles("C[N+](C)(C)(C)C"), Err(MolError::ValenceExceeded { .. })));
        let g = parse_smiles("[NH4+]").unwrap();
        assert_eq!(g.atoms[0].total_h(), 4);
    }

    #[test]
    fn ring_closure_bond_orders() {
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        let doubles = g.bonds.iter().filter(|b| b.order == BondOrder::Double).count();
        assert_eq!(doubles, 3);
        assert!(g.bonds.iter().all(|b| b.in_ring && b.conjugated));
        assert_eq!(h(&g), vec![1; 6]);
        let g = parse_smiles("C=1CCCCC=1").unwrap();
        assert_eq!(g.bond_between(0, 5).unwrap().order, BondOrder::Double);
        assert_eq!(parse_smiles("C=1CCCCC#1").unwrap_err(), MolError::ConflictingRingBond(1));
        let g = parse_smiles("C%10CCC%10").unwrap();
        assert_eq!(g.rings.len(), 1);
    }

    #[test]
    fn stereo_markers_ignored() {
        let a = parse_smiles("F/C=C/F").unwrap();
        let b = parse_smiles("FC=CF").unwrap();
        assert_eq!(a.bonds, b.bonds);
        let c = parse_smiles("N[C@@H](C)C(=O)O").unwrap();
        assert_eq!(c.atoms[1].total_h(), 1);
    }

    #[test]
    fn conjugation_flags() {
        let g = parse_smiles("C=C").unwrap();
        assert!(!g.bonds[0].conjugated);
        let g = parse_smiles("C=CC=C").unwrap();
        assert!(g.bonds.iter().all(|b| b.conjugated));
        let g = parse_smiles("C=CCC=C").unwrap();
        assert!(g.bonds.iter().all(|b| !b.conjugated));
    }

    #[test]
    fn branches_attach_to_branch_point() {
        let g = parse_smiles("CC(C)(C)O").unwrap();
        assert_eq!(g.atoms[1].degree, 4);
        assert_eq!(g.atoms[1].implicit_h, 0);
        assert_eq!(g.atoms[4].implicit_h, 1);
    }
}
