use std::sync::OnceLock;

use super::fingerprint::BitFingerprint;
use super::topological::for_each_path;
use super::FeatureError;
use crate::molgraph::{BondOrder, Element, MolecularGraph};

pub const KEY_COUNT: usize = 64;

const KEY_TABLE: &str = include_str!("../../data/structural_keys.tsv");

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    HasElement(Element),
    ElementCount(Element, usize),
    Halogen,
    OtherElement,
    HeavyAtoms(usize),
    AromaticRing,
    RingSize(usize),
    RingCount(usize),
    AromaticRingCount(usize),
    FusedRings,
    HeteroatomInRing,
    /// Atom of the element with exactly this many hydrogens.
    AtomH(Element, u8),
    /// At least `count` atoms of degree >= `degree`.
    DegreeCount(u8, usize),
    Charged,
    Formyl,
    Path(PathPattern),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomPattern {
    Any,
    Element { element: Element, aromatic: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BondPattern {
    Any,
    Order(BondOrder),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPattern {
    pub atoms: Vec<AtomPattern>,
    pub bonds: Vec<BondPattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralKey {
    pub id: usize,
    pub name: String,
    pub predicate: Predicate,
}

fn bad(line: usize, msg: impl Into<String>) -> FeatureError {
    FeatureError::KeyTable {
        line,
        message: msg.into(),
    }
}

fn element(line: usize, s: &str) -> Result<Element, FeatureError> {
    Element::from_symbol(s).ok_or_else(|| bad(line, format!("unknown element {s}")))
}

fn number<T: std::str::FromStr>(line: usize, s: Option<&str>) -> Result<T, FeatureError> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(line, "expected a number"))
}

pub fn parse_path_pattern(text: &str) -> Option<PathPattern> {
    let b = text.as_bytes();
    let mut atoms = Vec::new();
    let mut bonds = Vec::new();
    let mut i = 0;
    loop {
        let (atom, len) = match b.get(i)? {
            b'*' => (AtomPattern::Any, 1),
            c if c.is_ascii_lowercase() => (
                AtomPattern::Element {
                    element: Element::from_symbol(&(*c as char).to_ascii_uppercase().to_string())?,
                    aromatic: true,
                },
                1,
            ),
            c if c.is_ascii_uppercase() => {
                let two = b.get(i + 1).filter(|x| x.is_ascii_lowercase());
                match two.and_then(|_| Element::from_symbol(&text[i..i + 2])) {
                    Some(e) => (
                        AtomPattern::Element {
                            element: e,
                            aromatic: false,
                        },
                        2,
                    ),
                    None => (
                        AtomPattern::Element {
                            element: Element::from_symbol(&text[i..i + 1])?,
                            aromatic: false,
                        },
                        1,
                    ),
                }
            }
            _ => return None,
        };
        atoms.push(atom);
        i += len;
        let Some(&c) = b.get(i) else { break };
        bonds.push(match c {
            b'-' => BondPattern::Order(BondOrder::Single),
            b'=' => BondPattern::Order(BondOrder::Double),
            b'#' => BondPattern::Order(BondOrder::Triple),
            b':' => BondPattern::Order(BondOrder::Aromatic),
            b'~' => BondPattern::Any,
            _ => return None,
        });
        i += 1;
    }
    Some(PathPattern { atoms, bonds })
}

pub fn parse_key_table(text: &str) -> Result<Vec<StructuralKey>, FeatureError> {
    let mut keys = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(line, "expected id, name and predicate columns"));
        }
        let id: usize = number(line, Some(cols[0]))?;
        let mut words = cols[2].split_whitespace();
        let head = words.next().ok_or_else(|| bad(line, "empty predicate"))?;
        let mut arg = || words.next();
        let predicate = match head {
            "has_element" => Predicate::HasElement(element(line, arg().unwrap_or(""))?),
            "element_count" => {
                let e = element(line, arg().unwrap_or(""))?;
                Predicate::ElementCount(e, number(line, arg())?)
            }
            "halogen" => Predicate::Halogen,
            "other_element" => Predicate::OtherElement,
            "heavy_atoms" => Predicate::HeavyAtoms(number(line, arg())?),
            "aromatic_ring" => Predicate::AromaticRing,
            "ring_size" => Predicate::RingSize(number(line, arg())?),
            "ring_count" => Predicate::RingCount(number(line, arg())?),
            "aromatic_ring_count" => Predicate::AromaticRingCount(number(line, arg())?),
            "fused_rings" => Predicate::FusedRings,
            "heteroatom_in_ring" => Predicate::HeteroatomInRing,
            "atom_h" => {
                let e = element(line, arg().unwrap_or(""))?;
                Predicate::AtomH(e, number(line, arg())?)
            }
            "degree_count" => {
                let d = number(line, arg())?;
                Predicate::DegreeCount(d, number(line, arg())?)
            }
            "charged" => Predicate::Charged,
            "formyl" => Predicate::Formyl,
            "path" => {
                let p = arg().ok_or_else(|| bad(line, "missing path pattern"))?;
                Predicate::Path(parse_path_pattern(p).ok_or_else(|| bad(line, format!("bad pattern {p}")))?)
            }
            other => return Err(bad(line, format!("unknown predicate {other}"))),
        };
        if words.next().is_some() {
            return Err(bad(line, "trailing arguments"));
        }
        if id != keys.len() {
            return Err(bad(line, format!("ids must be consecutive, expected {}", keys.len())));
        }
        keys.push(StructuralKey {
            id,
            name: cols[1].to_string(),
            predicate,
        });
    }
    Ok(keys)
}

/// The bundled 64-key table.
pub fn key_table() -> &'static [StructuralKey] {
    static TABLE: OnceLock<Vec<StructuralKey>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let keys = parse_key_table(KEY_TABLE).expect("bundled key table parses");
        assert_eq!(keys.len(), KEY_COUNT);
        keys
    })
}

fn atom_matches(g: &MolecularGraph, a: usize, p: &AtomPattern) -> bool {
    match p {
        AtomPattern::Any => true,
        AtomPattern::Element { element, aromatic } => {
            g.atoms[a].element == *element && g.atoms[a].aromatic == *aromatic
        }
    }
}

fn path_matches(g: &MolecularGraph, p: &PathPattern) -> bool {
    if p.atoms.len() == 1 {
        return (0..g.atom_count()).any(|a| atom_matches(g, a, &p.atoms[0]));
    }
    let mut found = false;
    for_each_path(g, p.bonds.len(), |path| {
        if found || path.len() != p.atoms.len() {
            return;
        }
        let atoms_ok = path.iter().zip(&p.atoms).all(|(&a, ap)| atom_matches(g, a, ap));
        let bonds_ok = path.windows(2).zip(&p.bonds).all(|(w, bp)| match bp {
            BondPattern::Any => true,
            BondPattern::Order(o) => g.bond_between(w[0], w[1]).map(|b| b.order) == Some(*o),
        });
        found = atoms_ok && bonds_ok;
    });
    found
}

fn is_common(e: Element) -> bool {
    [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::CL,
        Element::BR,
        Element::I,
        Element::H,
    ]
    .contains(&e)
}

fn ring_aromatic(g: &MolecularGraph, ring: &[usize]) -> bool {
    ring.iter().all(|&a| g.atoms[a].aromatic)
}

pub fn evaluate(g: &MolecularGraph, p: &Predicate) -> bool {
    let count = |e: Element| g.atoms.iter().filter(|a| a.element == e).count();
    match p {
        Predicate::HasElement(e) => count(*e) > 0,
        Predicate::ElementCount(e, n) => count(*e) >= *n,
        Predicate::Halogen => g.atoms.iter().any(|a| a.element.is_halogen()),
        Predicate::OtherElement => g.atoms.iter().any(|a| !is_common(a.element)),
        Predicate::HeavyAtoms(n) => g.atoms.iter().filter(|a| a.element != Element::H).count() >= *n,
        Predicate::AromaticRing => g.rings.iter().any(|r| ring_aromatic(g, r)),
        Predicate::RingSize(k) => g.rings.iter().any(|r| r.len() == *k),
        Predicate::RingCount(n) => g.rings.len() >= *n,
        Predicate::AromaticRingCount(n) => g.rings.iter().filter(|r| ring_aromatic(g, r)).count() >= *n,
        Predicate::FusedRings => g.rings.iter().enumerate().any(|(i, r)| {
            g.rings[i + 1..]
                .iter()
                .any(|q| r.iter().filter(|a| q.contains(a)).count() >= 2)
        }),
        Predicate::HeteroatomInRing => g
            .atoms
            .iter()
            .any(|a| a.in_ring && a.element != Element::C),
        Predicate::AtomH(e, h) => g.atoms.iter().any(|a| a.element == *e && a.total_h() == *h),
        Predicate::DegreeCount(d, n) => g.atoms.iter().filter(|a| a.degree >= *d).count() >= *n,
        Predicate::Charged => g.atoms.iter().any(|a| a.formal_charge != 0),
        Predicate::Formyl => g.bonds.iter().any(|b| {
            b.order == BondOrder::Double
                && [(b.begin, b.end), (b.end, b.begin)].iter().any(|&(c, o)| {
                    g.atoms[c].element == Element::C
                        && g.atoms[c].total_h() >= 1
                        && g.atoms[o].element == Element::O
                })
        }),
        Predicate::Path(pat) => path_matches(g, pat),
    }
}

pub fn structural_keys(g: &MolecularGraph) -> BitFingerprint {
    let mut fp = BitFingerprint::new(KEY_COUNT);
    for key in key_table() {
        if evaluate(g, &key.predicate) {
            fp.set(key.id);
        }
    }
    fp
}

/// Id of the key with the given name in the bundled table.
pub fn key_id(name: &str) -> Option<usize> {
    key_table().iter().find(|k| k.name == name).map(|k| k.id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn keys(s: &str) -> BitFingerprint {
        structural_keys(&parse_smiles(s).unwrap())
    }

    #[test]
    fn table_is_complete() {
        let t = key_table();
        assert_eq!(t.len(), 64);
        let mut names: Vec<&str> = t.iter().map(|k| k.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 64);
    }

    #[test]
    fn ethanol_keys() {
        let fp = keys("CCO");
        assert!(fp.get(key_id("contains O").unwrap()));
        assert!(!fp.get(key_id("contains N").unwrap()));
        assert!(fp.get(key_id("hydroxyl OH").unwrap()));
    }

    #[test]
    fn benzene_keys() {
        let fp = keys("c1ccccc1");
        assert!(fp.get(key_id("aromatic ring").unwrap()));
        assert!(fp.get(key_id("ring of size 6").unwrap()));
        assert!(!fp.get(key_id("fused rings").unwrap()));
    }

    #[test]
    fn acetic_acid_carbonyl() {
        let fp = keys("CC(=O)O");
        assert!(fp.get(key_id("C=O").unwrap()));
        assert!(fp.get(key_id("O-C=O").unwrap()));
        assert!(!fp.get(key_id("aldehyde or formyl CH=O").unwrap()));
        assert!(keys("CC=O").get(key_id("aldehyde or formyl CH=O").unwrap()));
    }

    #[test]
    fn pattern_parser() {
        let p = parse_path_pattern("c-Cl~*").unwrap();
        assert_eq!(p.atoms.len(), 3);
        assert_eq!(p.bonds, vec![BondPattern::Order(BondOrder::Single), BondPattern::Any]);
        assert!(parse_path_pattern("C-").is_none());
        assert!(parse_path_pattern("C?C").is_none());
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(parse_key_table("0\tx\tbogus").is_err());
        assert!(parse_key_table("1\tx\thalogen").is_err());
        assert!(parse_key_table("0\tx\tring_size").is_err());
    }
}
