use serde::{Serialize, Serializer};

/// Chemical element, stored as its atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

const SYMBOLS: [&str; 119] = [
    "*", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize]
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        SYMBOLS
            .iter()
            .skip(1)
            .position(|&s| s == sym)
            .map(|i| Element(i as u8 + 1))
    }

    /// Organic-subset elements that may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        matches!(self.0, 5..=9 | 15..=17 | 35 | 53)
    }

    pub fn is_halogen(self) -> bool {
        matches!(self.0, 9 | 17 | 35 | 53)
    }

    /// Neutral valences in increasing order; empty when unconstrained.
    pub fn default_valences(self) -> &'static [u8] {
        match self.0 {
            5 => &[3],
            6 => &[4],
            7 => &[3],
            8 => &[2],
            15 => &[3, 5],
            16 => &[2, 4, 6],
            9 | 17 | 35 | 53 => &[1],
            _ => &[],
        }
    }

    /// Allowed valences after a formal charge: N/O/P/S and halogens shift up
    /// by the charge (N+ -> 4), boron shifts down (B- -> 4), carbon loses one
    /// per unit of either sign.
    pub fn allowed_valences(self, charge: i8) -> Vec<u8> {
        let base = self.default_valences();
        base.iter()
            .filter_map(|&v| {
                let v = v as i16;
                let shifted = match self.0 {
                    5 => v - charge as i16,
                    6 => v - (charge as i16).abs(),
                    _ => v + charge as i16,
                };
                (shifted >= 0).then_some(shifted as u8)
            })
            .collect()
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.symbol())
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_lookup() {
        assert_eq!(Element::from_symbol("Cl"), Some(Element::CL));
        assert_eq!(Element::from_symbol("Na").unwrap().atomic_number(), 11);
        assert_eq!(Element::from_symbol("Xx"), None);
        assert_eq!(Element::BR.symbol(), "Br");
    }

    #[test]
    fn charge_shifts() {
        assert_eq!(Element::N.allowed_valences(1), vec![4]);
        assert_eq!(Element::O.allowed_valences(-1), vec![1]);
        assert_eq!(Element::C.allowed_valences(-1), vec![3]);
        assert_eq!(Element::B.allowed_valences(-1), vec![4]);
        assert_eq!(Element::S.allowed_valences(0), vec![2, 4, 6]);
    }
}
