use super::{BondOrder, Element, MolError};

#[derive(Debug, Clone, PartialEq)]
pub struct BracketAtom {
    pub element: Element,
    pub aromatic: bool,
    pub hcount: u8,
    pub charge: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LexKind {
    Atom { element: Element, aromatic: bool },
    Bracket(BracketAtom),
    /// `None` for the stereo bond markers `/` and `\`, read as single bonds.
    Bond(Option<BondOrder>),
    BranchOpen,
    BranchClose,
    RingClosure(u16),
    Dot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexeme {
    pub kind: LexKind,
    pub start: usize,
    pub end: usize,
}

/// Splits SMILES text into lexemes. Every byte of the input belongs to
/// exactly one lexeme, so joining the spans reproduces the input.
pub fn lex(text: &str) -> Result<Vec<Lexeme>, MolError> {
    if text.is_empty() {
        return Err(MolError::EmptyInput);
    }
    if !text.is_ascii() {
        return Err(MolError::NonAscii);
    }
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        let c = b[i] as char;
        let kind = match c {
            'C' if b.get(i + 1) == Some(&b'l') => {
                i += 1;
                LexKind::Atom {
                    element: Element::CL,
                    aromatic: false,
                }
            }
            'B' if b.get(i + 1) == Some(&b'r') => {
                i += 1;
                LexKind::Atom {
                    element: Element::BR,
                    aromatic: false,
                }
            }
            'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => LexKind::Atom {
                element: Element::from_symbol(&c.to_string()).unwrap(),
                aromatic: false,
            },
            'b' | 'c' | 'n' | 'o' | 'p' | 's' => LexKind::Atom {
                element: Element::from_symbol(&c.to_ascii_uppercase().to_string()).unwrap(),
                aromatic: true,
            },
            '[' => {
                let close = text[i..]
                    .find(']')
                    .map(|p| p + i)
                    .ok_or(MolError::UnclosedBracket(i))?;
                let atom = parse_bracket(&text[i + 1..close], i)?;
                i = close;
                LexKind::Bracket(atom)
            }
            '-' => LexKind::Bond(Some(BondOrder::Single)),
            '=' => LexKind::Bond(Some(BondOrder::Double)),
            '#' => LexKind::Bond(Some(BondOrder::Triple)),
            ':' => LexKind::Bond(Some(BondOrder::Aromatic)),
            '/' | '\\' => LexKind::Bond(None),
            '(' => LexKind::BranchOpen,
            ')' => LexKind::BranchClose,
            '0'..='9' => LexKind::RingClosure(c as u16 - '0' as u16),
            '%' => {
                let digits = text.get(i + 1..i + 3).unwrap_or("");
                if digits.len() != 2 || !digits.bytes().all(|d| d.is_ascii_digit()) {
                    return Err(MolError::UnexpectedCharacter { ch: '%', pos: i });
                }
                i += 2;
                LexKind::RingClosure(digits.parse().unwrap())
            }
            '.' => LexKind::Dot,
            c if c.is_ascii_alphabetic() || c == '*' => {
                return Err(MolError::UnknownElement(c.to_string()))
            }
            c => return Err(MolError::UnexpectedCharacter { ch: c, pos: i }),
        };
        i += 1;
        out.push(Lexeme {
            kind,
            start,
            end: i,
        });
    }
    Ok(out)
}

/// Parses the inside of `[...]`: isotope? symbol chirality? hcount? charge? class?
fn parse_bracket(body: &str, pos: usize) -> Result<BracketAtom, MolError> {
    let b = body.as_bytes();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let rest = &body[i..];
    let (element, aromatic, len) = bracket_symbol(rest).ok_or_else(|| {
        MolError::UnknownElement(rest.chars().take(2).collect::<String>())
    })?;
    i += len;
    while i < b.len() && b[i] == b'@' {
        i += 1;
    }
    // @TH1, @AL2, @SP3 ... chirality classes
    if i > 0 && b[i - 1] == b'@' && ["TH", "AL", "SP", "TB", "OH"].iter().any(|c| body[i..].starts_with(c)) {
        i += 2;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    let mut hcount = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        hcount = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            hcount = b[i] - b'0';
            i += 1;
        }
    }
    let mut charge: i32 = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign = if b[i] == b'+' { 1 } else { -1 };
        let sym = b[i];
        i += 1;
        let mut magnitude = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            let s = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            magnitude = body[s..i].parse::<i32>().unwrap_or(0);
        } else {
            while i < b.len() && b[i] == sym {
                magnitude += 1;
                i += 1;
            }
        }
        charge = sign * magnitude;
    }
    if i < b.len() && b[i] == b':' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i != b.len() {
        return Err(MolError::MalformedBracket(pos));
    }
    Ok(BracketAtom {
        element,
        aromatic,
        hcount,
        charge: charge.clamp(-2, 2) as i8,
    })
}

fn bracket_symbol(s: &str) -> Option<(Element, bool, usize)> {
    let b = s.as_bytes();
    let first = *b.first()?;
    if first.is_ascii_lowercase() {
        // aromatic bracket atoms: se, as, then single letters
        for two in ["se", "as"] {
            if s.starts_with(two) {
                let up = format!("{}{}", two[..1].to_ascii_uppercase(), &two[1..]);
                return Element::from_symbol(&up).map(|e| (e, true, 2));
            }
        }
        let up = (first as char).to_ascii_uppercase().to_string();
        return matches!(first, b'b' | b'c' | b'n' | b'o' | b'p' | b's')
            .then(|| Element::from_symbol(&up).map(|e| (e, true, 1)))
            .flatten();
    }
    if !first.is_ascii_uppercase() {
        return None;
    }
    if let Some(&second) = b.get(1) {
        if second.is_ascii_lowercase() {
            if let Some(e) = Element::from_symbol(&s[..2]) {
                return Some((e, false, 2));
            }
        }
    }
    Element::from_symbol(&s[..1]).map(|e| (e, false, 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_cover_input() {
        let text = "C[C@@H](Cl)c1ccc%12cc1Br";
        let lx = lex(text).unwrap();
        let joined: String = lx.iter().map(|l| &text[l.start..l.end]).collect();
        assert_eq!(joined, text);
    }

    #[test]
    fn bracket_atoms() {
        let lx = lex("[NH4+]").unwrap();
        assert_eq!(lx.len(), 1);
        match &lx[0].kind {
            LexKind::Bracket(a) => {
                assert_eq!(a.element, Element::N);
                assert_eq!(a.hcount, 4);
                assert_eq!(a.charge, 1);
            }
            k => panic!("{k:?}"),
        }
        match &lex("[13CH3-]").unwrap()[0].kind {
            LexKind::Bracket(a) => assert_eq!((a.hcount, a.charge), (3, -1)),
            k => panic!("{k:?}"),
        }
        match &lex("[Fe+++]").unwrap()[0].kind {
            LexKind::Bracket(a) => assert_eq!(a.charge, 2),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(lex("CX"), Err(MolError::UnknownElement(_))));
        assert!(matches!(lex("C?"), Err(MolError::UnexpectedCharacter { .. })));
        assert!(matches!(lex("[Xy]"), Err(MolError::UnknownElement(_))));
        assert!(matches!(lex("[NH4"), Err(MolError::UnclosedBracket(_))));
        assert!(matches!(lex("é"), Err(MolError::NonAscii)));
    }
}
