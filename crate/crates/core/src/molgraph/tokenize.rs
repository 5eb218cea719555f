use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{lex, MolError};

pub const UNK_TOKEN: &str = "<unk>";

const DEFAULT_TOKENS: &[&str] = &[
    "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "c", "n", "o", "s", "p", "b", "(", ")",
    "-", "=", "#", ":", "/", "\\", "1", "2", "3", "4", "5", "6", "7", "8", "9", "[nH]", "[NH4+]",
    "[N+]", "[O-]", "[NH+]", "[NH2+]", "[NH3+]", "[S-]", "[C@H]", "[C@@H]", "[C@]", "[C@@]",
    "[n+]", "[Na+]", "[K+]", "[Cl-]", "[Br-]", "[Si]", "[Se]", "[se]", "%10", "%11", "%12",
];

/// Token vocabulary; id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    pub max_len: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_TOKENS.iter().copied(), 128)
    }
}

impl Vocab {
    pub fn new<'a>(tokens: impl IntoIterator<Item = &'a str>, max_len: usize) -> Self {
        let mut v = Vocab {
            tokens: vec![UNK_TOKEN.to_string()],
            max_len,
            index: HashMap::new(),
        };
        for t in tokens {
            if t != UNK_TOKEN && !v.tokens.iter().any(|x| x == t) {
                v.tokens.push(t.to_string());
            }
        }
        v.reindex();
        v
    }

    /// Default tokens plus every token seen in `corpus`, in first-seen order.
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a str>, max_len: usize) -> Self {
        let mut v = Self::new(DEFAULT_TOKENS.iter().copied(), max_len);
        for smi in corpus {
            if let Ok(lx) = lex(smi) {
                for l in lx {
                    let t = &smi[l.start..l.end];
                    if !v.index.contains_key(t) {
                        v.index.insert(t.to_string(), v.tokens.len());
                        v.tokens.push(t.to_string());
                    }
                }
            }
        }
        v
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK_TOKEN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub raw: Vec<String>,
    pub length: usize,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn join(&self) -> String {
        self.raw.concat()
    }
}

pub fn tokenize_smiles(text: &str, vocab: &Vocab) -> Result<TokenSequence, MolError> {
    let lexemes = lex(text)?;
    let truncated = lexemes.len() > vocab.max_len;
    let raw: Vec<String> = lexemes
        .iter()
        .take(vocab.max_len)
        .map(|l| text[l.start..l.end].to_string())
        .collect();
    let tokens = raw.iter().map(|t| vocab.id(t)).collect();
    Ok(TokenSequence {
        tokens,
        length: raw.len(),
        raw,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(s: &str) -> Vec<String> {
        tokenize_smiles(s, &Vocab::default()).unwrap().raw
    }

    #[test]
    fn token_rules() {
        assert_eq!(raw("C(=O)O"), ["C", "(", "=", "O", ")", "O"]);
        assert_eq!(raw("CCl"), ["C", "Cl"]);
        assert_eq!(raw("[NH4+]"), ["[NH4+]"]);
        assert_eq!(raw("c1cc%12ccc1"), ["c", "1", "c", "c", "%12", "c", "c", "c", "1"]);
    }

    #[test]
    fn unknown_tokens_map_to_zero() {
        let seq = tokenize_smiles("C[Fe]C", &Vocab::default()).unwrap();
        assert_eq!(seq.tokens[1], 0);
        assert_eq!(seq.join(), "C[Fe]C");
    }

    #[test]
    fn truncation_recorded() {
        let v = Vocab::new(["C"], 3);
        let seq = tokenize_smiles("CCCCC", &v).unwrap();
        assert!(seq.truncated);
        assert_eq!(seq.length, 3);
        assert_eq!(seq.tokens, vec![1, 1, 1]);
        assert_eq!(tokenize_smiles("", &v).unwrap_err(), MolError::EmptyInput);
    }
}
