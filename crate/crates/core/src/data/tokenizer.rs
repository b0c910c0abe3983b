//! Character-level tokenizer over an alphabet file (one symbol per line; the
//! 1-based line number is the token id). Id 0 is reserved for unknown symbols.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    ids: BTreeMap<char, u32>,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (i, &c) in symbols.iter().enumerate() {
            if ids.insert(c, i as u32 + 1).is_some() {
                return Err(Error::Config(format!("duplicate alphabet symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols, ids })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => symbols.push(c),
                (None, _) if i + 1 == text.split('\n').count() => {}
                _ => {
                    return Err(Error::Schema {
                        line: i + 1,
                        message: format!("alphabet lines hold exactly one symbol, got {line:?}"),
                    })
                }
            }
        }
        Self::new(symbols)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_file_contents(&self) -> String {
        self.symbols.iter().map(|c| format!("{c}\n")).collect()
    }

    /// Vocabulary size including the unknown id.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(text
            .chars()
            .map(|c| self.ids.get(&c).copied().unwrap_or(UNK_ID))
            .collect())
    }

    /// Inverse of [`tokenize`](Self::tokenize) for known ids; unknown ids become `None`.
    pub fn decode(&self, ids: &[u32]) -> Vec<Option<char>> {
        ids.iter()
            .map(|&id| {
                (id != UNK_ID)
                    .then(|| self.symbols.get(id as usize - 1).copied())
                    .flatten()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ids_follow_line_numbers() {
        let a = Alphabet::parse("a\nb\n").unwrap();
        assert_eq!(a.tokenize("ab").unwrap(), vec![1, 2]);
        assert_eq!(a.vocab_size(), 3);
    }

    #[test]
    fn unknown_symbols_map_to_unk() {
        let a = Alphabet::parse("a\nb\n").unwrap();
        assert_eq!(a.tokenize("a✓b").unwrap(), vec![1, UNK_ID, 2]);
    }

    #[test]
    fn blank_text_is_rejected() {
        let a = Alphabet::parse("a\n").unwrap();
        assert!(matches!(a.tokenize("   "), Err(Error::EmptyText)));
    }

    #[test]
    fn malformed_alphabets_are_rejected() {
        assert!(Alphabet::parse("ab\n").is_err());
        assert!(Alphabet::parse("a\n\nb\n").is_err());
        assert!(Alphabet::parse("a\na\n").is_err());
    }

    #[test]
    fn space_is_a_valid_symbol() {
        let a = Alphabet::parse("a\n \nb").unwrap();
        assert_eq!(a.tokenize("a b").unwrap(), vec![1, 2, 3]);
        assert_eq!(Alphabet::parse(&a.to_file_contents()).unwrap(), a);
    }

    proptest! {
        #[test]
        fn tokenize_is_injective_on_known_strings(s in "[a-h]{1,24}") {
            let a = Alphabet::parse("a\nb\nc\nd\ne\nf\ng\nh\n").unwrap();
            let ids = a.tokenize(&s).unwrap();
            let back: String = a.decode(&ids).into_iter().map(|c| c.unwrap()).collect();
            prop_assert_eq!(back, s);
        }
    }
}
