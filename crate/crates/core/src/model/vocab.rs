use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Whitespace-token vocabulary with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keep the `max_size - 2` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build<'t>(corpus: impl IntoIterator<Item = &'t str>, max_size: usize) -> Result<Self> {
        if max_size < 2 {
            return Err(Error::invalid(format!(
                "vocabulary max_size must be >= 2, got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut n_texts = 0;
        for text in corpus {
            n_texts += 1;
            for tok in text.split_whitespace() {
                if tok != PAD_TOKEN && tok != UNK_TOKEN {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if n_texts == 0 {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::invalid("vocabulary must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-split, map OOV to `<unk>`, then truncate or pad to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = text
            .split_whitespace()
            .take(max_len)
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect();
        ids.resize(max_len, PAD_ID);
        ids
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_most_frequent() {
        let v = Vocabulary::build(["a a b"], 3).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a"]);
    }

    #[test]
    fn frequency_ties_are_lexicographic() {
        let v = Vocabulary::build(["z y x z y x w"], 4).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "x", "y"]);
    }

    #[test]
    fn reserved_only() {
        let v = Vocabulary::build(["a b c"], 2).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn deterministic() {
        let corpus = ["the cat sat", "the dog sat", "a cat ran"];
        assert_eq!(
            Vocabulary::build(corpus, 10).unwrap(),
            Vocabulary::build(corpus, 10).unwrap()
        );
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Vocabulary::build(std::iter::empty(), 5).is_err());
        assert!(Vocabulary::build(["a"], 1).is_err());
    }

    #[test]
    fn encode_pads_and_maps_unknowns() {
        let v = Vocabulary::build(["a"], 3).unwrap();
        let a = v.id("a").unwrap();
        assert_eq!(v.encode("a z", 4), vec![a, UNK_ID, PAD_ID, PAD_ID]);
        assert_eq!(v.encode("", 3), vec![PAD_ID; 3]);
        assert_eq!(v.encode("a a a a a a", 4).len(), 4);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build(["b a c a"], 10).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }
}
