use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<cls>", "<sep>"];

/// Lowercased whitespace tokenisation.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token ↔ id mapping with the four special tokens at ids 0–3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials followed by the most frequent tokens; equal counts are
    /// ordered lexicographically. `max_size` includes the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked
                .into_iter()
                .take(max_size.saturating_sub(SPECIALS.len()))
                .map(|(t, _)| t),
        );
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).map(|t| self.id(&t)).collect()
    }
}

/// Builds a vocabulary over every source and translation sentence.
pub fn build_vocab<'a>(
    pairs: impl IntoIterator<Item = &'a super::SentencePair>,
    max_size: usize,
) -> Vocab {
    Vocab::build(
        pairs
            .into_iter()
            .flat_map(|p| [p.src.as_str(), p.mt.as_str()]),
        max_size,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(["a a b"], 6);
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(SEP), Some("<sep>"));
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);

        let tie = Vocab::build(["zeta alpha"], 10);
        assert!(tie.id("alpha") < tie.id("zeta"));
    }

    #[test]
    fn unknown_and_cased_tokens() {
        let v = Vocab::build(["Hello world"], 5);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("hello"), 4);
        assert_eq!(v.encode("HELLO world"), vec![4, UNK]);
        assert_eq!(v.id("absent"), UNK);
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let v = Vocab::build(["x y y"], 8);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back.id("y"), v.id("y"));
    }
}
