use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{QCPair, QDPair, PAD, UNK};
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Injective token ↔ id map with PAD = 0 and UNK = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenIndex {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenIndex {
    /// Keeps tokens seen at least `min_freq` times, most frequent first with lexicographic
    /// tie-breaks, capped at `max_size` entries including PAD and UNK.
    pub fn build<'a, I>(tokens: I, min_freq: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_freq < 1 {
            return Err(Error::InvalidInput("min_freq must be >= 1".into()));
        }
        if max_size < 2 {
            return Err(Error::InvalidInput("max_size must be >= 2".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            if t != PAD_TOKEN && t != UNK_TOKEN {
                *counts.entry(t).or_default() += 1;
            }
        }
        if counts.is_empty() {
            warn!("building vocabulary from an empty corpus");
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let list = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .map(str::to_string)
            .collect();
        Self::from_tokens(list)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::InvalidInput("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to ids, truncating to the first `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        tokens.iter().take(max_len).map(|t| self.id(t)).collect()
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

impl TryFrom<Vec<String>> for TokenIndex {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<TokenIndex> for Vec<String> {
    fn from(v: TokenIndex) -> Self {
        v.tokens
    }
}

/// NL and code vocabularies. QC questions and QD questions share the NL side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub nl: TokenIndex,
    pub code: TokenIndex,
}

impl Vocabulary {
    pub fn build(qc: &[QCPair], qd: &[QDPair], min_freq: usize, max_size: usize) -> Result<Self> {
        let nl_tokens = qc
            .iter()
            .flat_map(|p| p.question.iter())
            .chain(qd.iter().flat_map(|p| p.question_a.iter().chain(p.question_b.iter())))
            .map(String::as_str);
        let code_tokens = qc.iter().flat_map(|p| p.code.iter()).map(String::as_str);
        Ok(Self {
            nl: TokenIndex::build(nl_tokens, min_freq, max_size)?,
            code: TokenIndex::build(code_tokens, min_freq, max_size)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn listing(v: &TokenIndex) -> Vec<&str> {
        v.tokens().iter().map(String::as_str).collect()
    }

    #[test]
    fn frequency_filter() {
        let v = TokenIndex::build(["a", "b", "a", "a"], 2, 100).unwrap();
        assert_eq!(listing(&v), ["<pad>", "<unk>", "a"]);
        assert_eq!(v.id("a"), 2);
    }

    #[test]
    fn lexicographic_tie_break_under_size_cap() {
        let v = TokenIndex::build(["b", "a", "b", "a"], 1, 3).unwrap();
        assert_eq!(listing(&v), ["<pad>", "<unk>", "a"]);
    }

    #[test]
    fn empty_corpus_keeps_specials() {
        let v = TokenIndex::build(std::iter::empty(), 1, 10).unwrap();
        assert_eq!(listing(&v), ["<pad>", "<unk>"]);
    }

    #[test]
    fn bad_parameters() {
        assert!(TokenIndex::build(["a"], 0, 10).is_err());
        assert!(TokenIndex::build(["a"], 1, 1).is_err());
    }

    #[test]
    fn oov_maps_to_unk_and_encode_truncates() {
        let v = TokenIndex::build(["x", "y", "y"], 1, 10).unwrap();
        let toks: Vec<String> = ["y", "zzz", "x", "x"].iter().map(|s| s.to_string()).collect();
        assert_eq!(v.encode(&toks, 3), vec![2, UNK, 3]);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }

    #[test]
    fn literal_special_tokens_do_not_collide() {
        let v = TokenIndex::build(["<pad>", "<unk>", "q"], 1, 10).unwrap();
        assert_eq!(listing(&v), ["<pad>", "<unk>", "q"]);
    }

    #[test]
    fn hash_tracks_order() {
        let a = TokenIndex::from_tokens(vec!["<pad>".into(), "<unk>".into(), "a".into(), "b".into()]).unwrap();
        let b = TokenIndex::from_tokens(vec!["<pad>".into(), "<unk>".into(), "b".into(), "a".into()]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }
}
