//! Word-level tokenizer with reserved special ids.
//!
//! Text is lowercased and split on whitespace; every punctuation character
//! becomes its own token.

use std::collections::HashMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub const DEFAULT_MAX_VOCAB: usize = 8192;
pub const DEFAULT_MAX_LEN: usize = 512;

/// Token ids, normally framed as `[bos, ..., eos]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// Ids as table indices.
    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|&t| t as usize).collect()
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSequence(ids)
    }
}

/// Lowercases and splits into word and punctuation tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Bijection between token strings and dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Keeps the `max_size - 4` most frequent tokens, ties broken
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if max_size < 5 {
            return Err(Error::Config(format!("vocabulary max size must be >= 5, got {max_size}")));
        }
        if corpus.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in normalize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED.len());
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[bos, tokens..., eos]`, keeping the earliest content when longer than `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let max_len = max_len.max(2);
        let mut ids = Vec::with_capacity(max_len.min(64));
        ids.push(BOS);
        ids.extend(
            normalize(text)
                .iter()
                .take(max_len - 2)
                .map(|t| self.id(t).unwrap_or(UNK)),
        );
        ids.push(EOS);
        TokenSequence(ids)
    }

    /// Space-joined tokens with pad/bos/eos dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or_else(|| {
                Error::Data(format!("token id {id} out of range for vocabulary of {}", self.len()))
            })?;
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            words.push(tok);
        }
        Ok(words.join(" "))
    }

    /// One token per line, line `i` holding id `i`.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Data("vocabulary must start with <pad>, <bos>, <eos>, <unk>".into()));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(&["a a b"], 100).unwrap();
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        let v = Vocab::build(&["b a"], 100).unwrap();
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        assert_eq!(v.id("a"), Some(4));
    }

    #[test]
    fn capacity_keeps_top_tokens() {
        let v = Vocab::build(&["c c c b b a"], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("c"), Some(4));
        assert_eq!(v.id("b"), None);
        assert!(matches!(Vocab::build(&["a"], 4), Err(Error::Config(_))));
        assert!(Vocab::build::<&str>(&[], 10).is_err());
    }

    #[test]
    fn empty_text_encodes_to_frame() {
        let v = Vocab::build(&["x"], 10).unwrap();
        assert_eq!(v.encode("", 512).ids(), &[BOS, EOS]);
        assert_eq!(v.decode(&[BOS, EOS]).unwrap(), "");
    }

    #[test]
    fn truncation_keeps_earliest_tokens() {
        let words: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = Vocab::build(&[text.as_str()], 1000).unwrap();
        let seq = v.encode(&text, 512);
        assert_eq!(seq.len(), 512);
        assert_eq!(seq[0], BOS);
        assert_eq!(seq[511], EOS);
        for i in 0..510 {
            assert_eq!(v.token(seq[i + 1]).unwrap(), words[i]);
        }
    }

    #[test]
    fn decode_examples() {
        let v = Vocab::build(&["hello world"], 10).unwrap();
        let (h, w) = (v.id("hello").unwrap(), v.id("world").unwrap());
        assert_eq!(v.decode(&[BOS, h, w, EOS]).unwrap(), "hello world");
        assert_eq!(v.decode(&[BOS, h, EOS, PAD, PAD]).unwrap(), "hello");
        assert!(v.decode(&[BOS, 99]).is_err());
    }

    #[test]
    fn punctuation_splits() {
        assert_eq!(normalize("Fry the Chicken, then SERVE."), ["fry", "the", "chicken", ",", "then", "serve", "."]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::build(&["the cat sat on the mat ."], 64).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("<pad>\n<bos>\n<eos>\n<unk>\n"));
        assert_eq!(Vocab::from_text(&text).unwrap(), v);
        assert!(Vocab::from_text("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn encode_framing_and_round_trip(words in prop::collection::vec("[a-zA-Z]{1,6}|[,.!?]", 0..40), max_len in 2usize..30) {
            let text = words.join(" ");
            let v = Vocab::build(&[text.as_str(), "seed"], 10_000).unwrap();
            let seq = v.encode(&text, max_len);
            prop_assert!(seq.len() <= max_len);
            prop_assert_eq!(seq[0], BOS);
            prop_assert_eq!(seq.iter().filter(|&&t| t == EOS).count(), 1);
            prop_assert_eq!(*seq.last().unwrap(), EOS);
            let full = v.encode(&text, 10_000);
            prop_assert_eq!(v.decode(&full).unwrap(), normalize(&text).join(" "));
        }
    }
}
