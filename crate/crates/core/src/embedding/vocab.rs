use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// How residual text is split into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// One token per Unicode scalar value, whitespace dropped.
    #[default]
    Char,
    /// Whitespace-separated words.
    Word,
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    match mode {
        TokenizerMode::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        TokenizerMode::Word => text.split_whitespace().map(String::from).collect(),
    }
}

/// Token ids of one note, padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

/// Dense token → id map with `0 = pad` and `1 = unknown` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Assigns ids to every token seen at least `min_count` times, most
    /// frequent first with ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], mode: TokenizerMode, min_count: usize) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        if corpus.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref(), mode) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_count).collect();
        // BTreeMap iteration is already lexicographic, so a stable sort keeps the tie order.
        ranked.sort_by_key(|a| std::cmp::Reverse(a.1));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t).collect())
    }

    /// Builds a vocabulary whose corpus tokens take ids `2, 3, ...` in order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.into_iter().enumerate() {
            if tok.is_empty() || tok.contains('\n') {
                return Err(Error::config(format!("invalid vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), i + RESERVED).is_some() {
                return Err(Error::config(format!("duplicate vocabulary token {tok:?}")));
            }
            all.push(tok);
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus tokens in id order, without the reserved entries.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// Tokenizes `text` and pads or truncates at the tail to `len` ids.
    /// Text with no tokens becomes a single unknown token.
    pub fn encode(&self, text: &str, mode: TokenizerMode, len: usize) -> Result<TokenSequence> {
        if len == 0 {
            return Err(Error::config("sequence length must be at least 1"));
        }
        let mut ids: Vec<usize> = tokenize(text, mode).iter().take(len).map(|t| self.id(t)).collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        let true_length = ids.len();
        ids.resize(len, PAD_ID);
        Ok(TokenSequence { ids, true_length })
    }

    /// Ids of every token in `text`, without padding or truncation.
    pub fn encode_all(&self, text: &str, mode: TokenizerMode) -> Vec<usize> {
        tokenize(text, mode).iter().map(|t| self.id(t)).collect()
    }

    /// One corpus token per line; line `k` holds id `k + 2`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for tok in self.corpus_tokens() {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_lines()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(&text)
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_lines().as_bytes()))
    }
}
