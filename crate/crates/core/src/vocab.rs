use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
pub const RECOG: TokenId = 2;
pub const TRANS: TokenId = 3;
pub const DELAY: TokenId = 4;
pub const NUM_SPECIALS: usize = 5;

pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<eos>", "<recog>", "<trans>", "<delay>"];

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Bijective token ↔ id map. Ids `0..5` are the fixed special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// A vocabulary holding the specials followed by `content` in order.
    pub fn new<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SPECIAL_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(content.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its full token list (specials included).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*name) {
                return Err(Error::Input(format!("vocabulary id {i} must be {name}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid token {t:?}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Input(format!("duplicate token {t}")));
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

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::Input(format!("unknown token {t:?}"))))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
