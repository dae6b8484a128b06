use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Index of a symbol in a [`Vocab`].
pub type TokenId = usize;

/// Finite token alphabet with a reserved end-of-sequence and padding symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    eos_id: TokenId,
    pad_id: TokenId,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, eos_id: TokenId, pad_id: TokenId) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(config_err!("vocab needs at least 3 symbols, got {}", tokens.len()));
        }
        if eos_id >= tokens.len() || pad_id >= tokens.len() {
            return Err(config_err!("eos_id/pad_id out of range for vocab of size {}", tokens.len()));
        }
        if eos_id == pad_id {
            return Err(config_err!("eos_id and pad_id must differ"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(config_err!("duplicate token symbol {t:?}"));
            }
        }
        Ok(Self { tokens, eos_id, pad_id })
    }

    /// Builds a vocab from plain symbols, appending `<eos>` and `<pad>`.
    pub fn with_specials<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = symbols.iter().map(|s| s.as_ref().to_string()).collect();
        let eos = tokens.len();
        tokens.push("<eos>".into());
        tokens.push("<pad>".into());
        Self::new(tokens, eos, eos + 1)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == symbol)
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Tokens that may appear before the end of a response (everything but eos and pad).
    pub fn interior_ids(&self) -> Vec<TokenId> {
        (0..self.size()).filter(|&t| t != self.eos_id && t != self.pad_id).collect()
    }

    /// Tokens a policy can emit (everything but pad).
    pub fn emittable_ids(&self) -> Vec<TokenId> {
        (0..self.size()).filter(|&t| t != self.pad_id).collect()
    }

    /// Renders ids as a comma-separated list of symbols.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.symbol(i).unwrap_or("?")).collect::<Vec<_>>().join(",")
    }

    pub fn parse(&self, text: &str) -> Result<Vec<TokenId>> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|s| {
                let s = s.trim();
                self.id(s).ok_or_else(|| config_err!("unknown symbol {s:?}"))
            })
            .collect()
    }
}
