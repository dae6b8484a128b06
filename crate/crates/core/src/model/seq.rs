use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{config_err, input_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqKind {
    Prompt,
    Response,
}

/// A prompt or a response over a [`Vocab`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub kind: SeqKind,
}

impl TokenSeq {
    pub fn prompt(ids: Vec<TokenId>) -> Self {
        Self { ids, kind: SeqKind::Prompt }
    }

    pub fn response(ids: Vec<TokenId>) -> Self {
        Self { ids, kind: SeqKind::Response }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Checks ids against the vocab; prompts may not contain padding.
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for &t in &self.ids {
            if t >= vocab.size() {
                return Err(input_err!("token id {t} out of range for vocab of size {}", vocab.size()));
            }
            if self.kind == SeqKind::Prompt && t == vocab.pad_id() {
                return Err(input_err!("pad token inside a prompt"));
            }
        }
        Ok(())
    }
}

/// Prefix of `response` up to and including its first eos; identity when there is none.
pub fn truncate_at_eos(response: &TokenSeq, eos_id: TokenId) -> TokenSeq {
    let end = response.ids.iter().position(|&t| t == eos_id).map_or(response.ids.len(), |p| p + 1);
    TokenSeq { ids: response.ids[..end].to_vec(), kind: response.kind }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthKind {
    /// Eos is absorbing: generation and scoring stop at the first eos.
    Variable,
    /// Every response has exactly `l_max` tokens; eos is an ordinary token.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthMode {
    pub mode: LengthKind,
    pub l_max: usize,
}

impl LengthMode {
    pub fn variable(l_max: usize) -> Self {
        Self { mode: LengthKind::Variable, l_max }
    }

    pub fn fixed(l_max: usize) -> Self {
        Self { mode: LengthKind::Fixed, l_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_max == 0 {
            return Err(config_err!("l_max must be at least 1"));
        }
        Ok(())
    }

    pub fn is_variable(&self) -> bool {
        self.mode == LengthKind::Variable
    }
}
