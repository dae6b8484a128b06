use super::policy::Policy;
use super::seq::{LengthKind, LengthMode, TokenSeq};
use super::vocab::TokenId;
use crate::error::{input_err, Result};

/// Flat gradient with the same layout as `Policy::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn cosine(&self, other: &GradVector) -> f64 {
        self.dot(other) / (self.norm() * other.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Number of response tokens that are scored under `length`.
pub fn scored_len(response: &[TokenId], eos_id: TokenId, length: LengthMode) -> usize {
    match length.mode {
        LengthKind::Variable => response.iter().position(|&t| t == eos_id).map_or(response.len(), |p| p + 1),
        LengthKind::Fixed => response.len(),
    }
}

/// Checks `response` against the length mode.
///
/// Variable mode: at most `l_max` tokens, eos only as the last token.
/// Fixed mode: exactly `l_max` tokens. Pad is never allowed.
pub fn validate_response(policy: &Policy, response: &TokenSeq, length: LengthMode) -> Result<()> {
    length.validate()?;
    let ids = &response.ids;
    if let Some(&t) = ids.iter().find(|&&t| t >= policy.vocab_size()) {
        return Err(input_err!("token id {t} out of range for vocab of size {}", policy.vocab_size()));
    }
    if ids.contains(&policy.pad_id()) {
        return Err(input_err!("pad token inside a response"));
    }
    match length.mode {
        LengthKind::Variable => {
            if ids.is_empty() || ids.len() > length.l_max {
                return Err(input_err!("variable-mode response length {} not in 1..={}", ids.len(), length.l_max));
            }
            if let Some(p) = ids.iter().position(|&t| t == policy.eos_id()) {
                if p + 1 != ids.len() {
                    return Err(input_err!("variable-mode response continues after eos"));
                }
            } else if ids.len() != length.l_max {
                return Err(input_err!("variable-mode response without eos must have l_max tokens"));
            }
        }
        LengthKind::Fixed => {
            if ids.len() != length.l_max {
                return Err(input_err!("fixed-mode response length {} != l_max {}", ids.len(), length.l_max));
            }
        }
    }
    Ok(())
}

/// Log-probability of `response` given `prompt`.
///
/// Variable mode sums the per-step terms up to and including the first eos;
/// a response truncated at `l_max` gets no terminal correction. Fixed mode sums
/// all `l_max` terms with eos treated as an ordinary token.
pub fn sequence_logprob(policy: &Policy, prompt: &TokenSeq, response: &TokenSeq, length: LengthMode) -> Result<f64> {
    validate_response(policy, response, length)?;
    let mut history = prompt.ids.clone();
    let mut total = 0.0;
    for &tok in &response.ids {
        let dist = policy.next_token_dist(&history)?;
        total += dist[tok].ln();
        history.push(tok);
    }
    Ok(total)
}

/// Adds `scale * grad sequence_logprob` into `grad` without materializing a fresh vector.
pub fn accumulate_logprob_grad(
    policy: &Policy,
    prompt: &TokenSeq,
    response: &TokenSeq,
    length: LengthMode,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    validate_response(policy, response, length)?;
    if grad.len() != policy.params().len() {
        return Err(input_err!("gradient buffer length {} != params {}", grad.len(), policy.params().len()));
    }
    if scale == 0.0 {
        return Ok(());
    }
    let mut history = prompt.ids.clone();
    for &tok in &response.ids {
        let window = policy.window(&history);
        policy.accumulate_step_grad(&window, tok, scale, grad);
        history.push(tok);
    }
    Ok(())
}

pub fn sequence_logprob_grad(
    policy: &Policy,
    prompt: &TokenSeq,
    response: &TokenSeq,
    length: LengthMode,
) -> Result<GradVector> {
    let mut g = GradVector::zeros(policy.params().len());
    accumulate_logprob_grad(policy, prompt, response, length, 1.0, &mut g.values)?;
    Ok(g)
}
