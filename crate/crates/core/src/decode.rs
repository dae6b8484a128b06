//! Inference-time generation: ancestral sampling, beam search and power sampling.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::{masked_softmax, sequence_logprob, LengthKind, LengthMode, Policy, TokenId, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum DecodeMethod {
    Ancestral { temperature: f64 },
    Beam { beam_width: usize, length_penalty: f64 },
    Power { alpha: f64, block_count: usize, mcmc_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub method: DecodeMethod,
    pub length: LengthMode,
    pub seed: u64,
}

impl DecodeConfig {
    pub fn ancestral(temperature: f64, length: LengthMode, seed: u64) -> Self {
        Self { method: DecodeMethod::Ancestral { temperature }, length, seed }
    }

    /// Beam search with four beams and no length penalty.
    pub fn beam_default(length: LengthMode) -> Self {
        Self { method: DecodeMethod::Beam { beam_width: 4, length_penalty: 0.0 }, length, seed: 0 }
    }

    /// Power sampling with ten MCMC steps; `block_count` stands in for a block size of `l_max / 16`.
    pub fn power_default(alpha: f64, block_count: usize, length: LengthMode, seed: u64) -> Self {
        Self { method: DecodeMethod::Power { alpha, block_count, mcmc_steps: 10 }, length, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.length.validate()?;
        match self.method {
            DecodeMethod::Ancestral { temperature } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(config_err!("temperature must be positive and finite, got {temperature}"));
                }
            }
            DecodeMethod::Beam { beam_width, length_penalty } => {
                if beam_width == 0 {
                    return Err(config_err!("beam_width must be at least 1"));
                }
                if !length_penalty.is_finite() {
                    return Err(config_err!("length_penalty must be finite"));
                }
            }
            DecodeMethod::Power { alpha, block_count, .. } => {
                if !(alpha >= 1.0 && alpha.is_finite()) {
                    return Err(config_err!("alpha must be >= 1, got {alpha}"));
                }
                if block_count == 0 {
                    return Err(config_err!("block_count must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub response: TokenSeq,
    pub logprob_policy: f64,
    pub logprob_base: Option<f64>,
}

fn categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn argmax(probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Continues `prefix` until eos (variable mode) or `l_max` tokens.
///
/// Returns the new tokens and their untempered log-probability. Tokens are drawn
/// with logits divided by `temperature`; `None` decodes greedily.
pub fn extend_response(
    policy: &Policy,
    prompt: &TokenSeq,
    prefix: &[TokenId],
    temperature: Option<f64>,
    length: LengthMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TokenId>, f64)> {
    let mut history = prompt.ids.clone();
    history.extend_from_slice(prefix);
    let mut out = Vec::new();
    let mut logprob = 0.0;
    let eos = policy.eos_id();
    while prefix.len() + out.len() < length.l_max {
        let logits = policy.window_logits(&policy.window(&history));
        let probs = masked_softmax(&logits, policy.pad_id(), 1.0);
        let tok = match temperature {
            None => argmax(&probs),
            Some(t) if t == 1.0 => categorical(&probs, rng),
            Some(t) => categorical(&masked_softmax(&logits, policy.pad_id(), t), rng),
        };
        logprob += probs[tok].ln();
        out.push(tok);
        history.push(tok);
        if tok == eos && length.mode == LengthKind::Variable {
            break;
        }
    }
    Ok((out, logprob))
}

/// Token-by-token sampling; eos is absorbing in variable mode only.
pub fn ancestral_sample(policy: &Policy, prompt: &TokenSeq, cfg: &DecodeConfig) -> Result<Sample> {
    cfg.validate()?;
    let DecodeMethod::Ancestral { temperature } = cfg.method else {
        return Err(config_err!("ancestral_sample called with {:?}", cfg.method));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (ids, logprob) = extend_response(policy, prompt, &[], Some(temperature), cfg.length, &mut rng)?;
    Ok(Sample { response: TokenSeq::response(ids), logprob_policy: logprob, logprob_base: None })
}

/// Highest-probability token at every step, ties to the lowest token id.
pub fn greedy_decode(policy: &Policy, prompt: &TokenSeq, length: LengthMode) -> Result<Sample> {
    length.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (ids, logprob) = extend_response(policy, prompt, &[], None, length, &mut rng)?;
    Ok(Sample { response: TokenSeq::response(ids), logprob_policy: logprob, logprob_base: Some(logprob) })
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    logprob: f64,
}

fn beam_score(h: &Hypothesis, length_penalty: f64) -> f64 {
    if length_penalty == 0.0 {
        h.logprob
    } else {
        h.logprob / (h.tokens.len() as f64).powf(length_penalty)
    }
}

fn rank(a: &Hypothesis, b: &Hypothesis, length_penalty: f64) -> Ordering {
    beam_score(b, length_penalty).total_cmp(&beam_score(a, length_penalty)).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-synchronous beam search over complete responses of `base`.
///
/// Finished hypotheses (ended in eos, or reached `l_max`) leave the beam and are
/// scored by `logprob / len^length_penalty`. Ties go to the lexicographically
/// smaller token sequence.
pub fn beam_search(base: &Policy, prompt: &TokenSeq, cfg: &DecodeConfig) -> Result<Sample> {
    cfg.validate()?;
    let DecodeMethod::Beam { beam_width, length_penalty } = cfg.method else {
        return Err(config_err!("beam_search called with {:?}", cfg.method));
    };
    let eos = base.eos_id();
    let l_max = cfg.length.l_max;
    let mut live = vec![Hypothesis { tokens: Vec::new(), logprob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() {
        let mut candidates = Vec::with_capacity(live.len() * base.vocab_size());
        for h in &live {
            let mut history = prompt.ids.clone();
            history.extend_from_slice(&h.tokens);
            let probs = base.next_token_dist(&history)?;
            for (tok, &p) in probs.iter().enumerate() {
                if tok == base.pad_id() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis { tokens, logprob: h.logprob + p.ln() });
            }
        }
        candidates.sort_by(|a, b| rank(a, b, length_penalty));
        candidates.truncate(beam_width);
        live.clear();
        for c in candidates {
            let done = c.tokens.len() == l_max || (cfg.length.is_variable() && c.tokens.last() == Some(&eos));
            if done {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
    }
    let best = finished
        .into_iter()
        .min_by(|a, b| rank(a, b, length_penalty))
        .expect("beam search always finishes at least one hypothesis");
    Ok(Sample {
        response: TokenSeq::response(best.tokens),
        logprob_policy: best.logprob,
        logprob_base: Some(best.logprob),
    })
}

/// Metropolis-Hastings acceptance probability for a suffix proposal drawn from the base model.
pub fn mh_acceptance(old_suffix_logprob: f64, new_suffix_logprob: f64, alpha: f64) -> f64 {
    ((alpha - 1.0) * (new_suffix_logprob - old_suffix_logprob)).exp().min(1.0)
}

/// Candidate block starts: multiples of `ceil(l_max / block_count)` below `l_max`.
pub fn block_starts(l_max: usize, block_count: usize) -> Vec<usize> {
    let size = l_max.div_ceil(block_count).max(1);
    (0..l_max).step_by(size).collect()
}

/// Block-wise Metropolis-Hastings targeting `base^alpha`.
///
/// The chain starts from one ancestral sample. Each step picks a block start
/// uniformly from a grid fixed by `l_max`, regenerates the suffix from there with
/// the base model and accepts with [`mh_acceptance`]. A start at or beyond the
/// current response length leaves the state unchanged.
pub fn power_sample(base: &Policy, prompt: &TokenSeq, cfg: &DecodeConfig) -> Result<Sample> {
    cfg.validate()?;
    let DecodeMethod::Power { alpha, block_count, mcmc_steps } = cfg.method else {
        return Err(config_err!("power_sample called with {:?}", cfg.method));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut current, _) = extend_response(base, prompt, &[], Some(1.0), cfg.length, &mut rng)?;
    let starts = block_starts(cfg.length.l_max, block_count);
    for _ in 0..mcmc_steps {
        let start = starts[rng.gen_range(0..starts.len())];
        if start >= current.len() {
            continue;
        }
        let (proposal, new_lp) = extend_response(base, prompt, &current[..start], Some(1.0), cfg.length, &mut rng)?;
        let old_lp = suffix_logprob(base, prompt, &current, start)?;
        let accept = rng.gen::<f64>() < mh_acceptance(old_lp, new_lp, alpha);
        if accept {
            current.truncate(start);
            current.extend(proposal);
        }
    }
    let response = TokenSeq::response(current);
    let lp = sequence_logprob(base, prompt, &response, cfg.length)?;
    Ok(Sample { response, logprob_policy: lp, logprob_base: Some(lp) })
}

fn suffix_logprob(policy: &Policy, prompt: &TokenSeq, response: &[TokenId], start: usize) -> Result<f64> {
    let mut history = prompt.ids.clone();
    history.extend_from_slice(&response[..start]);
    let mut lp = 0.0;
    for &t in &response[start..] {
        lp += policy.next_token_dist(&history)?[t].ln();
        history.push(t);
    }
    Ok(lp)
}

/// Dispatches on `cfg.method`. `base` is scored alongside when given.
pub fn decode(policy: &Policy, base: Option<&Policy>, prompt: &TokenSeq, cfg: &DecodeConfig) -> Result<Sample> {
    let mut s = match cfg.method {
        DecodeMethod::Ancestral { .. } => ancestral_sample(policy, prompt, cfg)?,
        DecodeMethod::Beam { .. } => beam_search(policy, prompt, cfg)?,
        DecodeMethod::Power { .. } => power_sample(policy, prompt, cfg)?,
    };
    s.logprob_base = match base {
        Some(b) => Some(sequence_logprob(b, prompt, &s.response, cfg.length)?),
        None => s.logprob_base,
    };
    Ok(s)
}
