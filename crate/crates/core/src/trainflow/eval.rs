//! Evaluation of a policy on a list of instances.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode, DecodeConfig, DecodeMethod};
use crate::error::{config_err, Result};
use crate::model::{LengthMode, Policy, TokenId};
use crate::oracle::{enumerate_space_mode, exact_metrics, exact_policy_dist, exact_token_tempered_dist, ResponseSpace};
use crate::tasks::{Instance, TaskSpec};

use super::seed::derive_seed;

const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub decode: DecodeConfig,
    pub k: usize,
    /// Use exact enumeration instead of sampling when the decoder allows it.
    #[serde(default)]
    pub exact: bool,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        if self.k == 0 {
            return Err(config_err!("evaluation k must be at least 1"));
        }
        if self.exact && matches!(self.decode.method, DecodeMethod::Power { .. }) {
            return Err(config_err!("exact evaluation supports ancestral and beam decoding only"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub pass1: f64,
    pub pass_k: f64,
    pub maj_k: f64,
    pub k: usize,
    pub mean_len: f64,
    pub instances: usize,
}

/// Tokens up to and including the first `<eos>`.
pub fn truncated_len(response: &[TokenId], eos: TokenId) -> usize {
    response.iter().position(|&t| t == eos).map_or(response.len(), |i| i + 1)
}

/// Plurality answer of a committee, ties to the lexicographically smaller answer.
pub fn plurality(answers: &[Option<Vec<TokenId>>]) -> Option<Vec<TokenId>> {
    let mut valid: Vec<&Vec<TokenId>> = answers.iter().flatten().collect();
    valid.sort();
    let mut best: Option<(&Vec<TokenId>, usize)> = None;
    let mut i = 0;
    while i < valid.len() {
        let j = valid[i..].iter().position(|a| *a != valid[i]).map_or(valid.len(), |n| i + n);
        if best.map_or(true, |(_, c)| j - i > c) {
            best = Some((valid[i], j - i));
        }
        i = j;
    }
    best.map(|(a, _)| a.clone())
}

/// pass@1, pass@k, maj@k and mean response length averaged over `instances`.
///
/// Responses are always read up to their first `<eos>`, whatever length mode
/// the policy was trained in. Sampled mode draws `k` responses per instance;
/// exact mode enumerates the variable-mode space.
pub fn evaluate(
    policy: &Policy,
    base: Option<&Policy>,
    spec: &TaskSpec,
    instances: &[Instance],
    cfg: &EvalConfig,
) -> Result<EvalMetrics> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(config_err!("evaluation needs at least one instance"));
    }
    let eos = spec.vocab().eos_id();
    let per: Vec<(f64, f64, f64, f64)> = if cfg.exact {
        exact_rows(policy, base, spec, instances, cfg)?
    } else {
        instances
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                let mut correct = 0usize;
                let mut len = 0usize;
                let mut answers = Vec::with_capacity(cfg.k);
                for j in 0..cfg.k {
                    let seed = derive_seed(cfg.decode.seed, i as u64, j as u64, EVAL_STREAM);
                    let s = decode(policy, base, &inst.prompt, &cfg.decode.with_seed(seed))?;
                    correct += spec.verify(&s.response.ids, inst) as usize;
                    len += truncated_len(&s.response.ids, eos);
                    answers.push(spec.extract_answer(&s.response.ids));
                }
                let maj = plurality(&answers).is_some_and(|a| a == inst.gold);
                Ok((
                    correct as f64 / cfg.k as f64,
                    (correct > 0) as u8 as f64,
                    maj as u8 as f64,
                    len as f64 / cfg.k as f64,
                ))
            })
            .collect::<Result<_>>()?
    };
    let n = per.len() as f64;
    let mean = |f: fn(&(f64, f64, f64, f64)) -> f64| per.iter().map(f).sum::<f64>() / n;
    Ok(EvalMetrics {
        pass1: mean(|r| r.0),
        pass_k: mean(|r| r.1),
        maj_k: mean(|r| r.2),
        k: cfg.k,
        mean_len: mean(|r| r.3),
        instances: per.len(),
    })
}

fn exact_rows(
    policy: &Policy,
    base: Option<&Policy>,
    spec: &TaskSpec,
    instances: &[Instance],
    cfg: &EvalConfig,
) -> Result<Vec<(f64, f64, f64, f64)>> {
    match cfg.decode.method {
        DecodeMethod::Ancestral { temperature } => {
            let space = Arc::new(enumerate_space_mode(spec.vocab(), LengthMode::variable(cfg.decode.length.l_max))?);
            instances
                .par_iter()
                .map(|inst| {
                    let dist = if temperature == 1.0 {
                        exact_policy_dist(policy, &inst.prompt, &space)?
                    } else {
                        exact_token_tempered_dist(policy, &inst.prompt, &space, temperature)?
                    };
                    let m = exact_metrics(&dist, spec, inst, &[cfg.k])?;
                    Ok((m.expected_reward, m.pass_at_k[0].1, m.maj_at_k[0].1, m.mean_length))
                })
                .collect()
        }
        DecodeMethod::Beam { .. } => {
            let eos = spec.vocab().eos_id();
            instances
                .par_iter()
                .map(|inst| {
                    let s = decode(policy, base, &inst.prompt, &cfg.decode)?;
                    let r = spec.verify(&s.response.ids, inst);
                    Ok((r, r, r, truncated_len(&s.response.ids, eos) as f64))
                })
                .collect()
        }
        DecodeMethod::Power { .. } => Err(config_err!("exact evaluation does not cover power sampling")),
    }
}

/// Whether the variable-mode space for `l_max` is small enough to enumerate.
pub fn enumerable(spec: &TaskSpec, l_max: usize) -> Option<Arc<ResponseSpace>> {
    enumerate_space_mode(spec.vocab(), LengthMode::variable(l_max)).ok().map(Arc::new)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plurality_ties_and_abstentions() {
        assert_eq!(plurality(&[None, None]), None);
        assert_eq!(plurality(&[Some(vec![2]), Some(vec![1])]), Some(vec![1]));
        assert_eq!(plurality(&[Some(vec![2]), None, Some(vec![2]), Some(vec![1])]), Some(vec![2]));
        assert_eq!(plurality(&[Some(vec![]), Some(vec![0])]), Some(vec![]));
    }

    #[test]
    fn truncation() {
        assert_eq!(truncated_len(&[0, 1, 5, 0], 5), 3);
        assert_eq!(truncated_len(&[0, 1], 5), 2);
    }
}
