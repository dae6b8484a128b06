//! Exact ground truth by exhaustive enumeration of the response space.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::model::{
    accumulate_logprob_grad, sequence_logprob, GradVector, LengthKind, LengthMode, Policy, TokenId, TokenSeq, Vocab,
};
use crate::objective::{surrogate_value, RegimeConfig, RewardKind};
use crate::tasks::{Instance, TaskSpec};

/// Largest enumerable space.
pub const SPACE_GUARD: f64 = 1e6;

/// Committees drawn for the Monte Carlo maj@k estimate.
pub const MAJ_COMMITTEES: usize = 10_000;

const MAJ_SEED: u64 = 0x6d61_6a5f_6b00;

/// Every response the policy can emit under a length mode, in length-lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpace {
    pub sequences: Vec<Vec<TokenId>>,
    pub vocab: Vocab,
    pub length: LengthMode,
    /// `dfs_slot[i]` is the sorted index of the i-th leaf of the prefix tree walk.
    dfs_slot: Vec<usize>,
}

impl ResponseSpace {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn l_max(&self) -> usize {
        self.length.l_max
    }

    pub fn position(&self, seq: &[TokenId]) -> Option<usize> {
        self.sequences.binary_search_by(|s| length_lex(s, seq)).ok()
    }

    /// Closed-form size of a space.
    pub fn expected_count(vocab: &Vocab, length: LengthMode) -> f64 {
        let interior = (vocab.size() - 2) as f64;
        match length.mode {
            LengthKind::Variable => {
                (0..length.l_max).map(|t| interior.powi(t as i32)).sum::<f64>() + interior.powi(length.l_max as i32)
            }
            LengthKind::Fixed => (interior + 1.0).powi(length.l_max as i32),
        }
    }
}

fn length_lex(a: &[TokenId], b: &[TokenId]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// Enumerates the variable-mode space.
pub fn enumerate_space(vocab: &Vocab, l_max: usize) -> Result<ResponseSpace> {
    enumerate_space_mode(vocab, LengthMode::variable(l_max))
}

/// Enumerates the space for either length mode. Fixed mode lets every
/// emittable token, `<eos>` included, fill all `l_max` positions.
pub fn enumerate_space_mode(vocab: &Vocab, length: LengthMode) -> Result<ResponseSpace> {
    length.validate()?;
    let width = match length.mode {
        LengthKind::Variable => vocab.size() - 2,
        LengthKind::Fixed => vocab.size() - 1,
    };
    let leaves = (width as f64).powi(length.l_max as i32);
    if leaves > SPACE_GUARD {
        return Err(Error::Size(format!(
            "response space too large to enumerate: {width}^{} > {SPACE_GUARD}",
            length.l_max
        )));
    }
    let mut dfs = Vec::new();
    let mut prefix = Vec::new();
    collect_leaves(vocab, length, &mut prefix, &mut dfs);
    let mut order: Vec<usize> = (0..dfs.len()).collect();
    order.sort_by(|&a, &b| length_lex(&dfs[a], &dfs[b]));
    let mut dfs_slot = vec![0; dfs.len()];
    for (slot, &leaf) in order.iter().enumerate() {
        dfs_slot[leaf] = slot;
    }
    let sequences = order.iter().map(|&i| std::mem::take(&mut dfs[i])).collect();
    Ok(ResponseSpace { sequences, vocab: vocab.clone(), length, dfs_slot })
}

fn collect_leaves(vocab: &Vocab, length: LengthMode, prefix: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
    for t in vocab.emittable_ids() {
        prefix.push(t);
        if (length.is_variable() && t == vocab.eos_id()) || prefix.len() == length.l_max {
            out.push(prefix.clone());
        } else {
            collect_leaves(vocab, length, prefix, out);
        }
        prefix.pop();
    }
}

/// Log-probabilities of every sequence, indexed like `space.sequences`.
///
/// Each prefix is scored once. `temperature` applies per step when given.
fn space_logprobs(
    policy: &Policy,
    prompt: &TokenSeq,
    space: &ResponseSpace,
    temperature: Option<f64>,
) -> Result<Vec<f64>> {
    if policy.vocab_size() != space.vocab.size() || policy.eos_id() != space.vocab.eos_id() {
        return Err(input_err!("policy vocabulary does not match the response space"));
    }
    let mut out = vec![0.0; space.len()];
    let mut leaf = 0usize;
    let emittable = space.vocab.emittable_ids();
    let mut history = prompt.ids.clone();
    let base = history.len();
    fn rec(
        policy: &Policy,
        space: &ResponseSpace,
        emittable: &[TokenId],
        temperature: Option<f64>,
        history: &mut Vec<TokenId>,
        base: usize,
        lp: f64,
        leaf: &mut usize,
        out: &mut [f64],
    ) -> Result<()> {
        let dist = match temperature {
            Some(t) => policy.next_token_dist_tempered(history, t)?,
            None => policy.next_token_dist(history)?,
        };
        let eos = space.vocab.eos_id();
        for &t in emittable {
            let next = lp + dist[t].ln();
            history.push(t);
            if (space.length.is_variable() && t == eos) || history.len() - base == space.length.l_max {
                out[space.dfs_slot[*leaf]] = next;
                *leaf += 1;
            } else {
                rec(policy, space, emittable, temperature, history, base, next, leaf, out)?;
            }
            history.pop();
        }
        Ok(())
    }
    rec(policy, space, &emittable, temperature, &mut history, base, 0.0, &mut leaf, &mut out)?;
    if leaf != space.len() {
        return Err(Error::Internal(format!("walked {leaf} leaves, space has {}", space.len())));
    }
    Ok(out)
}

/// Exact distribution over a response space.
#[derive(Debug, Clone)]
pub struct OracleDist {
    pub space: Arc<ResponseSpace>,
    pub probs: Vec<f64>,
}

impl OracleDist {
    fn checked(space: Arc<ResponseSpace>, probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Internal(format!("distribution does not normalize: sum {total}")));
        }
        Ok(Self { space, probs })
    }

    pub fn prob_of(&self, seq: &[TokenId]) -> Option<f64> {
        self.space.position(seq).map(|i| self.probs[i])
    }

    /// Index of the most probable sequence; ties go to the lexicographically smaller one.
    pub fn argmax_index(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            let better = match self.probs[i].partial_cmp(&self.probs[best]) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => self.space.sequences[i] < self.space.sequences[best],
                _ => false,
            };
            if better {
                best = i;
            }
        }
        best
    }

    /// Mean number of tokens up to and including the first `<eos>`.
    pub fn mean_length(&self) -> f64 {
        let eos = self.space.vocab.eos_id();
        self.space.sequences.iter().zip(&self.probs).map(|(s, p)| p * truncated_len(s, eos) as f64).sum()
    }
}

fn truncated_len(seq: &[TokenId], eos: TokenId) -> usize {
    seq.iter().position(|&t| t == eos).map_or(seq.len(), |i| i + 1)
}

/// `probs = exp(sequence_logprob)` for every sequence of the space.
pub fn exact_policy_dist(policy: &Policy, prompt: &TokenSeq, space: &Arc<ResponseSpace>) -> Result<OracleDist> {
    let lps = space_logprobs(policy, prompt, space, None)?;
    OracleDist::checked(space.clone(), lps.into_iter().map(f64::exp).collect())
}

/// Distribution of ancestral sampling with every step tempered by `temperature`.
pub fn exact_token_tempered_dist(
    policy: &Policy,
    prompt: &TokenSeq,
    space: &Arc<ResponseSpace>,
    temperature: f64,
) -> Result<OracleDist> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(input_err!("temperature must be positive and finite, got {temperature}"));
    }
    let lps = space_logprobs(policy, prompt, space, Some(temperature))?;
    OracleDist::checked(space.clone(), lps.into_iter().map(f64::exp).collect())
}

/// Task reward of every sequence of the space.
pub fn space_rewards(space: &ResponseSpace, spec: &TaskSpec, instance: &Instance) -> Vec<f64> {
    space.sequences.iter().map(|s| spec.verify(s, instance)).collect()
}

fn normalize_log_weights(space: Arc<ResponseSpace>, logw: Vec<f64>) -> Result<OracleDist> {
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Internal("target has no finite weight".into()));
    }
    let w: Vec<f64> = logw.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = w.iter().sum();
    OracleDist::checked(space, w.into_iter().map(|x| x / z).collect())
}

/// Closed-form optimum of a KL-regularized regime.
///
/// tilted: `base^alpha * exp(r / beta)`; tempered: `base^alpha`. Both normalized over the space.
pub fn exact_target_dist(
    base: &OracleDist,
    regime: &RegimeConfig,
    spec: &TaskSpec,
    instance: &Instance,
) -> Result<OracleDist> {
    let rewards = match regime.reward_kind {
        RewardKind::Task => space_rewards(&base.space, spec, instance),
        _ => vec![0.0; base.space.len()],
    };
    exact_target_dist_with_rewards(base, regime, &rewards)
}

/// Same as [`exact_target_dist`] with an explicit task reward per sequence.
pub fn exact_target_dist_with_rewards(base: &OracleDist, regime: &RegimeConfig, rewards: &[f64]) -> Result<OracleDist> {
    if regime.beta.0 == 0.0 {
        return Err(Error::Domain(format!(
            "{} has beta = 0: its optimum is a point-mass set, use exact_metrics argmax",
            regime.name
        )));
    }
    if rewards.len() != base.space.len() {
        return Err(input_err!("{} rewards for a space of {}", rewards.len(), base.space.len()));
    }
    let inv_beta =
        if regime.beta.is_infinite() || regime.reward_kind != RewardKind::Task { 0.0 } else { 1.0 / regime.beta.0 };
    let logw = base.probs.iter().zip(rewards).map(|(p, r)| regime.alpha * p.ln() + r * inv_beta).collect();
    normalize_log_weights(base.space.clone(), logw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Tv,
    Kl,
}

pub fn dist_distance(p: &OracleDist, q: &OracleDist, metric: Divergence) -> Result<f64> {
    if !Arc::ptr_eq(&p.space, &q.space) && p.space.sequences != q.space.sequences {
        return Err(input_err!("distributions live on different response spaces"));
    }
    Ok(match metric {
        Divergence::Tv => 0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        Divergence::Kl => {
            let mut total = 0.0;
            for (&a, &b) in p.probs.iter().zip(&q.probs) {
                if a == 0.0 {
                    continue;
                }
                if b == 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += a * (a / b).ln();
            }
            total
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMetrics {
    pub expected_reward: f64,
    pub pass_at_k: Vec<(usize, f64)>,
    pub maj_at_k: Vec<(usize, f64)>,
    pub argmax: Vec<TokenId>,
    pub argmax_prob: f64,
    pub mean_length: f64,
}

impl ExactMetrics {
    pub fn pass_at(&self, k: usize) -> Option<f64> {
        self.pass_at_k.iter().find(|(kk, _)| *kk == k).map(|x| x.1)
    }

    pub fn maj_at(&self, k: usize) -> Option<f64> {
        self.maj_at_k.iter().find(|(kk, _)| *kk == k).map(|x| x.1)
    }
}

/// `1 - (1 - p)^k`.
pub fn pass_at_k(p: f64, k: usize) -> f64 {
    1.0 - (1.0 - p).powi(k as i32)
}

/// Exact reward and pass@k, Monte Carlo maj@k, and the modal sequence.
pub fn exact_metrics(
    dist: &OracleDist,
    spec: &TaskSpec,
    instance: &Instance,
    k_list: &[usize],
) -> Result<ExactMetrics> {
    if k_list.iter().any(|&k| k == 0) {
        return Err(input_err!("k must be at least 1"));
    }
    let rewards = space_rewards(&dist.space, spec, instance);
    let p: f64 = dist.probs.iter().zip(&rewards).map(|(a, r)| a * r).sum::<f64>().clamp(0.0, 1.0);

    // Answer classes in lexicographic order so the smallest id wins plurality ties.
    let answers: Vec<Option<Vec<TokenId>>> = dist.space.sequences.iter().map(|s| spec.extract_answer(s)).collect();
    let mut classes: Vec<Vec<TokenId>> = answers.iter().flatten().cloned().collect();
    classes.sort();
    classes.dedup();
    let class_of: Vec<Option<usize>> =
        answers.iter().map(|a| a.as_ref().map(|a| classes.binary_search(a).expect("class interned"))).collect();
    let gold_class = classes.binary_search(&instance.gold).ok();

    let mut cdf = Vec::with_capacity(dist.probs.len());
    let mut acc = 0.0;
    for &x in &dist.probs {
        acc += x;
        cdf.push(acc);
    }
    let mut maj = Vec::with_capacity(k_list.len());
    for (j, &k) in k_list.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(MAJ_SEED ^ (j as u64) << 32 ^ k as u64);
        let mut counts = vec![0usize; classes.len()];
        let mut wins = 0usize;
        for _ in 0..MAJ_COMMITTEES {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..k {
                let u: f64 = rng.gen::<f64>() * acc;
                let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                if let Some(c) = class_of[i] {
                    counts[c] += 1;
                }
            }
            let mut winner = None;
            let mut top = 0;
            for (c, &n) in counts.iter().enumerate() {
                if n > top {
                    top = n;
                    winner = Some(c);
                }
            }
            if winner.is_some() && winner == gold_class {
                wins += 1;
            }
        }
        maj.push((k, wins as f64 / MAJ_COMMITTEES as f64));
    }

    let best = dist.argmax_index();
    Ok(ExactMetrics {
        expected_reward: p,
        pass_at_k: k_list.iter().map(|&k| (k, pass_at_k(p, k))).collect(),
        maj_at_k: maj,
        argmax: dist.space.sequences[best].clone(),
        argmax_prob: dist.probs[best],
        mean_length: dist.mean_length(),
    })
}

/// Per-sequence ingredients of the exact objective.
struct ExactTerms {
    logprob_theta: Vec<f64>,
    surrogate: Vec<f64>,
}

fn exact_terms(
    policy: &Policy,
    base: &Policy,
    regime: &RegimeConfig,
    spec: &TaskSpec,
    instance: &Instance,
    space: &ResponseSpace,
) -> Result<ExactTerms> {
    if space.length != regime.length {
        return Err(input_err!("response space length mode differs from the regime's"));
    }
    let logprob_theta = space_logprobs(policy, &instance.prompt, space, None)?;
    let logprob_base = space_logprobs(base, &instance.prompt, space, None)?;
    let rewards = space_rewards(space, spec, instance);
    let surrogate =
        (0..space.len()).map(|i| surrogate_value(regime, rewards[i], logprob_theta[i], logprob_base[i])).collect();
    Ok(ExactTerms { logprob_theta, surrogate })
}

/// The regime's objective `E_pi[r~]` evaluated exactly.
pub fn exact_objective(
    policy: &Policy,
    base: &Policy,
    regime: &RegimeConfig,
    spec: &TaskSpec,
    instance: &Instance,
    space: &ResponseSpace,
) -> Result<f64> {
    let t = exact_terms(policy, base, regime, spec, instance, space)?;
    Ok(t.logprob_theta.iter().zip(&t.surrogate).map(|(lp, r)| lp.exp() * r).sum())
}

/// `sum_y pi(y) (r~(y) - E[r~]) grad log pi(y)` over the whole space.
pub fn exact_gradient(
    policy: &Policy,
    base: &Policy,
    regime: &RegimeConfig,
    spec: &TaskSpec,
    instance: &Instance,
    space: &ResponseSpace,
) -> Result<GradVector> {
    let t = exact_terms(policy, base, regime, spec, instance, space)?;
    let probs: Vec<f64> = t.logprob_theta.iter().map(|x| x.exp()).collect();
    let mean: f64 = probs.iter().zip(&t.surrogate).map(|(p, r)| p * r).sum();
    let mut grad = GradVector::zeros(policy.params().len());
    for (i, seq) in space.sequences.iter().enumerate() {
        let scale = probs[i] * (t.surrogate[i] - mean);
        if scale == 0.0 {
            continue;
        }
        let response = TokenSeq::response(seq.clone());
        accumulate_logprob_grad(policy, &instance.prompt, &response, space.length, scale, &mut grad.values)?;
    }
    Ok(grad)
}

/// CSV dump: `sequence,probability,reward`, tokens joined by commas inside quotes.
pub fn write_dist_csv<W: Write>(mut out: W, dist: &OracleDist, rewards: &[f64]) -> Result<()> {
    writeln!(out, "sequence,probability,reward")?;
    for (i, seq) in dist.space.sequences.iter().enumerate() {
        writeln!(out, "\"{}\",{:e},{}", dist.space.vocab.render(seq), dist.probs[i], rewards[i])?;
    }
    Ok(())
}

/// Log-probability of one sequence, for spot checks against the enumerated table.
pub fn sequence_prob(policy: &Policy, prompt: &TokenSeq, seq: &[TokenId], length: LengthMode) -> Result<f64> {
    sequence_logprob(policy, prompt, &TokenSeq::response(seq.to_vec()), length).map(f64::exp)
}
