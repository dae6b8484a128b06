//! Regime configuration, surrogate rewards, leave-one-out advantages and the
//! score-function gradient estimator.
//!
//! All four regimes optimize
//!
//! ```text
//! E_{y ~ pi}[ r(y) ] - beta * KL(pi || base^alpha / Z)
//! ```
//!
//! through the per-trajectory surrogate `r + beta * (alpha * log base(y) - log pi(y))`,
//! whose score-function expectation is exactly the gradient of the objective.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decode::{extend_response, Sample};
use crate::error::{config_err, Error, Result};
use crate::model::{accumulate_logprob_grad, scored_len, sequence_logprob, GradVector, LengthMode, Policy};
use crate::tasks::{Instance, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    TaskRl,
    Tilted,
    DistSharpen,
    Tempered,
}

impl RegimeName {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeName::TaskRl => "task_rl",
            RegimeName::Tilted => "tilted",
            RegimeName::DistSharpen => "dist_sharpen",
            RegimeName::Tempered => "tempered",
        }
    }
}

impl fmt::Display for RegimeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RegimeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task_rl" => Ok(RegimeName::TaskRl),
            "tilted" => Ok(RegimeName::Tilted),
            "dist_sharpen" => Ok(RegimeName::DistSharpen),
            "tempered" => Ok(RegimeName::Tempered),
            other => Err(config_err!("unknown regime {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Task,
    BaseLogprob,
    None,
}

/// KL coefficient; `+inf` is written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Beta(pub f64);

impl Beta {
    pub const INFINITE: Beta = Beta(f64::INFINITY);

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Beta(x)),
            Raw::Text(t) if t == "inf" => Ok(Beta::INFINITE),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("beta must be a number or \"inf\", got {t:?}"))),
        }
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub name: RegimeName,
    pub reward_kind: RewardKind,
    pub alpha: f64,
    pub beta: Beta,
    pub length: LengthMode,
    pub group_size: usize,
}

impl RegimeConfig {
    /// Re-checks the name/reward/beta consistency, e.g. after deserializing.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = build_regime(self.name, self.alpha, self.beta, self.length, self.group_size)?;
        if rebuilt.reward_kind != self.reward_kind {
            return Err(config_err!(
                "regime {} requires reward_kind {:?}, got {:?}",
                self.name,
                rebuilt.reward_kind,
                self.reward_kind
            ));
        }
        Ok(())
    }

    pub fn has_kl(&self) -> bool {
        self.beta.0 > 0.0
    }
}

/// Validated configuration for one of the four regimes.
///
/// | name           | reward         | beta      |
/// |----------------|----------------|-----------|
/// | `task_rl`      | task           | 0         |
/// | `tilted`       | task           | > 0       |
/// | `dist_sharpen` | log base       | 0         |
/// | `tempered`     | none           | > 0, finite |
pub fn build_regime(
    name: RegimeName,
    alpha: f64,
    beta: Beta,
    length: LengthMode,
    group_size: usize,
) -> Result<RegimeConfig> {
    length.validate()?;
    if group_size < 2 {
        return Err(config_err!("group_size must be at least 2, got {group_size}"));
    }
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(config_err!("alpha must be >= 1, got {alpha}"));
    }
    if beta.0.is_nan() || beta.0 < 0.0 {
        return Err(config_err!("beta must be nonnegative, got {}", beta.0));
    }
    let reward_kind = match name {
        RegimeName::TaskRl | RegimeName::DistSharpen if beta.0 != 0.0 => {
            return Err(config_err!("{name} has no KL term: beta must be 0, got {beta}"));
        }
        RegimeName::Tilted | RegimeName::Tempered if beta.0 == 0.0 => {
            return Err(config_err!("{name} needs a KL term: beta must be > 0"));
        }
        RegimeName::Tempered if beta.is_infinite() => {
            return Err(config_err!("tempered needs a finite beta"));
        }
        RegimeName::TaskRl | RegimeName::Tilted => RewardKind::Task,
        RegimeName::DistSharpen => RewardKind::BaseLogprob,
        RegimeName::Tempered => RewardKind::None,
    };
    Ok(RegimeConfig { name, reward_kind, alpha, beta, length, group_size })
}

/// Surrogate reward of one trajectory.
///
/// With infinite beta the KL term dominates; the surrogate is then the
/// `beta -> inf` limit of `r~ / beta`, i.e. `alpha * log base - log pi`.
pub fn surrogate_value(regime: &RegimeConfig, task_reward: f64, logprob_theta: f64, logprob_base: f64) -> f64 {
    let kl_term = regime.alpha * logprob_base - logprob_theta;
    match regime.reward_kind {
        RewardKind::BaseLogprob => logprob_base,
        _ if regime.beta.is_infinite() => kl_term,
        RewardKind::Task if regime.beta.0 == 0.0 => task_reward,
        RewardKind::Task => task_reward + regime.beta.0 * kl_term,
        RewardKind::None => regime.beta.0 * kl_term,
    }
}

/// `k` rollouts for one prompt with everything the estimator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub instance: Instance,
    pub responses: Vec<Sample>,
    pub task_rewards: Vec<f64>,
    pub logprob_theta: Vec<f64>,
    pub logprob_base: Vec<f64>,
    pub surrogate: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Samples `regime.group_size` responses at temperature 1, one seed per rollout.
    pub fn sample(
        policy: &Policy,
        base: &Policy,
        spec: &TaskSpec,
        instance: &Instance,
        regime: &RegimeConfig,
        seeds: &[u64],
    ) -> Result<Self> {
        use rand::SeedableRng;
        if seeds.len() != regime.group_size {
            return Err(config_err!("need {} seeds, got {}", regime.group_size, seeds.len()));
        }
        let mut responses = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (ids, lp) = extend_response(policy, &instance.prompt, &[], Some(1.0), regime.length, &mut rng)?;
            let response = crate::model::TokenSeq::response(ids);
            let lb = sequence_logprob(base, &instance.prompt, &response, regime.length)?;
            responses.push(Sample { response, logprob_policy: lp, logprob_base: Some(lb) });
        }
        Self::from_samples(spec, instance.clone(), responses, regime)
    }

    /// Scores given samples; each must carry its base log-probability.
    pub fn from_samples(
        spec: &TaskSpec,
        instance: Instance,
        responses: Vec<Sample>,
        regime: &RegimeConfig,
    ) -> Result<Self> {
        let task_rewards: Vec<f64> = responses.iter().map(|s| spec.verify(&s.response.ids, &instance)).collect();
        let logprob_theta: Vec<f64> = responses.iter().map(|s| s.logprob_policy).collect();
        let logprob_base = responses
            .iter()
            .map(|s| s.logprob_base.ok_or_else(|| Error::Internal("missing base logprob".into())))
            .collect::<Result<Vec<f64>>>()?;
        let mut g = Self {
            instance,
            responses,
            task_rewards,
            logprob_theta,
            logprob_base,
            surrogate: Vec::new(),
            advantages: Vec::new(),
        };
        g.surrogate = surrogate_reward(&g, regime)?;
        g.advantages = rloo_advantages(&g.surrogate)?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

pub fn surrogate_reward(group: &RolloutGroup, regime: &RegimeConfig) -> Result<Vec<f64>> {
    let k = group.task_rewards.len();
    if group.logprob_theta.len() != k || group.logprob_base.len() != k {
        return Err(Error::Internal("rollout group arrays differ in length".into()));
    }
    Ok((0..k)
        .map(|i| surrogate_value(regime, group.task_rewards[i], group.logprob_theta[i], group.logprob_base[i]))
        .collect())
}

/// `A_i = r_i - mean_{j != i} r_j`.
pub fn rloo_advantages(surrogate: &[f64]) -> Result<Vec<f64>> {
    let k = surrogate.len();
    if k < 2 {
        return Err(config_err!("leave-one-out needs at least 2 rollouts, got {k}"));
    }
    let total: f64 = surrogate.iter().sum();
    let denom = (k - 1) as f64;
    Ok(surrogate.iter().map(|&r| r - (total - r) / denom).collect())
}

/// `(1 / (N k)) * sum_i A_i * grad log pi(y_i)` over every trajectory of every group.
pub fn estimate_gradient(policy: &Policy, groups: &[RolloutGroup], regime: &RegimeConfig) -> Result<GradVector> {
    if groups.is_empty() {
        return Err(config_err!("estimate_gradient needs at least one group"));
    }
    let mut grad = GradVector::zeros(policy.params().len());
    let total: usize = groups.iter().map(RolloutGroup::len).sum();
    let scale = 1.0 / total as f64;
    for g in groups {
        accumulate_group_gradient(policy, g, regime.length, scale, &mut grad.values)?;
    }
    Ok(grad)
}

/// Adds `scale * sum_i A_i grad log pi(y_i)` for one group.
pub fn accumulate_group_gradient(
    policy: &Policy,
    group: &RolloutGroup,
    length: LengthMode,
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    if group.advantages.len() != group.responses.len() {
        return Err(Error::Internal("advantages missing for rollout group".into()));
    }
    for (s, &a) in group.responses.iter().zip(&group.advantages) {
        let lp = sequence_logprob(policy, &group.instance.prompt, &s.response, length)?;
        if (lp - s.logprob_policy).abs() > 1e-9 {
            return Err(Error::Internal(format!(
                "rollout was not generated by this policy (logprob {} vs recorded {})",
                lp, s.logprob_policy
            )));
        }
        accumulate_logprob_grad(policy, &group.instance.prompt, &s.response, length, scale * a, grad)?;
    }
    Ok(())
}

/// Per-token entropy estimate: `-(sum log pi) / (sum scored tokens)` over all trajectories.
pub fn entropy_metric(groups: &[RolloutGroup], eos_id: crate::model::TokenId, length: LengthMode) -> f64 {
    let mut lp = 0.0;
    let mut tokens = 0usize;
    for g in groups {
        for s in &g.responses {
            lp += s.logprob_policy;
            tokens += scored_len(&s.response.ids, eos_id, length);
        }
    }
    if tokens == 0 {
        0.0
    } else {
        -lp / tokens as f64
    }
}
