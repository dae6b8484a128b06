//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sharpen::model::{Arch, Backend, LengthMode, Policy, Vocab};
use sharpen::objective::{build_regime, Beta, RegimeConfig, RegimeName};
use sharpen::tasks::{Instance, Split, TaskFamily, TaskSpec, VerbosityProfile};
use sharpen::trainflow::{derive_seed, EvalConfig, OptimConfig};
use sharpen::{Error, Result};

/// Seed streams carved out of the global seed; rollouts never reach `step == u64::MAX`.
const CORPUS_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const PRETRAIN_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySpec {
    Tabular { context: usize },
    Neural { context: usize, embed: usize, hidden: usize },
}

impl PolicySpec {
    pub fn backend(&self) -> Backend {
        match self {
            PolicySpec::Tabular { .. } => Backend::Tabular,
            PolicySpec::Neural { .. } => Backend::Neural,
        }
    }

    pub fn arch(&self, vocab: usize) -> Arch {
        match *self {
            PolicySpec::Tabular { context } => Arch::Tabular { context, vocab },
            PolicySpec::Neural { context, embed, hidden } => Arch::Neural { context, embed, hidden, vocab },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub name: RegimeName,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "no_kl")]
    pub beta: Beta,
    pub group_size: usize,
}

fn one() -> f64 {
    1.0
}

fn no_kl() -> Beta {
    Beta(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub corpus_size: usize,
    pub noise_rate: f64,
    pub verbosity: VerbosityProfile,
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
    All,
}

impl SplitChoice {
    pub fn instances(self, spec: &TaskSpec) -> Vec<Instance> {
        match self {
            SplitChoice::Train => spec.split_instances(Split::Train),
            SplitChoice::Validation => spec.split_instances(Split::Validation),
            SplitChoice::Test => spec.split_instances(Split::Test),
            SplitChoice::All => spec.all_instances(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: SplitChoice,
    pub validation: SplitChoice,
    pub eval: SplitChoice,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: SplitChoice::Train, validation: SplitChoice::Validation, eval: SplitChoice::Test }
    }
}

/// A fully resolved experiment: every default filled in, every seed fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskFamily,
    pub length: LengthMode,
    pub policy: PolicySpec,
    pub regime: RegimeSpec,
    pub optim: OptimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub splits: SplitSpec,
    #[serde(default)]
    pub eval: Vec<EvalConfig>,
    pub run_dir: PathBuf,
    pub global_seed: u64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Overlays a user optim section on the backend defaults.
fn merge_optim(backend: Backend, user: Option<Value>, section: &str, group_size: usize, seed: u64) -> Result<Value> {
    let mut merged = match serde_json::to_value(OptimConfig { group_size, ..OptimConfig::toy_default(backend) })? {
        Value::Object(m) => m,
        _ => unreachable!("OptimConfig serializes to an object"),
    };
    match user {
        None => {}
        Some(Value::Object(m)) => {
            if m.contains_key("global_seed") {
                return Err(invalid(format!(
                    "{section}.global_seed is not configurable; set the top-level global_seed"
                )));
            }
            for (k, v) in m {
                if !merged.contains_key(&k) {
                    return Err(invalid(format!("unknown field {section}.{k}")));
                }
                merged.insert(k, v);
            }
        }
        Some(_) => return Err(invalid(format!("{section} must be an object"))),
    }
    merged.insert("global_seed".into(), seed.into());
    Ok(Value::Object(merged))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses a config, filling optimizer defaults, and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut root =
            match serde_json::from_str::<Value>(text).map_err(|e| invalid(format!("config is not JSON: {e}")))? {
                Value::Object(m) => m,
                _ => return Err(invalid("config must be a JSON object")),
            };
        let policy: PolicySpec =
            serde_json::from_value(root.get("policy").cloned().ok_or_else(|| invalid("missing field policy"))?)
                .map_err(|e| invalid(format!("policy: {e}")))?;
        let regime: RegimeSpec =
            serde_json::from_value(root.get("regime").cloned().ok_or_else(|| invalid("missing field regime"))?)
                .map_err(|e| invalid(format!("regime: {e}")))?;
        let global_seed = root
            .get("global_seed")
            .and_then(Value::as_u64)
            .ok_or_else(|| invalid("global_seed must be a nonnegative integer"))?;
        let backend = policy.backend();

        let optim = merge_optim(backend, root.remove("optim"), "optim", regime.group_size, global_seed)?;
        root.insert("optim".into(), optim);
        match root.remove("pretrain") {
            None | Some(Value::Null) => {}
            Some(Value::Object(mut pre)) => {
                let seed = derive_seed(global_seed, u64::MAX, PRETRAIN_STREAM, PRETRAIN_STREAM);
                let o = merge_optim(backend, pre.remove("optim"), "pretrain.optim", regime.group_size, seed)?;
                pre.insert("optim".into(), o);
                root.insert("pretrain".into(), Value::Object(pre));
            }
            Some(_) => return Err(invalid("pretrain must be an object")),
        }

        let cfg: ExperimentConfig = serde_json::from_value(Value::Object(root)).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The config as written to `run_dir/config.json`; parses back to `self`.
    pub fn to_resolved_json(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.pointer_mut("/optim").and_then(Value::as_object_mut) {
            o.remove("global_seed");
        }
        if let Some(o) = v.pointer_mut("/pretrain/optim").and_then(Value::as_object_mut) {
            o.remove("global_seed");
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.task_spec()?;
        self.length.validate()?;
        if self.length.l_max < spec.min_l_max() {
            return Err(invalid(format!(
                "length.l_max {} is below the {} tokens the task's answers need",
                self.length.l_max,
                spec.min_l_max()
            )));
        }
        self.regime_config()?;
        self.optim.validate().map_err(|e| invalid(format!("optim: {e}")))?;
        if self.optim.group_size != self.regime.group_size {
            return Err(invalid(format!(
                "optim.group_size {} differs from regime.group_size {}",
                self.optim.group_size, self.regime.group_size
            )));
        }
        Policy::init(self.policy.arch(spec.vocab().size()), spec.vocab(), 0)
            .map_err(|e| invalid(format!("policy: {e}")))?;
        match (&self.pretrain, &self.base_checkpoint) {
            (None, None) => return Err(invalid("either pretrain or base_checkpoint must be given")),
            (Some(p), _) => {
                p.optim.validate().map_err(|e| invalid(format!("pretrain.optim: {e}")))?;
                spec.generate_pretrain_corpus(1, p.noise_rate, &p.verbosity, self.length.l_max, 0)
                    .map_err(|e| invalid(format!("pretrain: {e}")))?;
                if p.corpus_size == 0 {
                    return Err(invalid("pretrain.corpus_size must be at least 1"));
                }
            }
            _ => {}
        }
        for (i, e) in self.eval.iter().enumerate() {
            e.validate().map_err(|err| invalid(format!("eval[{i}]: {err}")))?;
        }
        for (name, choice) in
            [("train", self.splits.train), ("validation", self.splits.validation), ("eval", self.splits.eval)]
        {
            if choice.instances(&spec).is_empty() {
                return Err(invalid(format!("splits.{name} selects no instances for this task")));
            }
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        TaskSpec::new(self.task).map_err(|e| invalid(format!("task: {e}")))
    }

    pub fn regime_config(&self) -> Result<RegimeConfig> {
        let r = self.regime;
        build_regime(r.name, r.alpha, r.beta, self.length, r.group_size).map_err(|e| invalid(format!("regime: {e}")))
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Ok(self.task_spec()?.vocab().clone())
    }

    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.global_seed, u64::MAX, CORPUS_STREAM, CORPUS_STREAM)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.global_seed, u64::MAX, INIT_STREAM, INIT_STREAM)
    }

    /// Evaluation settings, defaulting to exact ancestral pass@16 at temperature 1.
    pub fn eval_configs(&self) -> Vec<EvalConfig> {
        if self.eval.is_empty() {
            let decode = sharpen::decode::DecodeConfig::ancestral(
                1.0,
                LengthMode::variable(self.length.l_max),
                self.global_seed,
            );
            vec![EvalConfig { decode, k: 16, exact: true }]
        } else {
            self.eval.clone()
        }
    }
}
