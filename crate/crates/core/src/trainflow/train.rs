//! The on-policy RL loop, run directory layout and checkpoint selection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Error, Result};
use crate::model::{GradVector, LengthMode, Policy};
use crate::objective::{accumulate_group_gradient, entropy_metric, RegimeConfig, RolloutGroup};
use crate::oracle::{
    dist_distance, enumerate_space_mode, exact_policy_dist, exact_target_dist, space_rewards, Divergence, OracleDist,
    ResponseSpace,
};
use crate::tasks::{Instance, TaskFamily, TaskSpec};

use super::eval::truncated_len;
use super::optim::{AdamState, OptimConfig};
use super::seed::derive_seed;

pub const METRICS_HEADER: &str = "step,train_reward,entropy,mean_len,val_pass1,tv_oracle";
const STEPS_HEADER: &str = "step,train_reward";
const PROMPT_STREAM: u64 = u64::MAX;
const VALIDATION_SAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub train_reward: f64,
    pub entropy: f64,
    pub mean_len: f64,
    pub val_pass1: f64,
    pub tv_oracle: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let tv = self.tv_oracle.map(|x| x.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.step, self.train_reward, self.entropy, self.mean_len, self.val_pass1, tv)
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(input_err!("metrics row needs 6 fields: {line:?}"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| input_err!("bad number {s:?} in {line:?}"));
        Ok(Self {
            step: f[0].parse().map_err(|_| input_err!("bad step in {line:?}"))?,
            train_reward: num(f[1])?,
            entropy: num(f[2])?,
            mean_len: num(f[3])?,
            val_pass1: num(f[4])?,
            tv_oracle: if f[5].is_empty() { None } else { Some(num(f[5])?) },
        })
    }
}

/// Policy and optimizer moments at the start of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub policy: Policy,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub step: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: TaskFamily,
    pub regime: RegimeConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<CheckpointRef>,
    /// Mean surrogate reward of every step's rollouts.
    pub step_rewards: Vec<f64>,
    #[serde(skip)]
    pub run_dir: PathBuf,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(run_dir.join("record.json"))?;
        let mut r: RunRecord = serde_json::from_str(&text)?;
        r.run_dir = run_dir.to_path_buf();
        Ok(r)
    }

    pub fn checkpoint_path(&self, step: usize) -> Result<PathBuf> {
        self.checkpoints
            .iter()
            .find(|c| c.step == step)
            .map(|c| self.run_dir.join(&c.path))
            .ok_or_else(|| input_err!("no checkpoint for step {step}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Last,
    BestValidation,
}

/// Row chosen by a criterion: highest step, or best validation with ties to the earliest.
pub fn select_row(record: &RunRecord, criterion: Criterion) -> Result<&MetricsRow> {
    let first = record.rows.first().ok_or_else(|| input_err!("run record has no rows"))?;
    Ok(match criterion {
        Criterion::Last => record.rows.iter().max_by_key(|r| r.step).unwrap_or(first),
        Criterion::BestValidation => record.rows.iter().fold(first, |best, r| {
            if r.val_pass1 > best.val_pass1 || (r.val_pass1 == best.val_pass1 && r.step < best.step) {
                r
            } else {
                best
            }
        }),
    })
}

pub fn select_checkpoint(record: &RunRecord, criterion: Criterion) -> Result<Checkpoint> {
    let row = select_row(record, criterion)?;
    Checkpoint::load(&record.checkpoint_path(row.step)?)
}

/// Everything a training run needs besides the base policy.
#[derive(Debug, Clone)]
pub struct TrainJob<'a> {
    pub spec: &'a TaskSpec,
    pub regime: RegimeConfig,
    pub optim: OptimConfig,
    pub train: &'a [Instance],
    pub validation: &'a [Instance],
    pub run_dir: &'a Path,
    /// Written verbatim as config.json; a summary of the job when absent.
    pub resolved_config: Option<serde_json::Value>,
}

impl TrainJob<'_> {
    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        self.optim.validate()?;
        if self.optim.group_size != self.regime.group_size {
            return Err(config_err!(
                "group_size differs between optim ({}) and regime ({})",
                self.optim.group_size,
                self.regime.group_size
            ));
        }
        if self.train.is_empty() || self.validation.is_empty() {
            return Err(config_err!("training needs nonempty train and validation instance lists"));
        }
        let vocab = self.spec.vocab();
        for inst in self.train.iter().chain(self.validation) {
            inst.prompt.validate(vocab)?;
        }
        Ok(())
    }
}

/// Draws the prompts of one step and samples a group for each, in prompt order.
pub fn collect_groups(
    policy: &Policy,
    base: &Policy,
    spec: &TaskSpec,
    train: &[Instance],
    regime: &RegimeConfig,
    global_seed: u64,
    step: usize,
    batch_prompts: usize,
) -> Result<Vec<RolloutGroup>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, step as u64, PROMPT_STREAM, PROMPT_STREAM));
    let picks: Vec<usize> = (0..batch_prompts).map(|_| rng.gen_range(0..train.len())).collect();
    picks
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let seeds: Vec<u64> =
                (0..regime.group_size).map(|j| derive_seed(global_seed, step as u64, i as u64, j as u64)).collect();
            RolloutGroup::sample(policy, base, spec, &train[p], regime, &seeds)
        })
        .collect()
}

/// `estimate_gradient` with per-group partial sums reduced in group order.
pub fn batch_gradient(policy: &Policy, groups: &[RolloutGroup], regime: &RegimeConfig) -> Result<GradVector> {
    let n = policy.params().len();
    let total: usize = groups.iter().map(RolloutGroup::len).sum();
    let scale = 1.0 / total.max(1) as f64;
    let parts: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|g| {
            let mut part = vec![0.0; n];
            accumulate_group_gradient(policy, g, regime.length, scale, &mut part)?;
            Ok(part)
        })
        .collect::<Result<_>>()?;
    let mut grad = GradVector::zeros(n);
    for part in &parts {
        for (a, b) in grad.values.iter_mut().zip(part) {
            *a += b;
        }
    }
    Ok(grad)
}

/// Exact ground truth available on enumerable instances.
struct Oracles {
    eval_space: Arc<ResponseSpace>,
    targets: Option<(Arc<ResponseSpace>, Vec<OracleDist>)>,
}

impl Oracles {
    fn build(base: &Policy, job: &TrainJob) -> Option<Self> {
        let l_max = job.regime.length.l_max;
        let eval_space = Arc::new(enumerate_space_mode(job.spec.vocab(), LengthMode::variable(l_max)).ok()?);
        let targets = if job.regime.has_kl() {
            let space = if job.regime.length.is_variable() {
                eval_space.clone()
            } else {
                Arc::new(enumerate_space_mode(job.spec.vocab(), job.regime.length).ok()?)
            };
            job.validation
                .iter()
                .map(|inst| {
                    let b = exact_policy_dist(base, &inst.prompt, &space)?;
                    exact_target_dist(&b, &job.regime, job.spec, inst)
                })
                .collect::<Result<Vec<_>>>()
                .ok()
                .map(|t| (space, t))
        } else {
            None
        };
        Some(Self { eval_space, targets })
    }
}

fn validation_accuracy(policy: &Policy, job: &TrainJob, oracles: Option<&Oracles>, step: usize) -> Result<f64> {
    let per: Vec<f64> = match oracles {
        Some(o) => job
            .validation
            .par_iter()
            .map(|inst| {
                let d = exact_policy_dist(policy, &inst.prompt, &o.eval_space)?;
                let r = space_rewards(&o.eval_space, job.spec, inst);
                Ok(d.probs.iter().zip(&r).map(|(p, r)| p * r).sum())
            })
            .collect::<Result<_>>()?,
        None => {
            let length = LengthMode::variable(job.regime.length.l_max);
            job.validation
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let mut hits = 0.0;
                    for j in 0..VALIDATION_SAMPLES {
                        let seed = derive_seed(job.optim.global_seed, step as u64, i as u64, (1 << 32) + j as u64);
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let (ids, _) =
                            crate::decode::extend_response(policy, &inst.prompt, &[], Some(1.0), length, &mut rng)?;
                        hits += job.spec.verify(&ids, inst);
                    }
                    Ok(hits / VALIDATION_SAMPLES as f64)
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn oracle_tv(policy: &Policy, job: &TrainJob, oracles: Option<&Oracles>) -> Result<Option<f64>> {
    let Some((space, targets)) = oracles.and_then(|o| o.targets.as_ref()) else {
        return Ok(None);
    };
    let tvs: Vec<f64> = job
        .validation
        .par_iter()
        .zip(targets)
        .map(|(inst, t)| dist_distance(&exact_policy_dist(policy, &inst.prompt, space)?, t, Divergence::Tv))
        .collect::<Result<_>>()?;
    Ok(Some(tvs.iter().sum::<f64>() / tvs.len() as f64))
}

fn checkpoint_rel(step: usize) -> String {
    format!("checkpoints/step_{step}.json")
}

/// Trains from the base policy, writing the run directory from scratch.
pub fn train_regime(base: &Policy, job: &TrainJob) -> Result<RunRecord> {
    run(base, job, None)
}

/// Continues a run from the checkpoint taken at `step`.
///
/// Rows and logs at or after `step` are discarded and regenerated, so the
/// finished run matches an uninterrupted one exactly.
pub fn resume_regime(base: &Policy, job: &TrainJob, step: usize) -> Result<RunRecord> {
    run(base, job, Some(step))
}

fn read_rows<T>(
    path: &Path,
    header: &str,
    before: usize,
    parse: impl Fn(&str) -> Result<(usize, T)>,
) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(input_err!("{} has an unexpected header", path.display()));
    }
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let (step, row) = parse(line)?;
        if step < before {
            out.push(row);
        }
    }
    Ok(out)
}

fn rewrite<T>(path: &Path, header: &str, rows: &[T], fmt: impl Fn(&T) -> String) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&fmt(r));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(base: &Policy, job: &TrainJob, resume: Option<usize>) -> Result<RunRecord> {
    job.validate()?;
    let dir = job.run_dir;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let metrics_path = dir.join("metrics.csv");
    let steps_path = dir.join("steps.csv");
    let optim = job.optim;
    let regime = job.regime;

    let (start, mut policy, mut adam, mut rows, mut step_rewards) = match resume {
        None => {
            let config = match &job.resolved_config {
                Some(v) => v.clone(),
                None => serde_json::json!({ "task": job.spec.family(), "regime": regime, "optim": optim }),
            };
            fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
            fs::write(dir.join("base.json"), base.to_json()?)?;
            rewrite::<MetricsRow>(&metrics_path, METRICS_HEADER, &[], MetricsRow::to_csv)?;
            rewrite::<f64>(&steps_path, STEPS_HEADER, &[], |_| String::new())?;
            (0, base.clone(), AdamState::new(base.params().len()), Vec::new(), Vec::new())
        }
        Some(step) => {
            if step > optim.steps || step % optim.eval_every != 0 {
                return Err(config_err!("no checkpoint is taken at step {step}"));
            }
            let ck = Checkpoint::load(&dir.join(checkpoint_rel(step)))?;
            let rows = read_rows(&metrics_path, METRICS_HEADER, step, |l| {
                let r = MetricsRow::parse_csv(l)?;
                Ok((r.step, r))
            })?;
            let rewards = read_rows(&steps_path, STEPS_HEADER, step, |l| {
                let (s, r) = l.split_once(',').ok_or_else(|| input_err!("bad steps row {l:?}"))?;
                let s: usize = s.parse().map_err(|_| input_err!("bad step {s:?}"))?;
                let r: f64 = r.parse().map_err(|_| input_err!("bad reward {r:?}"))?;
                Ok((s, r))
            })?;
            rewrite(&metrics_path, METRICS_HEADER, &rows, MetricsRow::to_csv)?;
            let indexed: Vec<(usize, f64)> = rewards.iter().copied().enumerate().collect();
            rewrite(&steps_path, STEPS_HEADER, &indexed, |(s, r)| format!("{s},{r}"))?;
            (step, ck.policy, ck.optimizer, rows, rewards)
        }
    };

    let oracles = Oracles::build(base, job);
    let eos = job.spec.vocab().eos_id();
    let mut metrics_file = fs::OpenOptions::new().append(true).open(&metrics_path)?;
    let mut steps_file = fs::OpenOptions::new().append(true).open(&steps_path)?;

    for step in start..=optim.steps {
        let groups =
            collect_groups(&policy, base, job.spec, job.train, &regime, optim.global_seed, step, optim.batch_prompts)?;
        let count: usize = groups.iter().map(RolloutGroup::len).sum();
        let train_reward = groups.iter().flat_map(|g| &g.surrogate).sum::<f64>() / count as f64;
        step_rewards.push(train_reward);
        writeln!(steps_file, "{step},{train_reward}")?;

        if step % optim.eval_every == 0 {
            let mean_len = groups
                .iter()
                .flat_map(|g| &g.responses)
                .map(|s| truncated_len(&s.response.ids, eos) as f64)
                .sum::<f64>()
                / count as f64;
            let row = MetricsRow {
                step,
                train_reward,
                entropy: entropy_metric(&groups, eos, regime.length),
                mean_len,
                val_pass1: validation_accuracy(&policy, job, oracles.as_ref(), step)?,
                tv_oracle: oracle_tv(&policy, job, oracles.as_ref())?,
            };
            writeln!(metrics_file, "{}", row.to_csv())?;
            rows.push(row);
            Checkpoint { step, policy: policy.clone(), optimizer: adam.clone() }
                .save(&dir.join(checkpoint_rel(step)))?;
        }

        if step == optim.steps {
            break;
        }
        let grad = batch_gradient(&policy, &groups, &regime)?;
        let diverged = |what: &str, policy: Policy, optimizer: AdamState| -> Result<Error> {
            let path = ckpt_dir.join(format!("diverged_step_{step}.json"));
            Checkpoint { step, policy, optimizer }.save(&path)?;
            Ok(Error::Training(format!("{what} at step {step}; diagnostic checkpoint at {}", path.display())))
        };
        if !grad.is_finite() {
            return Err(diverged("non-finite gradient", policy, adam)?);
        }
        let loss_grad: Vec<f64> = grad.values.iter().map(|g| -g).collect();
        let (before, adam_before) = (policy.clone(), adam.clone());
        adam.step(&optim, optim.lr_at(step), policy.params_mut(), &loss_grad);
        if policy.params().iter().any(|x| !x.is_finite()) {
            return Err(diverged("non-finite parameters after the update", before, adam_before)?);
        }
    }
    metrics_file.flush()?;
    steps_file.flush()?;

    let record = RunRecord {
        task: job.spec.family(),
        regime,
        optim,
        seed: optim.global_seed,
        checkpoints: rows.iter().map(|r| CheckpointRef { step: r.step, path: checkpoint_rel(r.step) }).collect(),
        rows,
        step_rewards,
        run_dir: dir.to_path_buf(),
    };
    fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, acc: f64) -> MetricsRow {
        MetricsRow { step, train_reward: 0.0, entropy: 0.0, mean_len: 0.0, val_pass1: acc, tv_oracle: None }
    }

    fn record(rows: Vec<MetricsRow>) -> RunRecord {
        use crate::model::Backend;
        use crate::objective::{build_regime, Beta, RegimeName};
        RunRecord {
            task: TaskFamily::Parity { min_len: 1, max_len: 1 },
            regime: build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), LengthMode::variable(3), 2).unwrap(),
            optim: OptimConfig::toy_default(Backend::Tabular),
            seed: 0,
            checkpoints: vec![],
            rows,
            step_rewards: vec![],
            run_dir: PathBuf::new(),
        }
    }

    #[test]
    fn csv_row_round_trip() {
        let r = MetricsRow {
            step: 50,
            train_reward: -0.25,
            entropy: 1.5,
            mean_len: 3.0,
            val_pass1: 0.8125,
            tv_oracle: Some(0.1),
        };
        assert_eq!(r.to_csv(), "50,-0.25,1.5,3,0.8125,0.1");
        assert_eq!(MetricsRow::parse_csv(&r.to_csv()).unwrap(), r);
        let none = MetricsRow { tv_oracle: None, ..r };
        assert_eq!(MetricsRow::parse_csv(&none.to_csv()).unwrap(), none);
        assert!(MetricsRow::parse_csv("1,2").is_err());
    }

    #[test]
    fn selection_rules() {
        let monotone = record(vec![row(0, 0.2), row(10, 0.5), row(20, 0.9)]);
        assert_eq!(select_row(&monotone, Criterion::Last).unwrap().step, 20);
        assert_eq!(select_row(&monotone, Criterion::BestValidation).unwrap().step, 20);
        let peaked = record(vec![row(0, 0.2), row(10, 0.9), row(20, 0.9), row(30, 0.3)]);
        assert_eq!(select_row(&peaked, Criterion::Last).unwrap().step, 30);
        assert_eq!(select_row(&peaked, Criterion::BestValidation).unwrap().step, 10);
        let single = record(vec![row(0, 0.4)]);
        assert_eq!(select_row(&single, Criterion::Last).unwrap().step, 0);
        assert_eq!(select_row(&single, Criterion::BestValidation).unwrap().step, 0);
        assert!(select_row(&record(vec![]), Criterion::Last).is_err());
    }
}
