//! The `sharpen` command-line driver.
//!
//! Every subcommand reads an [`ExperimentConfig`] and works on the file formats
//! of `sharpen-core`: policy JSON, JSON-lines corpora, run directories and CSV.

pub mod config;
pub mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sharpen::decode::{decode, DecodeConfig, DecodeMethod};
use sharpen::model::{LengthMode, Policy, TokenSeq};
use sharpen::oracle::{enumerate_space_mode, exact_policy_dist, exact_target_dist, space_rewards, write_dist_csv};
use sharpen::tasks::{write_corpus_jsonl, Instance};
use sharpen::trainflow::{evaluate, pretrain_mle, resume_regime, select_row, train_regime, Criterion, TrainJob};
use sharpen::{Error, Result};

pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "sharpen", version, about = "KL-regularized RL and distribution sharpening on tiny policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the demonstration corpus and fit the base policy by maximum likelihood.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the base policy JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the corpus as JSON lines.
        #[arg(long)]
        corpus_out: Option<PathBuf>,
    },
    /// Train one regime into the config's run directory.
    #[command(alias = "run")]
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Base policy JSON; overrides the config's base_checkpoint.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Continue an existing run from its checkpoint at this step.
        #[arg(long)]
        resume_from: Option<usize>,
    },
    /// Decode responses for one prompt.
    Sample(SampleArgs),
    /// Dump the exact distribution of a policy (or of the regime's target) as CSV.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Prompt as comma-separated symbols, e.g. "1,0".
        #[arg(long, default_value = "")]
        prompt: String,
        /// Dump the closed-form optimum of the config's regime with `policy` as the base.
        #[arg(long)]
        target: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy on the config's evaluation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate last and best checkpoints of finished runs.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        run_dirs: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ancestral,
    Beam,
    Power,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LengthArg {
    Variable,
    Fixed,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// Prompt as comma-separated symbols.
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long, value_enum, default_value = "ancestral")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 0.0)]
    pub length_penalty: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub block_count: usize,
    #[arg(long, default_value_t = 10)]
    pub mcmc_steps: usize,
    /// Defaults to the config's length mode.
    #[arg(long, value_enum)]
    pub length_mode: Option<LengthArg>,
    /// Defaults to the config's l_max.
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples, drawn with seeds seed, seed+1, ...
    #[arg(short, long, default_value_t = 1)]
    pub n: usize,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Size(_) | Error::Domain(_) | Error::Json(_) => 2,
        Error::Training(_) => 3,
        Error::Internal(_) | Error::Io(_) => 1,
    }
}

/// One JSON object on a single line, for scripts that watch stderr.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::Config(_) => "config",
        Error::Input(_) => "input",
        Error::Size(_) => "size",
        Error::Domain(_) => "domain",
        Error::Internal(_) => "internal",
        Error::Training(_) => "training",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    serde_json::json!({ "error": kind, "exit_code": exit_code(e), "message": e.to_string() }).to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, out, corpus_out } => cmd_pretrain(&config, &out, corpus_out.as_deref()),
        Command::Train { config, base, resume_from } => cmd_run(&config, base.as_deref(), resume_from),
        Command::Sample(args) => cmd_sample(&args),
        Command::Oracle { config, policy, prompt, target, out } => {
            cmd_oracle(&config, &policy, &prompt, target, out.as_deref())
        }
        Command::Eval { config, policy, out } => cmd_eval(&config, &policy, out.as_deref()),
        Command::Report { out, run_dirs } => report::cmd_report(&run_dirs, out.as_deref()),
    }
}

fn load_policy(path: &Path, cfg: &ExperimentConfig) -> Result<Policy> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read policy {}: {e}", path.display())))?;
    let p = Policy::from_json(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let n = cfg.vocab()?.size();
    if p.vocab_size() != n {
        return Err(Error::Input(format!(
            "{} has a vocab of {} tokens but the task uses {n}",
            path.display(),
            p.vocab_size()
        )));
    }
    Ok(p)
}

/// Corpus generation plus MLE fit, all seeded from the global seed.
fn pretrain_base(cfg: &ExperimentConfig, corpus_out: Option<&Path>) -> Result<Policy> {
    let pre = cfg.pretrain.as_ref().ok_or_else(|| Error::Config("config has no pretrain section".into()))?;
    let spec = cfg.task_spec()?;
    let corpus = spec.generate_pretrain_corpus(
        pre.corpus_size,
        pre.noise_rate,
        &pre.verbosity,
        cfg.length.l_max,
        cfg.corpus_seed(),
    )?;
    if let Some(path) = corpus_out {
        write_corpus_jsonl(path, &corpus)?;
    }
    let init = Policy::init(cfg.policy.arch(spec.vocab().size()), spec.vocab(), cfg.init_seed())?;
    pretrain_mle(&init, &corpus, &pre.optim)
}

pub(crate) fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

pub fn cmd_pretrain(config: &Path, out: &Path, corpus_out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let base = pretrain_base(&cfg, corpus_out)?;
    write_out(Some(out), &base.to_json()?)
}

/// Pretrains unless a base is supplied, then trains the regime into `run_dir`.
pub fn cmd_run(config: &Path, base: Option<&Path>, resume_from: Option<usize>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg.task_spec()?;
    let base_path = base.map(Path::to_path_buf).or_else(|| cfg.base_checkpoint.clone());
    let base = match (&base_path, resume_from) {
        (_, Some(_)) => load_policy(&cfg.run_dir.join("base.json"), &cfg)?,
        (Some(p), None) => load_policy(p, &cfg)?,
        (None, None) => pretrain_base(&cfg, None)?,
    };
    let train = cfg.splits.train.instances(&spec);
    let validation = cfg.splits.validation.instances(&spec);
    let job = TrainJob {
        spec: &spec,
        regime: cfg.regime_config()?,
        optim: cfg.optim,
        train: &train,
        validation: &validation,
        run_dir: &cfg.run_dir,
        resolved_config: Some(cfg.to_resolved_json()?),
    };
    let record = match resume_from {
        Some(step) => resume_regime(&base, &job, step)?,
        None => train_regime(&base, &job)?,
    };
    let last = select_row(&record, Criterion::Last)?;
    let best = select_row(&record, Criterion::BestValidation)?;
    let summary = serde_json::json!({
        "run_dir": cfg.run_dir,
        "last": { "step": last.step, "val_pass1": last.val_pass1 },
        "best": { "step": best.step, "val_pass1": best.val_pass1 },
    });
    println!("{summary}");
    Ok(())
}

fn parse_prompt(cfg: &ExperimentConfig, text: &str) -> Result<TokenSeq> {
    let vocab = cfg.vocab()?;
    let prompt = TokenSeq::prompt(vocab.parse(text).map_err(|e| Error::Input(format!("prompt: {e}")))?);
    prompt.validate(&vocab).map_err(|e| Error::Input(format!("prompt: {e}")))?;
    Ok(prompt)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let policy = load_policy(&args.policy, &cfg)?;
    let prompt = parse_prompt(&cfg, &args.prompt)?;
    let vocab = cfg.vocab()?;
    let l_max = args.l_max.unwrap_or(cfg.length.l_max);
    let length = match args.length_mode {
        Some(LengthArg::Variable) => LengthMode::variable(l_max),
        Some(LengthArg::Fixed) => LengthMode::fixed(l_max),
        None => LengthMode { l_max, ..cfg.length },
    };
    let method = match args.method {
        MethodArg::Ancestral => DecodeMethod::Ancestral { temperature: args.temperature },
        MethodArg::Beam => DecodeMethod::Beam { beam_width: args.beam_width, length_penalty: args.length_penalty },
        MethodArg::Power => {
            DecodeMethod::Power { alpha: args.alpha, block_count: args.block_count, mcmc_steps: args.mcmc_steps }
        }
    };
    let mut text = String::from("sample,response,logprob\n");
    for i in 0..args.n {
        let cfg = DecodeConfig { method, length, seed: args.seed.wrapping_add(i as u64) };
        let s = decode(&policy, None, &prompt, &cfg)?;
        text.push_str(&format!("{i},\"{}\",{}\n", vocab.render(&s.response.ids), s.logprob_policy));
    }
    write_out(None, &text)
}

pub fn cmd_oracle(config: &Path, policy: &Path, prompt: &str, target: bool, out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg.task_spec()?;
    let policy = load_policy(policy, &cfg)?;
    let prompt = parse_prompt(&cfg, prompt)?;
    let space = Arc::new(enumerate_space_mode(spec.vocab(), cfg.length)?);
    let instance = spec
        .all_instances()
        .into_iter()
        .find(|i| i.prompt == prompt)
        .unwrap_or(Instance { prompt: prompt.clone(), gold: Vec::new() });
    let dist = exact_policy_dist(&policy, &prompt, &space)?;
    let dist = if target { exact_target_dist(&dist, &cfg.regime_config()?, &spec, &instance)? } else { dist };
    let rewards = space_rewards(&space, &spec, &instance);
    let mut buf = Vec::new();
    write_dist_csv(&mut buf, &dist, &rewards)?;
    write_out(out, &String::from_utf8(buf).expect("CSV is UTF-8"))
}

pub fn cmd_eval(config: &Path, policy: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = cfg.task_spec()?;
    let policy = load_policy(policy, &cfg)?;
    let instances = cfg.splits.eval.instances(&spec);
    let mut text = String::new();
    for e in cfg.eval_configs() {
        let m = evaluate(&policy, None, &spec, &instances, &e)?;
        text.push_str(&serde_json::json!({ "decode": e.decode, "exact": e.exact, "metrics": m }).to_string());
        text.push('\n');
    }
    write_out(out, &text)
}
