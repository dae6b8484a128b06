//! Last-versus-best tables over finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sharpen::model::{LengthKind, Policy};
use sharpen::trainflow::{evaluate, select_checkpoint, select_row, Criterion, EvalMetrics, RunRecord};
use sharpen::{Error, Result};

use crate::config::ExperimentConfig;

/// Drop in pass@1, best minus last, beyond which a run counts as collapsed.
pub const COLLAPSE_MARGIN: f64 = 0.10;

pub const REPORT_HEADER: &str =
    "run,checkpoint,step,strategy,alpha,beta,length_mode,val_pass1,pass1,pass_k,k,maj_k,mean_len,status";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: PathBuf,
    pub checkpoint: &'static str,
    pub step: usize,
    pub strategy: String,
    pub alpha: f64,
    pub beta: String,
    pub length_mode: &'static str,
    pub val_pass1: f64,
    pub metrics: EvalMetrics,
    pub collapsed: bool,
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "\"{}\",{},{},{},{},{},{},{:.4},{:.4},{:.4},{},{:.4},{:.3},{}",
            self.run.display(),
            self.checkpoint,
            self.step,
            self.strategy,
            self.alpha,
            self.beta,
            self.length_mode,
            self.val_pass1,
            m.pass1,
            m.pass_k,
            m.k,
            m.maj_k,
            m.mean_len,
            if self.collapsed { "collapsed" } else { "ok" }
        )
    }
}

/// Rows for the last and best-validation checkpoints of one finished run.
pub fn report_run(run_dir: &Path) -> Result<[ReportRow; 2]> {
    let record = RunRecord::load(run_dir)?;
    let cfg = ExperimentConfig::from_json(&fs::read_to_string(run_dir.join("config.json"))?)?;
    let spec = cfg.task_spec()?;
    let base = Policy::from_json(&fs::read_to_string(run_dir.join("base.json"))?)?;
    let instances = cfg.splits.eval.instances(&spec);
    let eval = cfg.eval_configs()[0];
    let row = |criterion, name| -> Result<ReportRow> {
        let meta = select_row(&record, criterion)?;
        let ck = select_checkpoint(&record, criterion)?;
        Ok(ReportRow {
            run: run_dir.to_path_buf(),
            checkpoint: name,
            step: meta.step,
            strategy: cfg.regime.name.to_string(),
            alpha: cfg.regime.alpha,
            beta: cfg.regime.beta.to_string(),
            length_mode: match cfg.length.mode {
                LengthKind::Variable => "variable",
                LengthKind::Fixed => "fixed",
            },
            val_pass1: meta.val_pass1,
            metrics: evaluate(&ck.policy, Some(&base), &spec, &instances, &eval)?,
            collapsed: false,
        })
    };
    let mut last = row(Criterion::Last, "last")?;
    let best = row(Criterion::BestValidation, "best")?;
    last.collapsed = last.metrics.pass1 < best.metrics.pass1 - COLLAPSE_MARGIN;
    Ok([last, best])
}

/// Writes the report; incomplete runs are skipped with a warning on stderr.
pub fn cmd_report(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut text = format!("{REPORT_HEADER}\n");
    let mut kept = 0;
    for dir in run_dirs {
        match report_run(dir) {
            Ok(rows) => {
                kept += 1;
                for r in rows {
                    writeln!(text, "{}", r.to_csv()).expect("writing to a String");
                }
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", dir.display()),
        }
    }
    if kept == 0 {
        return Err(Error::Input("no complete run among the given directories".into()));
    }
    crate::write_out(out, &text)
}
