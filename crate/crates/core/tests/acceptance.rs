//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any failure.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use rand::Rng;
use sharpen::decode::*;
use sharpen::model::*;
use sharpen::objective::*;
use sharpen::oracle::*;
use sharpen::tasks::*;
use sharpen::trainflow::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn c1_normalization() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (v, p) = random_policy(&mut r, i % 2 == 1);
        let l_max = r.gen_range(1..=6);
        let length = if r.gen_bool(0.5) { LengthMode::variable(l_max) } else { LengthMode::fixed(l_max) };
        let prompt = random_prompt(&mut r, &v, 3);
        let space = Arc::new(enumerate_space_mode(&v, length).unwrap());
        let d = exact_policy_dist(&p, &prompt, &space).unwrap();
        worst = worst.max((d.probs.iter().sum::<f64>() - 1.0).abs());
    }
    outcome(worst <= 1e-9, format!("50 policies, max |sum - 1| = {worst:.1e} (tol 1e-9)"))
}

fn random_response(r: &mut rand_chacha::ChaCha8Rng, v: &Vocab, length: LengthMode) -> TokenSeq {
    let emittable = v.emittable_ids();
    let interior = v.interior_ids();
    if length.is_variable() {
        let body = r.gen_range(0..=length.l_max);
        let mut ids: Vec<TokenId> = (0..body).map(|_| interior[r.gen_range(0..interior.len())]).collect();
        if body < length.l_max {
            ids.push(v.eos_id());
        }
        TokenSeq::response(ids)
    } else {
        TokenSeq::response((0..length.l_max).map(|_| emittable[r.gen_range(0..emittable.len())]).collect())
    }
}

fn c2_gradients() -> Outcome {
    let eps = 1e-5;
    let mut r = rng(202);
    let mut worst = [0.0f64; 2];
    for (b, neural) in [false, true].into_iter().enumerate() {
        for _ in 0..100 {
            let (v, mut p) = random_policy(&mut r, neural);
            let l_max = r.gen_range(1..=4);
            let length = if r.gen_bool(0.5) { LengthMode::variable(l_max) } else { LengthMode::fixed(l_max) };
            let prompt = random_prompt(&mut r, &v, 3);
            let resp = random_response(&mut r, &v, length);
            let g = sequence_logprob_grad(&p, &prompt, &resp, length).unwrap();
            for i in 0..p.params().len() {
                let orig = p.params()[i];
                p.params_mut()[i] = orig + eps;
                let up = sequence_logprob(&p, &prompt, &resp, length).unwrap();
                p.params_mut()[i] = orig - eps;
                let down = sequence_logprob(&p, &prompt, &resp, length).unwrap();
                p.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let rel = (g.values[i] - fd).abs() / fd.abs().max(g.values[i].abs()).max(1e-3);
                worst[b] = worst[b].max(rel);
            }
        }
    }

    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let inst = spec.all_instances()[1].clone();
    let l = LengthMode::variable(3);
    let space = enumerate_space(spec.vocab(), 3).unwrap();
    let tab = |seed| {
        let mut p = Policy::init(Arch::Tabular { context: 2, vocab: spec.vocab().size() }, spec.vocab(), 0).unwrap();
        randomize(&mut p, &mut rng(seed), 1.0);
        p
    };
    let base = tab(1);
    let regimes = [
        build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), l, 2).unwrap(),
        build_regime(RegimeName::Tilted, 1.25, Beta(0.1), l, 2).unwrap(),
        build_regime(RegimeName::DistSharpen, 1.0, Beta(0.0), l, 2).unwrap(),
        build_regime(RegimeName::Tempered, 2.0, Beta(0.5), l, 2).unwrap(),
    ];
    let mut worst_exact: f64 = 0.0;
    for (j, regime) in regimes.iter().enumerate() {
        let mut p = tab(10 + j as u64);
        let g = exact_gradient(&p, &base, regime, &spec, &inst, &space).unwrap();
        for i in 0..p.params().len() {
            let orig = p.params()[i];
            p.params_mut()[i] = orig + eps;
            let up = exact_objective(&p, &base, regime, &spec, &inst, &space).unwrap();
            p.params_mut()[i] = orig - eps;
            let down = exact_objective(&p, &base, regime, &spec, &inst, &space).unwrap();
            p.params_mut()[i] = orig;
            worst_exact = worst_exact.max((g.values[i] - (up - down) / (2.0 * eps)).abs());
        }
    }
    outcome(
        worst[0] <= 1e-4 && worst[1] <= 1e-4 && worst_exact <= 1e-6,
        format!(
            "max rel err tabular {:.1e}, neural {:.1e} (tol 1e-4, 100 cases each); exact gradient max abs err {:.1e} (tol 1e-6)",
            worst[0], worst[1], worst_exact
        ),
    )
}

fn c3_unbiasedness() -> Outcome {
    const GROUPS: u64 = 200_000;
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let v = spec.vocab().clone();
    let inst = spec.all_instances()[1].clone();
    let l = LengthMode::variable(3);
    let space = enumerate_space(&v, 3).unwrap();
    let mut r = rng(303);
    let mut policy = Policy::init(Arch::Tabular { context: 1, vocab: v.size() }, &v, 0).unwrap();
    randomize(&mut policy, &mut r, 1.0);
    let mut base = policy.clone();
    randomize(&mut base, &mut r, 1.0);
    let regimes = [
        build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), l, 4).unwrap(),
        build_regime(RegimeName::Tilted, 1.25, Beta(0.1), l, 4).unwrap(),
        build_regime(RegimeName::DistSharpen, 1.0, Beta(0.0), l, 4).unwrap(),
        build_regime(RegimeName::Tempered, 2.0, Beta(0.5), l, 4).unwrap(),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (ri, regime) in regimes.iter().enumerate() {
        let exact = exact_gradient(&policy, &base, regime, &spec, &inst, &space).unwrap();
        let n = exact.len();
        let (mut sum, mut sq) = (vec![0.0; n], vec![0.0; n]);
        for m in 0..GROUPS {
            let seeds: Vec<u64> = (0..4).map(|j| derive_seed(2024 + ri as u64, m, 0, j)).collect();
            let g = RolloutGroup::sample(&policy, &base, &spec, &inst, regime, &seeds).unwrap();
            let e = estimate_gradient(&policy, &[g], regime).unwrap();
            for i in 0..n {
                sum[i] += e.values[i];
                sq[i] += e.values[i] * e.values[i];
            }
        }
        let mf = GROUPS as f64;
        let mean = GradVector { values: sum.iter().map(|s| s / mf).collect() };
        let mut worst_z: f64 = 0.0;
        let mut misses = 0;
        for i in 0..n {
            let var = (sq[i] / mf - mean.values[i].powi(2)).max(0.0) * mf / (mf - 1.0);
            let se = (var / mf).sqrt();
            let diff = (mean.values[i] - exact.values[i]).abs();
            if se == 0.0 {
                if diff > 1e-12 {
                    misses += 1;
                }
            } else {
                worst_z = worst_z.max(diff / se);
                if diff > 3.0 * se {
                    misses += 1;
                }
            }
        }
        let cos = mean.cosine(&exact);
        pass &= misses == 0 && cos >= 0.99;
        parts.push(format!("{}: max z {:.2}, cos {:.4}, {} outside 3 SE", regime.name, worst_z, cos, misses));
    }
    outcome(pass, format!("200k groups of 4 per regime; {}", parts.join("; ")))
}

fn c4_convergence() -> Outcome {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 2 }).unwrap();
    let l_max = 3;
    let v = spec.vocab();
    let prof = VerbosityProfile { filler_weights: vec![1.0], abstain_share: 0.5 };
    let corpus = spec.generate_pretrain_corpus(400, 0.3, &prof, l_max, 1).unwrap();
    let init = Policy::init(Arch::Tabular { context: 4, vocab: v.size() }, v, 0).unwrap();
    let po = OptimConfig {
        learning_rate: 0.05,
        warmup_init_lr: 0.005,
        steps: 300,
        eval_every: 300,
        ..OptimConfig::toy_default(Backend::Tabular)
    };
    let base = pretrain_mle(&init, &corpus, &po).unwrap();
    let all = spec.all_instances();
    let regime = build_regime(RegimeName::Tilted, 1.25, Beta(0.1), LengthMode::variable(l_max), 8).unwrap();
    let optim =
        OptimConfig { steps: 2000, eval_every: 100, global_seed: 11, ..OptimConfig::toy_default(Backend::Tabular) };
    let dir = tempfile::tempdir().unwrap();
    let job = TrainJob {
        spec: &spec,
        regime,
        optim,
        train: &all,
        validation: &all,
        run_dir: dir.path(),
        resolved_config: None,
    };
    let rec = train_regime(&base, &job).unwrap();
    let tv = |r: &MetricsRow| r.tv_oracle.unwrap();
    let first = rec.rows.iter().find(|r| tv(r) <= 0.05).map(|r| r.step);
    let last = rec.rows.last().unwrap();
    outcome(
        first.is_some(),
        format!(
            "tilted alpha 1.25 beta 0.1, tabular on parity: TV {:.4} at step 0, first <= 0.05 at step {}, {:.4} at step {}",
            tv(&rec.rows[0]),
            first.map_or("never".into(), |s| s.to_string()),
            tv(last),
            last.step
        ),
    )
}

fn q_tempered(space: &Arc<ResponseSpace>) -> (OracleDist, OracleDist) {
    let (_, p) = q_policy();
    let b = exact_policy_dist(&p, &TokenSeq::prompt(vec![]), space).unwrap();
    let regime = build_regime(RegimeName::Tempered, 2.0, Beta(1.0), LengthMode::variable(2), 2).unwrap();
    let t = exact_target_dist_with_rewards(&b, &regime, &vec![0.0; space.len()]).unwrap();
    (b, t)
}

fn c5_power_sampling() -> Outcome {
    let (v, p) = q_policy();
    let space = Arc::new(enumerate_space(&v, 2).unwrap());
    let (_, target) = q_tempered(&space);
    let chains = 50_000u64;
    let prompt = TokenSeq::prompt(vec![]);
    let mut counts = vec![0usize; space.len()];
    for c in 0..chains {
        let cfg = DecodeConfig {
            method: DecodeMethod::Power { alpha: 2.0, block_count: 2, mcmc_steps: 50 },
            length: LengthMode::variable(2),
            seed: derive_seed(505, c, 0, 0),
        };
        let s = power_sample(&p, &prompt, &cfg).unwrap();
        counts[space.position(&s.response.ids).unwrap()] += 1;
    }
    let tv = counts.iter().zip(&target.probs).map(|(&c, &q)| (c as f64 / chains as f64 - q).abs()).sum::<f64>() / 2.0;
    outcome(tv <= 0.05, format!("50k chains x 50 steps, alpha 2: TV to base^2/Z = {tv:.4} (tol 0.05)"))
}

fn c6_temperature_mismatch() -> Outcome {
    let (v, p) = q_policy();
    let space = Arc::new(enumerate_space(&v, 2).unwrap());
    let (_, seq) = q_tempered(&space);
    let tok = exact_token_tempered_dist(&p, &TokenSeq::prompt(vec![]), &space, 0.5).unwrap();
    let tv = dist_distance(&tok, &seq, Divergence::Tv).unwrap();
    let eos = space.position(&[v.eos_id()]).unwrap();
    outcome(
        tv >= 0.05,
        format!(
            "TV {:.4} (need >= 0.05); P(eos) token-tempered {:.3} vs sequence-tempered {:.3}",
            tv, tok.probs[eos], seq.probs[eos]
        ),
    )
}

fn c8_beta_monotonicity() -> Outcome {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 2 }).unwrap();
    let space = Arc::new(enumerate_space(spec.vocab(), 3).unwrap());
    let insts = spec.all_instances();
    let mut r = rng(808);
    let mut pass = true;
    let mut parts = Vec::new();
    for _ in 0..3 {
        let mut base = Policy::init(Arch::Tabular { context: 3, vocab: spec.vocab().size() }, spec.vocab(), 0).unwrap();
        randomize(&mut base, &mut r, 1.5);
        let inst = &insts[r.gen_range(0..insts.len())];
        let alpha = r.gen_range(1.0..2.0);
        let b = exact_policy_dist(&base, &inst.prompt, &space).unwrap();
        let rewards: Vec<f64> = [Beta::INFINITE, Beta(1.0), Beta(0.1), Beta(0.01)]
            .into_iter()
            .map(|beta| {
                let regime = build_regime(RegimeName::Tilted, alpha, beta, LengthMode::variable(3), 2).unwrap();
                let t = exact_target_dist(&b, &regime, &spec, inst).unwrap();
                exact_metrics(&t, &spec, inst, &[1]).unwrap().expected_reward
            })
            .collect();
        pass &= rewards.windows(2).all(|w| w[1] >= w[0]);
        parts.push(format!("[{}]", rewards.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")));
    }
    outcome(pass, format!("expected reward for beta = inf, 1, 0.1, 0.01: {}", parts.join(" ")))
}

/// Neural ModAdd runs shared by the length-collapse and stability criteria.
struct NeuralRuns {
    task_rl: RunRecord,
    sharpen_variable: RunRecord,
    sharpen_fixed: RunRecord,
}

fn neural_runs(root: &Path) -> NeuralRuns {
    let spec = TaskSpec::new(TaskFamily::ModAdd { modulus: 7 }).unwrap();
    let l_max = 5;
    let v = spec.vocab();
    let prof = VerbosityProfile { filler_weights: vec![1.0, 1.0, 1.0], abstain_share: 1.0 };
    let corpus = spec.generate_pretrain_corpus(4000, 0.4, &prof, l_max, 1).unwrap();
    let init = Policy::init(Arch::Neural { context: 7, embed: 8, hidden: 64, vocab: v.size() }, v, 7).unwrap();
    let po = OptimConfig {
        learning_rate: 1e-2,
        warmup_init_lr: 1e-3,
        steps: 3000,
        batch_prompts: 64,
        eval_every: 3000,
        ..OptimConfig::toy_default(Backend::Neural)
    };
    let base = pretrain_mle(&init, &corpus, &po).unwrap();
    let train = spec.split_instances(Split::Train);
    let val = spec.split_instances(Split::Validation);
    let optim = OptimConfig {
        learning_rate: 5e-4,
        warmup_init_lr: 5e-5,
        global_seed: 3,
        ..OptimConfig::toy_default(Backend::Neural)
    };
    let run = |name, length, tag: &str| {
        let regime = build_regime(name, 1.0, Beta(0.0), length, 8).unwrap();
        let dir = root.join(tag);
        let job = TrainJob {
            spec: &spec,
            regime,
            optim,
            train: &train,
            validation: &val,
            run_dir: &dir,
            resolved_config: None,
        };
        train_regime(&base, &job).unwrap()
    };
    NeuralRuns {
        task_rl: run(RegimeName::TaskRl, LengthMode::variable(l_max), "task_rl"),
        sharpen_variable: run(RegimeName::DistSharpen, LengthMode::variable(l_max), "sharpen_variable"),
        sharpen_fixed: run(RegimeName::DistSharpen, LengthMode::fixed(l_max), "sharpen_fixed"),
    }
}

fn best_last(rec: &RunRecord) -> (f64, f64) {
    let best = select_row(rec, Criterion::BestValidation).unwrap().val_pass1;
    let last = select_row(rec, Criterion::Last).unwrap().val_pass1;
    (best, last)
}

fn c7_length_collapse(runs: &NeuralRuns) -> Outcome {
    let var = &runs.sharpen_variable;
    let (len0, len_t) = (var.rows[0].mean_len, var.rows.last().unwrap().mean_len);
    let (vb, vl) = best_last(var);
    let (fb, fl) = best_last(&runs.sharpen_fixed);
    let pass = len_t <= 0.5 * len0 && vb - vl >= 0.10 && fb - fl <= 0.02;
    outcome(
        pass,
        format!(
            "variable: length {len0:.2} -> {len_t:.2}, val best {vb:.3} last {vl:.3}; fixed: val best {fb:.3} last {fl:.3}"
        ),
    )
}

fn c9_task_reward_stability(runs: &NeuralRuns) -> Outcome {
    let rec = &runs.task_rl;
    let base = rec.rows[0].val_pass1;
    let (best, last) = best_last(rec);
    let pass = (best - last).abs() <= 0.02 && last >= base + 0.10;
    outcome(pass, format!("task_rl on modadd 7: base {base:.3}, best {best:.3}, last {last:.3}"))
}

fn c10_beam() -> Outcome {
    let mut r = rng(1010);
    let (mut argmax_ok, mut beam_ok) = (0, 0);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..100 {
        let neural = r.gen_bool(0.5);
        let (v, p) = random_policy(&mut r, neural);
        let prompt = random_prompt(&mut r, &v, 3);
        let l_max = r.gen_range(2..=4);
        let length = LengthMode::variable(l_max);
        let space = Arc::new(enumerate_space(&v, l_max).unwrap());
        let d = exact_policy_dist(&p, &prompt, &space).unwrap();
        let wide = DecodeConfig {
            method: DecodeMethod::Beam { beam_width: space.len(), length_penalty: 0.0 },
            length,
            seed: 0,
        };
        if beam_search(&p, &prompt, &wide).unwrap().response.ids == space.sequences[d.argmax_index()] {
            argmax_ok += 1;
        }
        let b4 = beam_search(&p, &prompt, &DecodeConfig::beam_default(length)).unwrap();
        let g = greedy_decode(&p, &prompt, length).unwrap();
        let gap = b4.logprob_policy - g.logprob_policy;
        worst_gap = worst_gap.min(gap);
        if gap >= 0.0 {
            beam_ok += 1;
        }
    }
    outcome(
        argmax_ok == 100 && beam_ok == 100,
        format!("wide beam = argmax on {argmax_ok}/100; width-4 logprob >= greedy on {beam_ok}/100 (min gap {worst_gap:.3e})"),
    )
}

fn c11_pass_at_k() -> Outcome {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let space = Arc::new(enumerate_space(spec.vocab(), 3).unwrap());
    let insts = spec.all_instances();
    let mut r = rng(1111);
    let mut policy = Policy::init(Arch::Tabular { context: 2, vocab: spec.vocab().size() }, spec.vocab(), 0).unwrap();
    randomize(&mut policy, &mut r, 1.0);
    let ps: Vec<f64> = insts
        .iter()
        .map(|i| {
            exact_metrics(&exact_policy_dist(&policy, &i.prompt, &space).unwrap(), &spec, i, &[1])
                .unwrap()
                .expected_reward
        })
        .collect();
    let pick = (0..insts.len()).min_by(|&a, &b| (ps[a] - 0.1).abs().total_cmp(&(ps[b] - 0.1).abs())).unwrap();
    let p = ps[pick];
    let n = 4000;
    let reps = vec![insts[pick].clone(); n];
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, k) in [1usize, 4, 16].into_iter().enumerate() {
        let cfg = EvalConfig {
            decode: DecodeConfig::ancestral(1.0, LengthMode::variable(3), 1100 + j as u64),
            k,
            exact: false,
        };
        let m = evaluate(&policy, None, &spec, &reps, &cfg).unwrap();
        let closed = pass_at_k(p, k);
        let sigma = (closed * (1.0 - closed) / n as f64).sqrt();
        let z = (m.pass_k - closed).abs() / sigma;
        pass &= z <= 3.0;
        parts.push(format!("k={k}: mc {:.4} vs {:.4} ({z:.2} sigma)", m.pass_k, closed));
    }
    outcome(pass, format!("p = {p:.4}, {n} draws; {}", parts.join("; ")))
}

fn c12_reproducibility() -> Outcome {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 2 }).unwrap();
    let v = spec.vocab();
    let prof = VerbosityProfile { filler_weights: vec![1.0], abstain_share: 0.5 };
    let corpus = spec.generate_pretrain_corpus(200, 0.3, &prof, 3, 2).unwrap();
    let init = Policy::init(Arch::Tabular { context: 4, vocab: v.size() }, v, 0).unwrap();
    let po = OptimConfig { steps: 100, eval_every: 100, ..OptimConfig::toy_default(Backend::Tabular) };
    let base = pretrain_mle(&init, &corpus, &po).unwrap();
    let all = spec.all_instances();
    let regime = build_regime(RegimeName::Tilted, 1.5, Beta(0.5), LengthMode::variable(3), 4).unwrap();
    let optim = OptimConfig {
        steps: 120,
        eval_every: 20,
        batch_prompts: 8,
        group_size: 4,
        global_seed: 12,
        ..OptimConfig::toy_default(Backend::Tabular)
    };
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c")];
    let jobs: Vec<TrainJob> = dirs
        .iter()
        .map(|d| TrainJob {
            spec: &spec,
            regime,
            optim,
            train: &all,
            validation: &all,
            run_dir: d,
            resolved_config: None,
        })
        .collect();
    for job in &jobs {
        train_regime(&base, job).unwrap();
    }
    resume_regime(&base, &jobs[2], 60).unwrap();
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    let files = ["metrics.csv", "steps.csv", "checkpoints/step_120.json"];
    let same_run = files.iter().all(|f| read(&dirs[0], f) == read(&dirs[1], f));
    let same_resume = files.iter().all(|f| read(&dirs[0], f) == read(&dirs[2], f));
    outcome(
        same_run && same_resume,
        format!("repeat run byte-identical: {same_run}; resume from step 60 byte-identical: {same_resume}"),
    )
}

fn main() {
    let started = Instant::now();
    let scratch = tempfile::tempdir().unwrap();
    let runs = std::cell::OnceCell::new();
    let neural = || runs.get_or_init(|| neural_runs(scratch.path()));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 normalization", Box::new(c1_normalization)),
        ("2 gradient correctness", Box::new(c2_gradients)),
        ("3 estimator unbiasedness", Box::new(c3_unbiasedness)),
        ("4 convergence to the tilted optimum", Box::new(c4_convergence)),
        ("5 power sampling", Box::new(c5_power_sampling)),
        ("6 temperature mismatch", Box::new(c6_temperature_mismatch)),
        ("7 length collapse", Box::new(|| c7_length_collapse(neural()))),
        ("8 beta monotonicity", Box::new(c8_beta_monotonicity)),
        ("9 task reward stability", Box::new(|| c9_task_reward_stability(neural()))),
        ("10 beam and oracle agreement", Box::new(c10_beam)),
        ("11 pass@k closed form", Box::new(c11_pass_at_k)),
        ("12 reproducibility", Box::new(c12_reproducibility)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
