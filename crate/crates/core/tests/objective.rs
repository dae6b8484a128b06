mod common;

use common::*;
use rand::Rng;
use sharpen::decode::Sample;
use sharpen::model::*;
use sharpen::objective::*;
use sharpen::oracle::{enumerate_space, exact_gradient};
use sharpen::tasks::{Instance, TaskFamily, TaskSpec};
use sharpen::trainflow::derive_seed;

fn sample(p: &Policy, prompt: &TokenSeq, ids: Vec<TokenId>, length: LengthMode) -> Sample {
    let response = TokenSeq::response(ids);
    let lp = sequence_logprob(p, prompt, &response, length).unwrap();
    Sample { response, logprob_policy: lp, logprob_base: Some(lp) }
}

/// Two rollouts "a,eos" (reward 1) and "b,eos" (reward 0) under a uniform
/// context-free policy over {a, b, eos}.
#[test]
fn two_rollout_gradient_by_hand() {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let v = spec.vocab().clone();
    let p = Policy::init(Arch::Tabular { context: 1, vocab: v.size() }, &v, 0).unwrap();
    let length = LengthMode::variable(2);
    let regime = build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), length, 2).unwrap();
    let prompt = TokenSeq::prompt(vec![0]);
    let inst = Instance { prompt: prompt.clone(), gold: vec![0] };
    let (a, b, eos) = (spec.answer_id(), spec.filler_id(), v.eos_id());
    let group = RolloutGroup::from_samples(
        &spec,
        inst,
        vec![sample(&p, &prompt, vec![a, eos], length), sample(&p, &prompt, vec![b, eos], length)],
        &regime,
    )
    .unwrap();
    assert_eq!(group.task_rewards, vec![0.0, 0.0]);

    // Rewards (1, 0) give advantages (1, -1); with N*k = 2 each trajectory
    // contributes +-1/2 (onehot - softmax) on its first step row.
    let mut g = group.clone();
    g.task_rewards = vec![1.0, 0.0];
    g.surrogate = surrogate_reward(&g, &regime).unwrap();
    g.advantages = rloo_advantages(&g.surrogate).unwrap();
    assert_eq!(g.advantages, vec![1.0, -1.0]);
    let grad = estimate_gradient(&p, &[g], &regime).unwrap();
    let n = v.size();
    let row = 0; // window [0] after the prompt
    assert!((grad.values[row * n + a] - 0.5).abs() < 1e-12);
    assert!((grad.values[row * n + b] + 0.5).abs() < 1e-12);
    for t in 0..n {
        if t != a && t != b {
            assert!(grad.values[row * n + t].abs() < 1e-12);
        }
    }
    // The eos steps sit in rows a and b and cancel within each row.
    let ra: f64 = grad.values[a * n..(a + 1) * n].iter().sum();
    assert!(ra.abs() < 1e-12);
}

#[test]
fn entropy_of_a_uniform_three_way_step() {
    let (v, mut p) = q_policy();
    for row in p.params_mut().chunks_mut(4) {
        row.copy_from_slice(&[0.0, 0.0, 0.0, 0.0]);
    }
    // l_max 1: every response is a single token, drawn uniformly from {a, b, eos}.
    let length = LengthMode::variable(1);
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let mut r = rng(5);
    let mut groups = Vec::new();
    for _ in 0..2000 {
        let prompt = TokenSeq::prompt(vec![]);
        let samples = (0..4)
            .map(|_| {
                let t = [0, 1, v.eos_id()][r.gen_range(0..3)];
                sample(&p, &prompt, vec![t], length)
            })
            .collect();
        let inst = Instance { prompt, gold: vec![0] };
        let regime = build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), length, 4).unwrap();
        groups.push(RolloutGroup::from_samples(&spec, inst, samples, &regime).unwrap());
    }
    let h = entropy_metric(&groups, v.eos_id(), length);
    assert!((h - 3f64.ln()).abs() < 1e-12, "{h}");
}

#[test]
fn provenance_mismatch_is_an_internal_error() {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let v = spec.vocab().clone();
    let mut r = rng(1);
    let mut p = Policy::init(Arch::Tabular { context: 1, vocab: v.size() }, &v, 0).unwrap();
    randomize(&mut p, &mut r, 1.0);
    let length = LengthMode::variable(3);
    let regime = build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), length, 2).unwrap();
    let inst = spec.all_instances()[0].clone();
    let g = RolloutGroup::sample(&p, &p, &spec, &inst, &regime, &[1, 2]).unwrap();
    let mut other = p.clone();
    randomize(&mut other, &mut r, 1.0);
    assert!(matches!(estimate_gradient(&other, &[g], &regime), Err(sharpen::Error::Internal(_))));
}

/// Smaller sibling of the acceptance check: the running mean of single-group
/// estimates approaches the exact gradient at rate 1/sqrt(M).
#[test]
fn estimator_error_shrinks_like_inverse_sqrt() {
    let spec = TaskSpec::new(TaskFamily::Parity { min_len: 1, max_len: 1 }).unwrap();
    let v = spec.vocab().clone();
    let mut r = rng(8);
    let mut p = Policy::init(Arch::Tabular { context: 1, vocab: v.size() }, &v, 0).unwrap();
    randomize(&mut p, &mut r, 1.0);
    let length = LengthMode::variable(3);
    let regime = build_regime(RegimeName::TaskRl, 1.0, Beta(0.0), length, 4).unwrap();
    let inst = spec.all_instances()[1].clone();
    let space = enumerate_space(&v, 3).unwrap();
    let exact = exact_gradient(&p, &p, &regime, &spec, &inst, &space).unwrap();
    let mut sum = vec![0.0; exact.len()];
    let mut errs = Vec::new();
    for m in 1..=40_000u64 {
        let seeds: Vec<u64> = (0..4).map(|j| derive_seed(77, m, 0, j)).collect();
        let g = RolloutGroup::sample(&p, &p, &spec, &inst, &regime, &seeds).unwrap();
        let e = estimate_gradient(&p, &[g], &regime).unwrap();
        for (s, x) in sum.iter_mut().zip(&e.values) {
            *s += x;
        }
        if m == 2_500 || m == 40_000 {
            let err: f64 = sum.iter().zip(&exact.values).map(|(s, x)| (s / m as f64 - x).powi(2)).sum::<f64>().sqrt();
            errs.push(err);
        }
    }
    // 16x more samples: error should drop about 4x; allow a generous band.
    let ratio = errs[0] / errs[1];
    assert!(ratio > 2.0 && ratio < 8.0, "errors {errs:?}");
}
