//! Maximum-likelihood pretraining of the base policy on a demonstration corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config_err, Error, Result};
use crate::model::{accumulate_logprob_grad, sequence_logprob, LengthMode, Policy, TokenSeq};
use crate::tasks::Corpus;

use super::optim::{AdamState, OptimConfig};
use super::seed::derive_seed;

const PRETRAIN_STREAM: u64 = 0x7072_6574_7261_696e;

/// Pretrains and returns the final policy.
pub fn pretrain_mle(policy: &Policy, corpus: &Corpus, optim: &OptimConfig) -> Result<Policy> {
    pretrain_mle_traced(policy, corpus, optim).map(|(p, _)| p)
}

/// Pretrains and also returns the minibatch loss of every step.
///
/// Each step draws `batch_prompts` demonstrations with replacement and takes one
/// AdamW step on their mean negative log-likelihood.
pub fn pretrain_mle_traced(policy: &Policy, corpus: &Corpus, optim: &OptimConfig) -> Result<(Policy, Vec<f64>)> {
    optim.validate()?;
    if corpus.pairs.is_empty() {
        return Err(config_err!("pretraining corpus is empty"));
    }
    let l_max = corpus.pairs.iter().map(|p| p.response.len()).max().unwrap_or(1).max(1);
    let length = LengthMode::variable(l_max);
    let pairs: Vec<(TokenSeq, TokenSeq)> = corpus
        .pairs
        .iter()
        .map(|p| (TokenSeq::prompt(p.prompt.clone()), TokenSeq::response(p.response.clone())))
        .collect();

    let mut policy = policy.clone();
    let n = policy.params().len();
    let mut adam = AdamState::new(n);
    let mut losses = Vec::with_capacity(optim.steps);
    for step in 0..optim.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(optim.global_seed, step as u64, PRETRAIN_STREAM, 0));
        let batch: Vec<usize> = (0..optim.batch_prompts).map(|_| rng.gen_range(0..pairs.len())).collect();
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|&i| {
                let (prompt, response) = &pairs[i];
                let mut g = vec![0.0; n];
                let lp = sequence_logprob(&policy, prompt, response, length)?;
                accumulate_logprob_grad(&policy, prompt, response, length, -scale, &mut g)?;
                Ok((-lp * scale, g))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in &parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!("pretraining diverged at step {step} (loss {loss})")));
        }
        adam.step(optim, optim.lr_at(step), policy.params_mut(), &grad);
        losses.push(loss);
    }
    Ok((policy, losses))
}
