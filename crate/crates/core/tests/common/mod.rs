#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharpen::model::*;

/// Context-free policy q = (a: 0.5, b: 0.3, eos: 0.2) over {a, b, eos, pad}.
pub fn q_policy() -> (Vocab, Policy) {
    let v = Vocab::with_specials(&["a", "b"]).unwrap();
    let mut p = Policy::init(Arch::Tabular { context: 1, vocab: 4 }, &v, 0).unwrap();
    for row in p.params_mut().chunks_mut(4) {
        row.copy_from_slice(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.0]);
    }
    (v, p)
}

pub fn vocab(n: usize) -> Vocab {
    let syms: Vec<String> = (0..n - 2).map(|i| format!("t{i}")).collect();
    Vocab::with_specials(&syms).unwrap()
}

/// Random tabular or neural policy over a random vocab of 3..=5 tokens.
pub fn random_policy(rng: &mut ChaCha8Rng, neural: bool) -> (Vocab, Policy) {
    let n = rng.gen_range(3..=5);
    let v = vocab(n);
    let k = rng.gen_range(1..=3);
    let arch = if neural {
        Arch::Neural { context: k, embed: rng.gen_range(1..=4), hidden: rng.gen_range(1..=6), vocab: n }
    } else {
        Arch::Tabular { context: k, vocab: n }
    };
    let mut p = Policy::init(arch, &v, rng.gen()).unwrap();
    randomize(&mut p, rng, if neural { 1.5 } else { 1.0 });
    (v, p)
}

pub fn randomize(p: &mut Policy, rng: &mut ChaCha8Rng, scale: f64) {
    for x in p.params_mut() {
        *x = rng.gen_range(-scale..scale);
    }
}

pub fn random_prompt(rng: &mut ChaCha8Rng, v: &Vocab, max_len: usize) -> TokenSeq {
    let len = rng.gen_range(0..=max_len);
    let interior = v.interior_ids();
    TokenSeq::prompt((0..len).map(|_| interior[rng.gen_range(0..interior.len())]).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
