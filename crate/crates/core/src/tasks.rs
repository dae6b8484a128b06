//! Synthetic verifiable tasks and noisy pretraining corpora.
//!
//! Every response has the shape `~ ... ~ <ans> answer <eos>`: an optional run of
//! filler tokens, the answer delimiter, then the answer. Verification ignores
//! everything before the first delimiter.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, input_err, Result};
use crate::model::{truncate_at_eos, TokenId, TokenSeq, Vocab};
use crate::trainflow::seed::mix_words;

pub const ANSWER_SYMBOL: &str = "<ans>";
pub const FILLER_SYMBOL: &str = "~";

/// Salt for split hashing; splits never depend on run seeds.
const SPLIT_SALT: u64 = 0x5EED_0517;
const TRAIN_FRACTION: f64 = 0.6;
const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskFamily {
    /// Prompt `x + y`, answer `(x + y) mod modulus`.
    ModAdd { modulus: usize },
    /// Prompt a string over the first `alphabet` letters, answer the reversed string.
    Reverse { alphabet: usize, min_len: usize, max_len: usize },
    /// Prompt a bit string, answer its xor.
    Parity { min_len: usize, max_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub prompt: TokenSeq,
    pub gold: Vec<TokenId>,
}

/// Distribution over demonstration shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerbosityProfile {
    /// `filler_weights[f]` is the relative weight of `f` filler tokens.
    pub filler_weights: Vec<f64>,
    /// Share of noisy demonstrations rendered as a bare `<eos>` instead of a wrong answer.
    #[serde(default)]
    pub abstain_share: f64,
}

impl VerbosityProfile {
    pub fn uniform(max_filler: usize) -> Self {
        Self { filler_weights: vec![1.0; max_filler + 1], abstain_share: 0.0 }
    }

    pub fn max_filler(&self) -> usize {
        self.filler_weights.len().saturating_sub(1)
    }

    fn validate(&self) -> Result<()> {
        if self.filler_weights.is_empty()
            || self.filler_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.filler_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(config_err!("filler_weights must be nonnegative with positive sum"));
        }
        if !(0.0..=1.0).contains(&self.abstain_share) {
            return Err(config_err!("abstain_share must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoPair {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<DemoPair>,
    pub noise_rate: f64,
    pub verbosity: VerbosityProfile,
}

/// A task family together with the vocab every policy on it shares.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    family: TaskFamily,
    vocab: Vocab,
    answer_id: TokenId,
    filler_id: TokenId,
}

impl TaskSpec {
    pub fn new(family: TaskFamily) -> Result<Self> {
        let mut symbols: Vec<String> = match family {
            TaskFamily::ModAdd { modulus } => {
                if !(2..=9).contains(&modulus) {
                    return Err(config_err!("modadd modulus must be in 2..=9, got {modulus}"));
                }
                let mut s: Vec<String> = (0..modulus).map(|d| d.to_string()).collect();
                s.push("+".into());
                s
            }
            TaskFamily::Reverse { alphabet, min_len, max_len } => {
                if !(1..=26).contains(&alphabet) {
                    return Err(config_err!("reverse alphabet must be in 1..=26, got {alphabet}"));
                }
                check_len_range(min_len, max_len)?;
                (0..alphabet).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
            }
            TaskFamily::Parity { min_len, max_len } => {
                check_len_range(min_len, max_len)?;
                vec!["0".into(), "1".into()]
            }
        };
        symbols.push(ANSWER_SYMBOL.into());
        symbols.push(FILLER_SYMBOL.into());
        let vocab = Vocab::with_specials(&symbols)?;
        let answer_id = vocab.id(ANSWER_SYMBOL).expect("answer symbol present");
        let filler_id = vocab.id(FILLER_SYMBOL).expect("filler symbol present");
        Ok(Self { family, vocab, answer_id, filler_id })
    }

    pub fn family(&self) -> TaskFamily {
        self.family
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn answer_id(&self) -> TokenId {
        self.answer_id
    }

    pub fn filler_id(&self) -> TokenId {
        self.filler_id
    }

    /// Longest gold answer in tokens.
    pub fn max_answer_len(&self) -> usize {
        match self.family {
            TaskFamily::ModAdd { .. } | TaskFamily::Parity { .. } => 1,
            TaskFamily::Reverse { max_len, .. } => max_len,
        }
    }

    /// Length of the shortest response that can carry every gold answer.
    pub fn min_l_max(&self) -> usize {
        self.max_answer_len() + 2
    }

    /// Every prompt of the family, in a fixed order.
    pub fn all_instances(&self) -> Vec<Instance> {
        let mut out = Vec::new();
        match self.family {
            TaskFamily::ModAdd { modulus } => {
                let plus = self.vocab.id("+").expect("plus present");
                for x in 0..modulus {
                    for y in 0..modulus {
                        out.push(Instance {
                            prompt: TokenSeq::prompt(vec![x, plus, y]),
                            gold: vec![(x + y) % modulus],
                        });
                    }
                }
            }
            TaskFamily::Reverse { alphabet, min_len, max_len } => {
                for len in min_len..=max_len {
                    for s in all_strings(alphabet, len) {
                        let gold = s.iter().rev().copied().collect();
                        out.push(Instance { prompt: TokenSeq::prompt(s), gold });
                    }
                }
            }
            TaskFamily::Parity { min_len, max_len } => {
                for len in min_len..=max_len {
                    for s in all_strings(2, len) {
                        let gold = vec![s.iter().fold(0, |a, &b| a ^ b)];
                        out.push(Instance { prompt: TokenSeq::prompt(s), gold });
                    }
                }
            }
        }
        out
    }

    /// Split an instance belongs to, decided by hashing its prompt.
    pub fn split_of(&self, instance: &Instance) -> Split {
        let mut words = vec![SPLIT_SALT];
        words.extend(instance.prompt.ids.iter().map(|&t| t as u64));
        let u = (mix_words(&words) >> 11) as f64 / (1u64 << 53) as f64;
        if u < TRAIN_FRACTION {
            Split::Train
        } else if u < TRAIN_FRACTION + VALIDATION_FRACTION {
            Split::Validation
        } else {
            Split::Test
        }
    }

    /// All instances of one split, in the order of [`all_instances`](Self::all_instances).
    pub fn split_instances(&self, split: Split) -> Vec<Instance> {
        self.all_instances().into_iter().filter(|i| self.split_of(i) == split).collect()
    }

    /// `n` instances drawn uniformly with replacement from one split.
    pub fn generate_instances(&self, split: Split, n: usize, seed: u64) -> Result<Vec<Instance>> {
        if n == 0 {
            return Err(config_err!("instance count must be at least 1"));
        }
        let pool = self.split_instances(split);
        if pool.is_empty() {
            return Err(config_err!("split {split:?} is empty for {:?}", self.family));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect())
    }

    /// `~^filler <ans> answer <eos>`.
    pub fn render_response(&self, filler: usize, answer: &[TokenId]) -> Vec<TokenId> {
        let mut r = vec![self.filler_id; filler];
        r.push(self.answer_id);
        r.extend_from_slice(answer);
        r.push(self.vocab.eos_id());
        r
    }

    /// Answer span after the first `<ans>`, read up to the first `<eos>`.
    /// `None` when the response never emits `<ans>`.
    pub fn extract_answer(&self, response: &[TokenId]) -> Option<Vec<TokenId>> {
        let eos = self.vocab.eos_id();
        let head = truncate_at_eos(&TokenSeq::response(response.to_vec()), eos).ids;
        let start = head.iter().position(|&t| t == self.answer_id)?;
        let body = &head[start + 1..];
        let answer = match body.last() {
            Some(&t) if t == eos => &body[..body.len() - 1],
            _ => body,
        };
        Some(answer.to_vec())
    }

    /// Binary task reward. Total: malformed responses score 0.
    pub fn verify(&self, response: &[TokenId], instance: &Instance) -> f64 {
        match self.extract_answer(response) {
            Some(answer) if answer == instance.gold => 1.0,
            _ => 0.0,
        }
    }

    fn wrong_answer(&self, instance: &Instance, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        match self.family {
            TaskFamily::ModAdd { modulus } => {
                let d = rng.gen_range(0..modulus - 1);
                vec![if d >= instance.gold[0] { d + 1 } else { d }]
            }
            TaskFamily::Parity { .. } => vec![1 - instance.gold[0]],
            TaskFamily::Reverse { alphabet, .. } => {
                let len = instance.gold.len();
                let total = alphabet.pow(len as u32);
                let gold_index = instance.gold.iter().fold(0, |a, &t| a * alphabet + t);
                let mut pick = rng.gen_range(0..total - 1);
                if pick >= gold_index {
                    pick += 1;
                }
                let mut out = vec![0; len];
                for slot in out.iter_mut().rev() {
                    *slot = pick % alphabet;
                    pick /= alphabet;
                }
                out
            }
        }
    }

    /// Noisy demonstrations over prompts drawn from the whole family.
    ///
    /// A demonstration is correct with probability `1 - noise_rate`. A noisy one is
    /// a bare `<eos>` with probability `abstain_share`, otherwise a uniformly chosen
    /// wrong answer. Filler length follows `verbosity.filler_weights`.
    pub fn generate_pretrain_corpus(
        &self,
        n: usize,
        noise_rate: f64,
        verbosity: &VerbosityProfile,
        l_max: usize,
        seed: u64,
    ) -> Result<Corpus> {
        if n == 0 {
            return Err(config_err!("corpus size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(config_err!("noise_rate must lie in [0, 1], got {noise_rate}"));
        }
        verbosity.validate()?;
        let longest = verbosity.max_filler() + self.min_l_max();
        if longest > l_max {
            return Err(config_err!("verbosity profile yields responses of {longest} tokens > l_max {l_max}"));
        }
        if let TaskFamily::Reverse { alphabet: 1, .. } = self.family {
            if noise_rate > 0.0 && verbosity.abstain_share < 1.0 {
                return Err(config_err!("reverse over a one-letter alphabet has no wrong answers"));
            }
        }
        let pool = self.all_instances();
        let total_weight: f64 = verbosity.filler_weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let inst = &pool[rng.gen_range(0..pool.len())];
            let mut u = rng.gen::<f64>() * total_weight;
            let mut filler = verbosity.max_filler();
            for (f, &w) in verbosity.filler_weights.iter().enumerate() {
                if u < w {
                    filler = f;
                    break;
                }
                u -= w;
            }
            let noisy = rng.gen::<f64>() < noise_rate;
            let response = if !noisy {
                self.render_response(filler, &inst.gold)
            } else if rng.gen::<f64>() < verbosity.abstain_share {
                vec![self.vocab.eos_id()]
            } else {
                let wrong = self.wrong_answer(inst, &mut rng);
                self.render_response(filler, &wrong)
            };
            pairs.push(DemoPair { prompt: inst.prompt.ids.clone(), response });
        }
        Ok(Corpus { pairs, noise_rate, verbosity: verbosity.clone() })
    }
}

fn check_len_range(min_len: usize, max_len: usize) -> Result<()> {
    if min_len == 0 || min_len > max_len || max_len > 8 {
        return Err(config_err!("length range {min_len}..={max_len} must satisfy 1 <= min <= max <= 8"));
    }
    Ok(())
}

fn all_strings(alphabet: usize, len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..alphabet).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    prompt: Vec<TokenId>,
    gold: Vec<TokenId>,
}

pub fn write_instances_jsonl(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        let rec = InstanceRecord { prompt: inst.prompt.ids.clone(), gold: inst.gold.clone() };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_instances_jsonl(path: &Path) -> Result<Vec<Instance>> {
    read_jsonl::<InstanceRecord>(path)?
        .into_iter()
        .map(|r| Ok(Instance { prompt: TokenSeq::prompt(r.prompt), gold: r.gold }))
        .collect()
}

pub fn write_corpus_jsonl(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for pair in &corpus.pairs {
        writeln!(f, "{}", serde_json::to_string(pair)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_corpus_pairs_jsonl(path: &Path) -> Result<Vec<DemoPair>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| input_err!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}
