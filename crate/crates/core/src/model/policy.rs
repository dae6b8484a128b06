use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab};
use crate::error::{config_err, input_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tabular,
    Neural,
}

/// Shape of a policy. Both backends condition on the last `context` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// One free logit vector per distinct context window.
    Tabular { context: usize, vocab: usize },
    /// Concatenated embeddings -> tanh hidden layer -> linear logits.
    Neural { context: usize, embed: usize, hidden: usize, vocab: usize },
}

impl Arch {
    pub fn backend(&self) -> Backend {
        match self {
            Arch::Tabular { .. } => Backend::Tabular,
            Arch::Neural { .. } => Backend::Neural,
        }
    }

    pub fn context(&self) -> usize {
        match *self {
            Arch::Tabular { context, .. } | Arch::Neural { context, .. } => context,
        }
    }

    pub fn vocab(&self) -> usize {
        match *self {
            Arch::Tabular { vocab, .. } | Arch::Neural { vocab, .. } => vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context() == 0 {
            return Err(config_err!("context window must be at least 1"));
        }
        if self.vocab() < 3 {
            return Err(config_err!("vocab size must be at least 3"));
        }
        match *self {
            Arch::Tabular { context, vocab } => {
                let rows = (vocab as u128).checked_pow(context as u32);
                match rows {
                    Some(r) if r * (vocab as u128) <= 50_000_000 => Ok(()),
                    _ => Err(config_err!("tabular table {vocab}^{context} x {vocab} is too large")),
                }
            }
            Arch::Neural { embed, hidden, .. } => {
                if embed == 0 || hidden == 0 {
                    return Err(config_err!("neural embed and hidden dims must be positive"));
                }
                Ok(())
            }
        }
    }

    /// Number of parameters in the flat layout.
    ///
    /// Tabular: `vocab^context` rows of `vocab` logits, row index is the window
    /// read as a base-`vocab` number (oldest token most significant).
    ///
    /// Neural: embedding `[vocab][embed]`, hidden weights `[context*embed][hidden]`,
    /// hidden bias `[hidden]`, output weights `[hidden][vocab]`, output bias `[vocab]`.
    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Tabular { context, vocab } => vocab.pow(context as u32) * vocab,
            Arch::Neural { context, embed, hidden, vocab } => {
                vocab * embed + context * embed * hidden + hidden + hidden * vocab + vocab
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct NeuralLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl NeuralLayout {
    fn new(context: usize, embed: usize, hidden: usize, vocab: usize) -> Self {
        let w1 = vocab * embed;
        let b1 = w1 + context * embed * hidden;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * vocab;
        Self { w1, b1, w2, b2 }
    }
}

/// Intermediate activations of one neural forward pass.
struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

/// Autoregressive next-token model over a fixed-width context window.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    arch: Arch,
    eos_id: TokenId,
    pad_id: TokenId,
    params: Vec<f64>,
}

impl Policy {
    /// Tabular logits start at zero; neural weights are `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(arch: Arch, vocab: &Vocab, seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.vocab() != vocab.size() {
            return Err(config_err!("arch vocab size {} does not match vocab of size {}", arch.vocab(), vocab.size()));
        }
        let params = match arch {
            Arch::Tabular { .. } => vec![0.0; arch.param_count()],
            Arch::Neural { context, embed, hidden, vocab } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lay = NeuralLayout::new(context, embed, hidden, vocab);
                let mut p = Vec::with_capacity(arch.param_count());
                let mut fill = |n: usize, fan_in: usize| {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..n {
                        p.push(rng.gen_range(-bound..bound));
                    }
                };
                fill(lay.w1, vocab);
                fill(lay.b1 - lay.w1, context * embed);
                fill(hidden, context * embed);
                fill(hidden * vocab, hidden);
                fill(vocab, hidden);
                p
            }
        };
        Ok(Self { arch, eos_id: vocab.eos_id(), pad_id: vocab.pad_id(), params })
    }

    pub fn from_parts(arch: Arch, eos_id: TokenId, pad_id: TokenId, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if eos_id >= arch.vocab() || pad_id >= arch.vocab() || eos_id == pad_id {
            return Err(config_err!("invalid eos/pad ids ({eos_id}, {pad_id})"));
        }
        if params.len() != arch.param_count() {
            return Err(config_err!("params length {} does not match arch ({})", params.len(), arch.param_count()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(config_err!("non-finite parameter"));
        }
        Ok(Self { arch, eos_id, pad_id, params })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn backend(&self) -> Backend {
        self.arch.backend()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }

    pub fn vocab_size(&self) -> usize {
        self.arch.vocab()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Last `context` tokens of `history`, left-padded with pad.
    pub fn window(&self, history: &[TokenId]) -> Vec<TokenId> {
        let k = self.arch.context();
        let mut w = vec![self.pad_id; k.saturating_sub(history.len())];
        w.extend_from_slice(&history[history.len().saturating_sub(k)..]);
        w
    }

    fn check_tokens(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.vocab_size()) {
            Some(t) => Err(input_err!("token id {t} out of range for vocab of size {}", self.vocab_size())),
            None => Ok(()),
        }
    }

    fn table_row(&self, window: &[TokenId]) -> usize {
        let v = self.vocab_size();
        window.iter().fold(0, |acc, &t| acc * v + t) * v
    }

    fn forward(&self, window: &[TokenId]) -> Forward {
        let Arch::Neural { context, embed, hidden, vocab } = self.arch else { unreachable!("forward is neural-only") };
        let lay = NeuralLayout::new(context, embed, hidden, vocab);
        let p = &self.params;
        let mut input = Vec::with_capacity(context * embed);
        for &t in window {
            input.extend_from_slice(&p[t * embed..(t + 1) * embed]);
        }
        let mut h = p[lay.b1..lay.b1 + hidden].to_vec();
        for (i, &x) in input.iter().enumerate() {
            let row = &p[lay.w1 + i * hidden..lay.w1 + (i + 1) * hidden];
            for (hj, &w) in h.iter_mut().zip(row) {
                *hj += x * w;
            }
        }
        for hj in h.iter_mut() {
            *hj = hj.tanh();
        }
        let mut logits = p[lay.b2..lay.b2 + vocab].to_vec();
        for (j, &hj) in h.iter().enumerate() {
            let row = &p[lay.w2 + j * vocab..lay.w2 + (j + 1) * vocab];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += hj * w;
            }
        }
        Forward { input, hidden: h, logits }
    }

    /// Raw logits for a context window of exactly `context` tokens.
    pub fn window_logits(&self, window: &[TokenId]) -> Vec<f64> {
        debug_assert_eq!(window.len(), self.arch.context());
        match self.arch {
            Arch::Tabular { vocab, .. } => {
                let row = self.table_row(window);
                self.params[row..row + vocab].to_vec()
            }
            Arch::Neural { .. } => self.forward(window).logits,
        }
    }

    /// Next-token distribution given the full history (prompt then response prefix).
    /// The pad entry is always exactly zero.
    pub fn next_token_dist(&self, history: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(history)?;
        Ok(masked_softmax(&self.window_logits(&self.window(history)), self.pad_id, 1.0))
    }

    /// Like [`next_token_dist`](Self::next_token_dist) with logits divided by `temperature`.
    pub fn next_token_dist_tempered(&self, history: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
        self.check_tokens(history)?;
        Ok(masked_softmax(&self.window_logits(&self.window(history)), self.pad_id, temperature))
    }

    /// Adds `scale * d log p(target | window) / d params` into `grad`.
    pub fn accumulate_step_grad(&self, window: &[TokenId], target: TokenId, scale: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        match self.arch {
            Arch::Tabular { vocab, .. } => {
                let row = self.table_row(window);
                let probs = masked_softmax(&self.params[row..row + vocab], self.pad_id, 1.0);
                for (v, &pv) in probs.iter().enumerate() {
                    if v == self.pad_id {
                        continue;
                    }
                    let ind = if v == target { 1.0 } else { 0.0 };
                    grad[row + v] += scale * (ind - pv);
                }
            }
            Arch::Neural { context, embed, hidden, vocab } => {
                let lay = NeuralLayout::new(context, embed, hidden, vocab);
                let fwd = self.forward(window);
                let probs = masked_softmax(&fwd.logits, self.pad_id, 1.0);
                let dlogits: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(
                        |(v, &pv)| {
                            if v == self.pad_id {
                                0.0
                            } else {
                                scale * (if v == target { 1.0 } else { 0.0 } - pv)
                            }
                        },
                    )
                    .collect();
                let p = &self.params;
                for (v, &d) in dlogits.iter().enumerate() {
                    grad[lay.b2 + v] += d;
                }
                let mut dz = vec![0.0; hidden];
                for j in 0..hidden {
                    let row = lay.w2 + j * vocab;
                    let hj = fwd.hidden[j];
                    let mut dh = 0.0;
                    for v in 0..vocab {
                        grad[row + v] += hj * dlogits[v];
                        dh += p[row + v] * dlogits[v];
                    }
                    dz[j] = dh * (1.0 - hj * hj);
                }
                for j in 0..hidden {
                    grad[lay.b1 + j] += dz[j];
                }
                for (i, &x) in fwd.input.iter().enumerate() {
                    let row = lay.w1 + i * hidden;
                    let mut dx = 0.0;
                    for j in 0..hidden {
                        grad[row + j] += x * dz[j];
                        dx += p[row + j] * dz[j];
                    }
                    let slot = i / embed;
                    let e = i % embed;
                    grad[window[slot] * embed + e] += dx;
                }
            }
        }
    }
}

/// Softmax over every entry except `pad`, which gets probability 0.
pub fn masked_softmax(logits: &[f64], pad: TokenId, temperature: f64) -> Vec<f64> {
    let max = logits.iter().enumerate().filter(|&(i, _)| i != pad).map(|(_, &l)| l).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> =
        logits.iter().enumerate().map(|(i, &l)| if i == pad { 0.0 } else { ((l - max) / temperature).exp() }).collect();
    let z: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= z;
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchFile {
    context: usize,
    vocab: usize,
    eos_id: TokenId,
    pad_id: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    backend: Backend,
    arch: ArchFile,
    params: Vec<f64>,
}

impl Serialize for Policy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (embed, hidden) = match self.arch {
            Arch::Tabular { .. } => (None, None),
            Arch::Neural { embed, hidden, .. } => (Some(embed), Some(hidden)),
        };
        PolicyFile {
            backend: self.backend(),
            arch: ArchFile {
                context: self.arch.context(),
                vocab: self.arch.vocab(),
                eos_id: self.eos_id,
                pad_id: self.pad_id,
                embed,
                hidden,
            },
            params: self.params.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Policy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = PolicyFile::deserialize(d)?;
        let arch = match f.backend {
            Backend::Tabular => Arch::Tabular { context: f.arch.context, vocab: f.arch.vocab },
            Backend::Neural => Arch::Neural {
                context: f.arch.context,
                vocab: f.arch.vocab,
                embed: f.arch.embed.ok_or_else(|| D::Error::missing_field("embed"))?,
                hidden: f.arch.hidden.ok_or_else(|| D::Error::missing_field("hidden"))?,
            },
        };
        Policy::from_parts(arch, f.arch.eos_id, f.arch.pad_id, f.params).map_err(D::Error::custom)
    }
}

impl Policy {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from)
    }
}
