//! Vocabularies, token sequences and autoregressive policies.

mod policy;
mod score;
mod seq;
mod vocab;

pub use policy::{masked_softmax, Arch, Backend, Policy};
pub use score::{
    accumulate_logprob_grad, scored_len, sequence_logprob, sequence_logprob_grad, validate_response, GradVector,
};
pub use seq::{truncate_at_eos, LengthKind, LengthMode, SeqKind, TokenSeq};
pub use vocab::{TokenId, Vocab};
