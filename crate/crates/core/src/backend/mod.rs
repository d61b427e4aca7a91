//! Frozen language-model backends.
//!
//! A backend maps word-token ids to per-position hidden states and word
//! logits. Backends never expose gradients; the trainer only needs the final
//! hidden state `h` and a way to turn `h` into word logits ([`WordHead`]).

mod copy_head;
mod scripted;
pub mod tokenizer;
mod toy;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use copy_head::CopyHead;
pub use scripted::ScriptedLm;
pub use tokenizer::{Token, ToyTokenizer};
pub use toy::{ToyConfig, ToyLm};

/// Last hidden state feeding the output head.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState(Vec<f32>);

impl HiddenState {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTrace(format!("hidden state entry {i} is not finite")));
        }
        Ok(HiddenState(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub hidden: HiddenState,
    pub logits: Vec<f32>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.hex()[..16])
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

/// Maps a hidden state to word logits (`W_ν · h`).
pub trait WordHead: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn word_logits(&self, hidden: &[f32]) -> Vec<f32>;
}

/// A frozen causal language model.
pub trait LmBackend: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn context_limit(&self) -> usize;
    fn eos_id(&self) -> Option<u32>;
    fn fingerprint(&self) -> Fingerprint;

    fn tokenize_with_offsets(&self, text: &str) -> Vec<Token>;
    fn detokenize(&self, ids: &[u32]) -> String;

    fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_with_offsets(text).into_iter().map(|t| t.id).collect()
    }

    /// Hidden state and word logits at every position.
    fn forward(&self, ids: &[u32]) -> Result<Vec<StepOutput>>;

    /// Hidden states only; backends may skip the head projection.
    fn forward_hidden(&self, ids: &[u32]) -> Result<Vec<HiddenState>> {
        Ok(self.forward(ids)?.into_iter().map(|o| o.hidden).collect())
    }

    /// An incremental decoding session. The default replays the whole context
    /// through [`forward`](LmBackend::forward) on every query.
    fn session(&self) -> Box<dyn LmSession<'_> + '_> {
        Box::new(ReplaySession {
            backend: self.as_dyn(),
            ids: Vec::new(),
        })
    }

    fn as_dyn(&self) -> &dyn LmBackend;
}

/// Grows a context token by token and reports the output at its last position.
pub trait LmSession<'a>: Send {
    fn push(&mut self, ids: &[u32]) -> Result<()>;
    fn tokens(&self) -> &[u32];
    fn output(&mut self) -> Result<StepOutput>;

    /// Hidden state at the last position; backends may skip the head.
    fn hidden(&mut self) -> Result<HiddenState> {
        Ok(self.output()?.hidden)
    }

    fn fork(&self) -> Box<dyn LmSession<'a> + 'a>;
}

struct ReplaySession<'a> {
    backend: &'a dyn LmBackend,
    ids: Vec<u32>,
}

impl<'a> LmSession<'a> for ReplaySession<'a> {
    fn push(&mut self, ids: &[u32]) -> Result<()> {
        check_ids(ids, self.backend.vocab_size())?;
        self.ids.extend_from_slice(ids);
        Ok(())
    }

    fn tokens(&self) -> &[u32] {
        &self.ids
    }

    fn output(&mut self) -> Result<StepOutput> {
        self.backend.forward(&self.ids)?.pop().ok_or(Error::EmptySequence)
    }

    fn fork(&self) -> Box<dyn LmSession<'a> + 'a> {
        Box::new(ReplaySession {
            backend: self.backend,
            ids: self.ids.clone(),
        })
    }
}

pub(crate) fn check_ids(ids: &[u32], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(&id) => Err(Error::UnknownToken { id, size: vocab as u32 }),
        None => Ok(()),
    }
}

pub(crate) fn check_input(ids: &[u32], vocab: usize, limit: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    if ids.len() > limit {
        return Err(Error::ContextTooLong { len: ids.len(), limit });
    }
    check_ids(ids, vocab)
}

/// A dense `|V| × d` output head stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    vocab: usize,
    dim: usize,
    weights: Vec<f32>,
}

impl DenseHead {
    pub fn new(vocab: usize, dim: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != vocab * dim {
            return Err(Error::DimensionMismatch {
                what: "head weights",
                expected: vocab * dim,
                got: weights.len(),
            });
        }
        Ok(DenseHead { vocab, dim, weights })
    }

    pub fn row(&self, word: usize) -> &[f32] {
        &self.weights[word * self.dim..(word + 1) * self.dim]
    }
}

impl WordHead for DenseHead {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn word_logits(&self, hidden: &[f32]) -> Vec<f32> {
        self.weights
            .chunks_exact(self.dim)
            .map(|row| dot_f32(row, hidden))
            .collect()
    }
}

pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
