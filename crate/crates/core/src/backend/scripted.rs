use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::tokenizer::{Token, ToyTokenizer, EOS};
use super::{check_input, Fingerprint, HiddenState, LmBackend, LmSession, StepOutput};
use crate::error::{Error, Result};

/// Table-driven backend for tests: every context it is asked about must have
/// an explicit entry.
#[derive(Clone, Debug)]
pub struct ScriptedLm {
    tokenizer: ToyTokenizer,
    dim: usize,
    table: HashMap<Vec<u32>, StepOutput>,
}

impl ScriptedLm {
    pub fn new(dim: usize) -> Self {
        Self::with_tokenizer(ToyTokenizer::default(), dim)
    }

    pub fn with_tokenizer(tokenizer: ToyTokenizer, dim: usize) -> Self {
        ScriptedLm {
            tokenizer,
            dim,
            table: HashMap::new(),
        }
    }

    pub fn tokenizer(&self) -> &ToyTokenizer {
        &self.tokenizer
    }

    pub fn insert(&mut self, context: Vec<u32>, hidden: Vec<f32>, logits: Vec<f32>) -> Result<()> {
        if hidden.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "scripted hidden state",
                expected: self.dim,
                got: hidden.len(),
            });
        }
        if logits.len() != self.vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "scripted logits",
                expected: self.vocab_size(),
                got: logits.len(),
            });
        }
        let hidden = HiddenState::new(hidden)?;
        self.table.insert(context, StepOutput { hidden, logits });
        Ok(())
    }

    /// Scripts the context `text` so that its next word is the first token
    /// of `next` with logit `strength` (all other words 0).
    pub fn script_word(&mut self, text: &str, next: &str, hidden: Vec<f32>, strength: f32) -> Result<()> {
        let ctx = self.tokenizer.tokenize(text);
        let target = if next.is_empty() {
            EOS
        } else {
            self.tokenizer.tokenize(next)[0]
        };
        let mut logits = vec![0.0; self.vocab_size()];
        logits[target as usize] = strength;
        self.insert(ctx, hidden, logits)
    }

    /// Scripts the word-by-word continuation `continuation` after `prefix`,
    /// using the same hidden state for every step.
    pub fn script_continuation(&mut self, prefix: &str, continuation: &str, hidden: Vec<f32>) -> Result<()> {
        let mut ctx = self.tokenizer.tokenize(prefix);
        for id in self.tokenizer.tokenize(continuation) {
            let mut logits = vec![0.0; self.vocab_size()];
            logits[id as usize] = 10.0;
            self.insert(ctx.clone(), hidden.clone(), logits)?;
            ctx.push(id);
        }
        Ok(())
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<&StepOutput> {
        self.table.get(ids).ok_or_else(|| Error::ScriptMiss(ids.to_vec()))
    }
}

impl LmBackend for ScriptedLm {
    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn context_limit(&self) -> usize {
        usize::MAX
    }

    fn eos_id(&self) -> Option<u32> {
        Some(EOS)
    }

    fn fingerprint(&self) -> Fingerprint {
        let mut keys: Vec<_> = self.table.iter().collect();
        keys.sort_by(|a, b| a.0.cmp(b.0));
        let mut hasher = Sha256::new();
        hasher.update(b"scripted");
        for (ctx, out) in keys {
            for id in ctx {
                hasher.update(id.to_le_bytes());
            }
            for v in out.hidden.values().iter().chain(&out.logits) {
                hasher.update(v.to_le_bytes());
            }
        }
        Fingerprint(hasher.finalize().into())
    }

    fn tokenize_with_offsets(&self, text: &str) -> Vec<Token> {
        self.tokenizer.tokenize_with_offsets(text)
    }

    fn detokenize(&self, ids: &[u32]) -> String {
        self.tokenizer.detokenize(ids)
    }

    fn forward(&self, ids: &[u32]) -> Result<Vec<StepOutput>> {
        check_input(ids, self.vocab_size(), self.context_limit())?;
        (1..=ids.len()).map(|n| self.lookup(&ids[..n]).cloned()).collect()
    }

    fn session(&self) -> Box<dyn LmSession<'_> + '_> {
        Box::new(ScriptedSession {
            lm: self,
            ids: Vec::new(),
        })
    }

    fn as_dyn(&self) -> &dyn LmBackend {
        self
    }
}

/// Only the full context is looked up, never its prefixes.
struct ScriptedSession<'a> {
    lm: &'a ScriptedLm,
    ids: Vec<u32>,
}

impl<'a> LmSession<'a> for ScriptedSession<'a> {
    fn push(&mut self, ids: &[u32]) -> Result<()> {
        super::check_ids(ids, self.lm.vocab_size())?;
        self.ids.extend_from_slice(ids);
        Ok(())
    }

    fn tokens(&self) -> &[u32] {
        &self.ids
    }

    fn output(&mut self) -> Result<StepOutput> {
        self.lm.lookup(&self.ids).cloned()
    }

    fn fork(&self) -> Box<dyn LmSession<'a> + 'a> {
        Box::new(ScriptedSession {
            lm: self.lm,
            ids: self.ids.clone(),
        })
    }
}
