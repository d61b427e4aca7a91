//! Deterministic toy causal LM.
//!
//! Architecture: token embeddings, one causal attention layer whose heads
//! carry fixed recency penalties (ALiBi-style, so some heads see the whole
//! context and some only the last few tokens), a tanh mixing layer, and the
//! structural induction head from [`super::copy_head`]. The hidden state is
//! the tanh features concatenated with the induction head's predicted-token
//! code; word logits are `W_ν · h` with `W_ν` split the same way. All
//! parameters come from a seeded ChaCha stream and never change.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::copy_head::{CopyHead, CopyTrace};
use super::tokenizer::{Token, ToyTokenizer, EOS, SEPARATOR};
use super::{check_ids, check_input, dot_f32, Fingerprint, HiddenState, LmBackend, LmSession, StepOutput, WordHead};
use crate::error::{Error, Result};

const RECENCY: [f32; 6] = [0.0, 0.02, 0.06, 0.15, 0.4, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    /// Width of the attention/tanh features.
    pub feature_dim: usize,
    /// Width of the induction-head code.
    pub copy_dim: usize,
    pub heads: usize,
    pub context_limit: usize,
    /// Logit given to the induction head's predicted token.
    pub copy_strength: f32,
    /// Std-dev of the feature block of the output head.
    pub head_scale: f32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            feature_dim: 96,
            copy_dim: 32,
            heads: 6,
            context_limit: 4096,
            copy_strength: 24.0,
            head_scale: 0.25,
        }
    }
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        ToyConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.feature_dim + self.copy_dim
    }

    fn validate(&self) -> Result<()> {
        let d = self.hidden_dim();
        if !(32..=128).contains(&d) {
            return Err(Error::Config(format!("hidden dim {d} outside [32, 128]")));
        }
        if self.heads == 0 || self.heads > RECENCY.len() || !self.feature_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads cannot split feature dim {}",
                self.heads, self.feature_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ToyLm {
    config: ToyConfig,
    tokenizer: ToyTokenizer,
    copy: CopyHead,
    head_dim: usize,
    embed: Vec<f32>,
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    mix: Vec<f32>,
    mix_bias: Vec<f32>,
    /// |V| × d output head.
    unembed: Vec<f32>,
    fingerprint: Fingerprint,
}

impl ToyLm {
    pub fn new(config: ToyConfig) -> Result<Self> {
        Self::with_tokenizer(config, ToyTokenizer::default())
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(ToyConfig::with_seed(seed)).expect("default toy config is valid")
    }

    pub fn with_tokenizer(config: ToyConfig, tokenizer: ToyTokenizer) -> Result<Self> {
        config.validate()?;
        let v = tokenizer.vocab_size();
        let f = config.feature_dim;
        let c = config.copy_dim;
        let d = config.hidden_dim();
        let hd = f / config.heads;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut gauss = |n: usize, std: f32| -> Vec<f32> {
            let dist = Normal::new(0.0f32, std).expect("positive std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let fan = 1.0 / (f as f32).sqrt();
        let embed = gauss(v * f, 1.0);
        let wq = gauss(config.heads * hd * f, fan);
        let wk = gauss(config.heads * hd * f, fan);
        let wv = gauss(config.heads * hd * f, fan);
        let wo = gauss(f * f, fan);
        let mix = gauss(f * f, fan);
        let mix_bias = gauss(f, 0.1);
        let feature_head = gauss(v * f, config.head_scale);
        let mut codes = gauss(v * c, 1.0);
        for row in codes.chunks_exact_mut(c) {
            let norm = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let mut unembed = Vec::with_capacity(v * d);
        for w in 0..v {
            unembed.extend_from_slice(&feature_head[w * f..(w + 1) * f]);
            unembed.extend(codes[w * c..(w + 1) * c].iter().map(|x| x * config.copy_strength));
        }
        let digits = (0..v as u32).map(|i| tokenizer.is_digit(i)).collect();
        let copy = CopyHead::new(digits, tokenizer.id_of("."), SEPARATOR);

        let mut lm = ToyLm {
            config,
            tokenizer,
            copy,
            head_dim: hd,
            embed,
            wq,
            wk,
            wv,
            wo,
            mix,
            mix_bias,
            unembed,
            fingerprint: Fingerprint::default(),
        };
        lm.fingerprint = lm.compute_fingerprint();
        Ok(lm)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &ToyTokenizer {
        &self.tokenizer
    }

    fn compute_fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(b"toy-lm/v1");
        let c = &self.config;
        for x in [c.feature_dim, c.copy_dim, c.heads, c.context_limit] {
            h.update((x as u64).to_le_bytes());
        }
        h.update(c.copy_strength.to_le_bytes());
        for id in 0..self.tokenizer.vocab_size() as u32 {
            h.update(self.tokenizer.piece(id).unwrap_or("").as_bytes());
            h.update([0]);
        }
        for block in [
            &self.embed,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.mix,
            &self.mix_bias,
            &self.unembed,
        ] {
            for x in block.iter() {
                h.update(x.to_le_bytes());
            }
        }
        Fingerprint(h.finalize().into())
    }

    fn new_state(&self) -> ToyState {
        ToyState {
            ids: Vec::new(),
            keys: Vec::new(),
            values: Vec::new(),
            copy: self.copy.start(),
            last_hidden: None,
        }
    }

    /// Feeds one token and returns the hidden state at its position.
    fn step(&self, state: &mut ToyState, id: u32) -> Vec<f32> {
        let f = self.config.feature_dim;
        let hd = self.head_dim;
        let heads = self.config.heads;
        let emb = &self.embed[id as usize * f..(id as usize + 1) * f];
        let project = |w: &[f32]| -> Vec<f32> { w.chunks_exact(f).map(|row| dot_f32(row, emb)).collect() };
        let q = project(&self.wq);
        state.keys.extend(project(&self.wk));
        state.values.extend(project(&self.wv));
        state.ids.push(id);
        let n = state.ids.len();
        let i = n - 1;

        let scale = 1.0 / (hd as f32).sqrt();
        let mut attended = vec![0.0f32; f];
        let mut scores = vec![0.0f32; n];
        for h in 0..heads {
            let qh = &q[h * hd..(h + 1) * hd];
            let slope = RECENCY[h];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &state.keys[j * f + h * hd..j * f + (h + 1) * hd];
                *s = dot_f32(qh, k) * scale - slope * (i - j) as f32;
                max = max.max(*s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let out = &mut attended[h * hd..(h + 1) * hd];
            for (j, s) in scores.iter().enumerate() {
                let w = s / total;
                let v = &state.values[j * f + h * hd..j * f + (h + 1) * hd];
                for (o, x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
            // per-head RMS normalisation keeps long-range averages visible
            let rms = (out.iter().map(|x| x * x).sum::<f32>() / hd as f32).sqrt().max(1e-6);
            out.iter_mut().for_each(|x| *x /= rms);
        }
        let mut resid: Vec<f32> = emb.iter().map(|x| 0.5 * x).collect();
        for (r, row) in resid.iter_mut().zip(self.wo.chunks_exact(f)) {
            *r += dot_f32(row, &attended);
        }
        let mut hidden: Vec<f32> = self
            .mix
            .chunks_exact(f)
            .zip(&self.mix_bias)
            .map(|(row, b)| (dot_f32(row, &resid) + b).tanh())
            .collect();

        let c = self.config.copy_dim;
        match state.copy.push(&self.copy, id) {
            Some(pred) => {
                let d = self.config.hidden_dim();
                let code = &self.unembed[pred as usize * d + f..(pred as usize + 1) * d];
                hidden.extend(code.iter().map(|x| x / self.config.copy_strength));
            }
            None => hidden.extend(std::iter::repeat_n(0.0, c)),
        }
        hidden
    }
}

impl WordHead for ToyLm {
    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim()
    }

    fn word_logits(&self, hidden: &[f32]) -> Vec<f32> {
        self.unembed
            .chunks_exact(self.config.hidden_dim())
            .map(|row| dot_f32(row, hidden))
            .collect()
    }
}

impl LmBackend for ToyLm {
    fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim()
    }

    fn context_limit(&self) -> usize {
        self.config.context_limit
    }

    fn eos_id(&self) -> Option<u32> {
        Some(EOS)
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    fn tokenize_with_offsets(&self, text: &str) -> Vec<Token> {
        self.tokenizer.tokenize_with_offsets(text)
    }

    fn detokenize(&self, ids: &[u32]) -> String {
        self.tokenizer.detokenize(ids)
    }

    fn forward(&self, ids: &[u32]) -> Result<Vec<StepOutput>> {
        self.forward_hidden(ids)?
            .into_iter()
            .map(|hidden| {
                let logits = self.word_logits(hidden.values());
                Ok(StepOutput { hidden, logits })
            })
            .collect()
    }

    fn forward_hidden(&self, ids: &[u32]) -> Result<Vec<HiddenState>> {
        check_input(ids, LmBackend::vocab_size(self), self.context_limit())?;
        let mut state = self.new_state();
        ids.iter()
            .map(|&id| HiddenState::new(self.step(&mut state, id)))
            .collect()
    }

    fn session(&self) -> Box<dyn LmSession<'_> + '_> {
        Box::new(ToySession {
            lm: self,
            state: self.new_state(),
        })
    }

    fn as_dyn(&self) -> &dyn LmBackend {
        self
    }
}

#[derive(Clone)]
struct ToyState {
    ids: Vec<u32>,
    keys: Vec<f32>,
    values: Vec<f32>,
    copy: CopyTrace,
    last_hidden: Option<Vec<f32>>,
}

struct ToySession<'a> {
    lm: &'a ToyLm,
    state: ToyState,
}

impl<'a> LmSession<'a> for ToySession<'a> {
    fn push(&mut self, ids: &[u32]) -> Result<()> {
        check_ids(ids, LmBackend::vocab_size(self.lm))?;
        let len = self.state.ids.len() + ids.len();
        if len > self.lm.context_limit() {
            return Err(Error::ContextTooLong {
                len,
                limit: self.lm.context_limit(),
            });
        }
        for &id in ids {
            let h = self.lm.step(&mut self.state, id);
            self.state.last_hidden = Some(h);
        }
        Ok(())
    }

    fn tokens(&self) -> &[u32] {
        &self.state.ids
    }

    fn output(&mut self) -> Result<StepOutput> {
        let h = self.state.last_hidden.clone().ok_or(Error::EmptySequence)?;
        let logits = self.lm.word_logits(&h);
        Ok(StepOutput {
            hidden: HiddenState::new(h)?,
            logits,
        })
    }

    fn hidden(&mut self) -> Result<HiddenState> {
        let h = self.state.last_hidden.clone().ok_or(Error::EmptySequence)?;
        HiddenState::new(h)
    }

    fn fork(&self) -> Box<dyn LmSession<'a> + 'a> {
        Box::new(ToySession {
            lm: self.lm,
            state: self.state.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_model() {
        let a = ToyLm::from_seed(7);
        let b = ToyLm::from_seed(7);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), ToyLm::from_seed(8).fingerprint());
        let ids: Vec<u32> = a.tokenize("the cat sat on 12 mats");
        assert_eq!(a.forward(&ids).unwrap(), b.forward(&ids).unwrap());
    }

    #[test]
    fn forward_is_deterministic_and_sized() {
        let lm = ToyLm::from_seed(7);
        let ids = lm.tokenize("the old river 345 is red");
        assert_eq!(ids.len(), 13);
        let a = lm.forward(&ids).unwrap();
        let b = lm.forward(&ids).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), ids.len());
        assert!(a
            .iter()
            .all(|o| o.hidden.dim() == 128 && o.logits.len() == lm.tokenizer().vocab_size()));
    }

    #[test]
    fn causality_prefix_outputs_agree() {
        let lm = ToyLm::from_seed(7);
        let abc = lm.tokenize("ABC");
        let abd = lm.tokenize("ABD");
        let x = lm.forward(&abc).unwrap();
        let y = lm.forward(&abd).unwrap();
        assert_eq!(x[0], y[0]);
        assert_eq!(x[1], y[1]);
    }

    #[test]
    fn logits_equal_head_times_hidden() {
        let lm = ToyLm::from_seed(3);
        let ids = lm.tokenize("what is 2 plus 2");
        for out in lm.forward(&ids).unwrap() {
            assert_eq!(out.logits, lm.word_logits(out.hidden.values()));
        }
    }

    #[test]
    fn session_matches_forward() {
        let lm = ToyLm::from_seed(11);
        let ids = lm.tokenize("Question: What is 3 plus 4?\nAnswer: 7.\n\nQuestion: What is 5 plus 6?");
        let full = lm.forward(&ids).unwrap();
        let mut s = lm.session();
        s.push(&ids[..10]).unwrap();
        let mut fork = s.fork();
        s.push(&ids[10..]).unwrap();
        assert_eq!(s.output().unwrap(), *full.last().unwrap());
        fork.push(&ids[10..]).unwrap();
        assert_eq!(fork.output().unwrap(), *full.last().unwrap());
    }

    #[test]
    fn input_errors() {
        let lm = ToyLm::new(ToyConfig {
            context_limit: 4,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(lm.forward(&[]), Err(Error::EmptySequence)));
        assert!(matches!(lm.forward(&[3; 5]), Err(Error::ContextTooLong { .. })));
        assert!(matches!(lm.forward(&[9999]), Err(Error::UnknownToken { .. })));
    }

    #[test]
    fn rejects_bad_dims() {
        let bad = ToyConfig {
            feature_dim: 200,
            ..Default::default()
        };
        assert!(ToyLm::new(bad).is_err());
    }
}
