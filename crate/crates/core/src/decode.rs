//! Reasoning-mode, tool-mode and plan-mode decoding over the fused vocabulary.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{LmBackend, LmSession, StepOutput};
use crate::call::{closing_paren, parse_args, ToolCall};
use crate::data::PlanSequence;
use crate::error::{Error, Result};
use crate::tools::Executor;
use crate::train::ToolkenEmbeddings;
use crate::vocab::{FusedTokenId, TokenClass, ToolKind, ToolSpec, ToolkenVocab};

/// Re-decodes after a failed call at most this many times per step.
pub const MAX_TOOL_RETRIES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnToolError {
    ResampleExcluding,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub max_tool_calls: usize,
    /// Added to every toolken logit; `-inf` disables toolkens.
    pub toolken_bias: f32,
    pub tool_mode_demos: usize,
    pub max_arg_tokens: usize,
    pub on_tool_error: OnToolError,
    /// Generation stops once the new text ends with one of these.
    pub stop: Vec<String>,
    /// When set, only these toolkens may be emitted.
    pub enabled_tools: Option<Vec<String>>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            max_new_tokens: 64,
            max_tool_calls: 4,
            toolken_bias: 0.0,
            tool_mode_demos: 4,
            max_arg_tokens: 32,
            on_tool_error: OnToolError::ResampleExcluding,
            stop: vec!["\n\n".into()],
            enabled_tools: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be at least 1".into()));
        }
        if self.toolken_bias.is_nan() || self.toolken_bias == f32::INFINITY {
            return Err(Error::Config(format!(
                "toolken_bias must be finite or -inf, got {}",
                self.toolken_bias
            )));
        }
        if let Strategy::Sample { temperature, .. } = self.strategy {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!(
                    "temperature must be positive, got {temperature}"
                )));
            }
        }
        if self.stop.iter().any(String::is_empty) {
            return Err(Error::Config("empty stop sequence".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Eos,
    EndToolken,
    Budget,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segment {
    Text { text: String },
    Call(ToolCall),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub segments: Vec<Segment>,
    pub final_text: String,
    pub stop_reason: StopReason,
}

impl Transcript {
    /// Text segments and ok call results, in order.
    pub fn render(segments: &[Segment]) -> String {
        segments
            .iter()
            .map(|s| match s {
                Segment::Text { text } => text.as_str(),
                Segment::Call(c) => c.result_text().unwrap_or(""),
            })
            .collect()
    }

    pub fn calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Call(c) => Some(c),
            _ => None,
        })
    }

    /// Each ok call with the byte offset of its result in `final_text`.
    pub fn injected(&self) -> Vec<(&ToolCall, usize)> {
        let mut pos = 0;
        let mut out = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Text { text } => pos += text.len(),
                Segment::Call(c) => {
                    if let Some(r) = c.result_text() {
                        out.push((c, pos));
                        pos += r.len();
                    }
                }
            }
        }
        out
    }

    /// Re-executes every ok call and checks that the result is reproduced and
    /// sits at its recorded offset in `final_text`.
    pub fn check_injection(&self, vocab: &ToolkenVocab, tools: &dyn Executor) -> std::result::Result<(), String> {
        for (call, pos) in self.injected() {
            let spec = vocab
                .get(&call.tool)
                .ok_or_else(|| format!("unknown tool `{}`", call.tool))?;
            let args = call
                .parsed_args
                .as_deref()
                .ok_or_else(|| format!("ok call `{}` without arguments", call.tool))?;
            let again = tools.execute(spec, args)?;
            let recorded = call.result_text().unwrap_or_default();
            if again.text != recorded {
                return Err(format!(
                    "`{}` re-executed to {:?}, recorded {:?}",
                    call.tool, again.text, recorded
                ));
            }
            if self.final_text.get(pos..pos + recorded.len()) != Some(recorded) {
                return Err(format!("result {recorded:?} not found at offset {pos}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Outcome of tool-mode argument generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arguments {
    Closed(String),
    /// Budget or end of text reached before `)`; holds what was generated.
    Unclosed(String),
}

pub struct Decoder<'a> {
    backend: &'a dyn LmBackend,
    vocab: &'a ToolkenVocab,
    emb: &'a ToolkenEmbeddings,
    tools: &'a dyn Executor,
    config: DecodeConfig,
    enabled: Vec<bool>,
}

impl<'a> Decoder<'a> {
    pub fn new(
        backend: &'a dyn LmBackend,
        vocab: &'a ToolkenVocab,
        emb: &'a ToolkenEmbeddings,
        tools: &'a dyn Executor,
        config: DecodeConfig,
    ) -> Result<Self> {
        config.validate()?;
        emb.check_vocab(vocab)?;
        if emb.dim != backend.hidden_dim() {
            return Err(Error::DimensionMismatch {
                what: "toolken embedding dimension",
                expected: backend.hidden_dim(),
                got: emb.dim,
            });
        }
        if vocab.base_vocab_size() as usize != backend.vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "base vocabulary",
                expected: backend.vocab_size(),
                got: vocab.base_vocab_size() as usize,
            });
        }
        let enabled: Vec<bool> = match &config.enabled_tools {
            None => vec![true; vocab.len()],
            Some(names) => {
                for n in names {
                    if vocab.index_of(n).is_none() {
                        return Err(Error::UnknownTool(n.clone()));
                    }
                }
                vocab.names().map(|n| names.iter().any(|m| m == n)).collect()
            }
        };
        for (spec, &on) in vocab.tools().iter().zip(&enabled) {
            if on && spec.kind == ToolKind::FunctionWithArgs && !spec.arg_schema.is_empty() {
                if config.tool_mode_demos == 0 {
                    return Err(Error::Config(format!(
                        "tool `{}` takes arguments but tool_mode_demos is 0",
                        spec.name
                    )));
                }
                if spec.demonstrations.is_empty() {
                    return Err(Error::Config(format!("tool `{}` has no demonstrations", spec.name)));
                }
            }
        }
        Ok(Decoder {
            backend,
            vocab,
            emb,
            tools,
            config,
            enabled,
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    fn rng(&self) -> ChaCha8Rng {
        match self.config.strategy {
            Strategy::Greedy => ChaCha8Rng::seed_from_u64(0),
            Strategy::Sample { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Word logits followed by biased toolken logits; toolkens rejected by
    /// `allow` are `-inf`.
    pub fn fused_logits(&self, out: &StepOutput, allow: &dyn Fn(usize) -> bool) -> Result<Vec<f64>> {
        let mut z: Vec<f64> = out.logits.iter().map(|&x| x as f64).collect();
        let tk = self.emb.logits(out.hidden.values())?;
        z.extend(tk.iter().enumerate().map(|(j, &x)| {
            if self.enabled[j] && allow(j) {
                x as f64 + self.config.toolken_bias as f64
            } else {
                f64::NEG_INFINITY
            }
        }));
        Ok(z)
    }

    /// Softmax of [`fused_logits`](Self::fused_logits) at the strategy's
    /// temperature.
    pub fn fused_probabilities(&self, out: &StepOutput, allow: &dyn Fn(usize) -> bool) -> Result<Vec<f64>> {
        let z = self.fused_logits(out, allow)?;
        Ok(softmax(&z, self.temperature()))
    }

    fn temperature(&self) -> f64 {
        match self.config.strategy {
            Strategy::Greedy => 1.0,
            Strategy::Sample { temperature, .. } => temperature,
        }
    }

    fn pick(&self, z: &[f64], rng: &mut ChaCha8Rng) -> Option<u32> {
        match self.config.strategy {
            Strategy::Greedy => argmax(z),
            Strategy::Sample { temperature, .. } => {
                if z.iter().all(|x| *x == f64::NEG_INFINITY) {
                    return None;
                }
                let p = softmax(z, temperature);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = None;
                for (i, &pi) in p.iter().enumerate() {
                    if pi > 0.0 {
                        acc += pi;
                        last = Some(i as u32);
                        if u < acc {
                            return last;
                        }
                    }
                }
                last
            }
        }
    }

    /// Next fused token for the session's context. Toolkens rejected by
    /// `allow` are never chosen.
    pub fn next_token(
        &self,
        session: &mut dyn LmSession<'_>,
        allow: &dyn Fn(usize) -> bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<FusedTokenId> {
        let out = session.output()?;
        let z = self.fused_logits(&out, allow)?;
        let id = self.pick(&z, rng).ok_or(Error::NothingAllowed("next_token"))?;
        Ok(FusedTokenId(id))
    }

    /// The few-shot tool-mode prompt for `tool` after `context`.
    pub fn tool_prompt(&self, tool: &ToolSpec, context: &str) -> String {
        let mut p = String::new();
        for d in tool.demonstrations.iter().take(self.config.tool_mode_demos) {
            p.push_str(&d.text);
            p.push_str("\n\n");
        }
        p.push_str(context);
        p.push_str(&format!("[{}](", tool.name));
        p
    }

    /// Generates word tokens after the tool-mode prompt until an unquoted `)`.
    pub fn complete_arguments(&self, tool: &ToolSpec, context: &str, rng: &mut ChaCha8Rng) -> Result<Arguments> {
        let mut s = self.backend.session();
        s.push(&self.backend.tokenize(&self.tool_prompt(tool, context)))?;
        let eos = self.backend.eos_id();
        let mut text = String::new();
        for _ in 0..self.config.max_arg_tokens {
            let out = s.output()?;
            let z: Vec<f64> = out.logits.iter().map(|&x| x as f64).collect();
            let Some(id) = self.pick(&z, rng) else { break };
            if Some(id) == eos {
                break;
            }
            text.push_str(&self.backend.detokenize(&[id]));
            if let Some(i) = closing_paren(&text) {
                text.truncate(i);
                return Ok(Arguments::Closed(text));
            }
            s.push(&[id])?;
        }
        Ok(Arguments::Unclosed(text))
    }

    fn call_tool(&self, spec: &ToolSpec, context: &str, rng: &mut ChaCha8Rng) -> Result<ToolCall> {
        let raw = if spec.arg_schema.is_empty() {
            String::new()
        } else {
            match self.complete_arguments(spec, context, rng)? {
                Arguments::Closed(r) => r,
                Arguments::Unclosed(r) => {
                    return Ok(ToolCall::parse_error(
                        &spec.name,
                        &r,
                        "argument budget exhausted before `)`".into(),
                    ))
                }
            }
        };
        let args = match parse_args(spec, &raw) {
            Ok(a) => a,
            Err(e) => return Ok(ToolCall::parse_error(&spec.name, &raw, e.to_string())),
        };
        Ok(match self.tools.execute(spec, &args) {
            Ok(r) => ToolCall::ok(&spec.name, &raw, args, r),
            Err(e) => ToolCall::exec_error(&spec.name, &raw, args, e),
        })
    }

    /// Reasoning-mode generation from `prompt`, switching to tool mode on
    /// every function toolken and injecting results into the context.
    pub fn generate(&self, prompt: &str) -> Result<Transcript> {
        let mut rng = self.rng();
        let mut session = self.backend.session();
        session.push(&self.backend.tokenize(prompt))?;
        let eos = self.backend.eos_id();
        let base = self.vocab.base_vocab_size();

        let mut context = prompt.to_string();
        let mut segments: Vec<Segment> = Vec::new();
        let mut text = String::new();
        let mut generated = String::new();
        let mut calls = 0;
        let mut excluded: BTreeSet<usize> = BTreeSet::new();
        let mut produced = 0;
        let tools = self.vocab.tools();

        let stop_reason = loop {
            if produced >= self.config.max_new_tokens {
                break StopReason::Budget;
            }
            let calls_left = calls < self.config.max_tool_calls;
            let allow =
                |j: usize| (calls_left || tools[j].kind != ToolKind::FunctionWithArgs) && !excluded.contains(&j);
            let id = self.next_token(&mut *session, &allow, &mut rng)?;
            if id.0 < base {
                if Some(id.0) == eos {
                    break StopReason::Eos;
                }
                let piece = self.backend.detokenize(&[id.0]);
                session.push(&[id.0])?;
                produced += 1;
                excluded.clear();
                text.push_str(&piece);
                context.push_str(&piece);
                generated.push_str(&piece);
                if let Some(stop) = self.config.stop.iter().find(|s| generated.ends_with(s.as_str())) {
                    text.truncate(text.len().saturating_sub(stop.len()));
                    break StopReason::Eos;
                }
                continue;
            }
            let spec = match self.vocab.classify(id)? {
                TokenClass::Toolken { spec, .. } => spec,
                TokenClass::Word(_) => unreachable!("word ids are below the base size"),
            };
            produced += 1;
            match spec.kind {
                ToolKind::EndMarker => break StopReason::EndToolken,
                ToolKind::NoArgAction | ToolKind::NoArgObject => {
                    let r = spec.render();
                    session.push(&self.backend.tokenize(&r))?;
                    text.push_str(&r);
                    context.push_str(&r);
                    generated.push_str(&r);
                    continue;
                }
                ToolKind::FunctionWithArgs => {}
            }
            if !text.is_empty() {
                segments.push(Segment::Text {
                    text: std::mem::take(&mut text),
                });
            }
            let call = self.call_tool(spec, &context, &mut rng)?;
            calls += 1;
            if let Some(r) = call.result_text() {
                let r = r.to_string();
                segments.push(Segment::Call(call));
                session.push(&self.backend.tokenize(&r))?;
                context.push_str(&r);
                generated.push_str(&r);
                excluded.clear();
                continue;
            }
            log::debug!("tool call failed: {:?}", call);
            segments.push(Segment::Call(call));
            excluded.insert((id.0 - base) as usize);
            if self.config.on_tool_error == OnToolError::Abort || excluded.len() > MAX_TOOL_RETRIES {
                break StopReason::Error;
            }
        };
        if !text.is_empty() {
            segments.push(Segment::Text { text });
        }
        let final_text = Transcript::render(&segments);
        Ok(Transcript {
            segments,
            final_text,
            stop_reason,
        })
    }

    /// Plan-mode generation: actions (or `[END]`) at odd steps, objects at
    /// even steps, words never.
    pub fn generate_plan(&self, prompt: &str) -> Result<PlanSequence> {
        let mut rng = self.rng();
        let mut session = self.backend.session();
        session.push(&self.backend.tokenize(prompt))?;
        let kinds: Vec<ToolKind> = self.vocab.tools().iter().map(|t| t.kind).collect();
        let mut plan = Vec::new();
        let base = self.vocab.base_vocab_size() as usize;
        let mut truncated = true;
        while plan.len() < self.config.max_new_tokens {
            let action_step = plan.len() % 2 == 0;
            let allow = |j: usize| match kinds[j] {
                ToolKind::NoArgAction | ToolKind::EndMarker => action_step,
                ToolKind::NoArgObject => !action_step,
                ToolKind::FunctionWithArgs => false,
            };
            let out = session.output()?;
            let mut z = self.fused_logits(&out, &allow)?;
            z[..base].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
            let Some(id) = self.pick(&z, &mut rng) else {
                return Err(Error::NothingAllowed("generate_plan"));
            };
            let id = FusedTokenId(id);
            plan.push(id);
            let spec = &self.vocab.tools()[id.index() - base];
            if spec.kind == ToolKind::EndMarker {
                truncated = false;
                break;
            }
            session.push(&self.backend.tokenize(&spec.render()))?;
        }
        Ok(PlanSequence {
            prompt_text: prompt.to_string(),
            plan,
            truncated,
        })
    }
}

/// Index of the largest value; the lowest index wins ties. `None` when every
/// value is `-inf`.
pub fn argmax(z: &[f64]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (i, &x) in z.iter().enumerate() {
        if x == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i as u32, x));
        }
    }
    best.map(|b| b.0)
}

pub fn softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; z.len()];
    }
    let e: Vec<f64> = z.iter().map(|&x| ((x - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Fingerprint, ScriptedLm, ToyLm};
    use crate::call::CallStatus;
    use crate::call::{ArgValue, ToolResult};
    use crate::tools::{ArithOp, Toolbox};
    use crate::vocab::ArgSpec;
    use proptest::prelude::*;
    use rand::Rng;

    struct SquareTool;

    impl Executor for SquareTool {
        fn execute(&self, _: &ToolSpec, args: &[ArgValue]) -> std::result::Result<ToolResult, String> {
            let x = args[0].as_number().ok_or("not a number")?;
            Ok(ToolResult::number(x * x))
        }
    }

    const D: usize = 4;

    fn square_setup() -> (ScriptedLm, ToolkenVocab, ToolkenEmbeddings) {
        let mut lm = ScriptedLm::new(D);
        let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
        v.register(
            ToolSpec::function("square", vec![ArgSpec::number("a")], "")
                .with_demos(["the side is 3 so the area is [square](3)=9"]),
        )
        .unwrap();
        let mut emb = ToolkenEmbeddings::zeros(vec!["square".into()], D, Fingerprint::default());
        emb.row_mut(0).copy_from_slice(&[10.0, 0.0, 0.0, 0.0]);
        let tool_h = vec![1.0, 0.0, 0.0, 0.0];
        let word_h = vec![0.0, 1.0, 0.0, 0.0];
        let prompt = "16 times 16 is ";
        lm.script_word(prompt, "the", tool_h, 2.0).unwrap();
        let tp = "the side is 3 so the area is [square](3)=9\n\n16 times 16 is [square](";
        lm.script_continuation(tp, "16)", word_h.clone()).unwrap();
        lm.script_continuation("16 times 16 is 256", " square feet", word_h.clone())
            .unwrap();
        lm.script_word("16 times 16 is 256 square feet", "", word_h, 5.0)
            .unwrap();
        (lm, v, emb)
    }

    #[test]
    fn greedy_picks_dominant_toolken() {
        let (lm, v, emb) = square_setup();
        let tb = SquareTool;
        let dec = Decoder::new(&lm, &v, &emb, &tb, DecodeConfig::default()).unwrap();
        let mut s = lm.session();
        s.push(&lm.tokenize("16 times 16 is ")).unwrap();
        let id = dec.next_token(&mut *s, &|_| true, &mut dec.rng()).unwrap();
        assert_eq!(id, v.lookup("square").unwrap());
    }

    #[test]
    fn disabled_toolkens_are_never_emitted() {
        let (lm, v, emb) = square_setup();
        let tb = SquareTool;
        let config = DecodeConfig {
            toolken_bias: f32::NEG_INFINITY,
            ..Default::default()
        };
        let dec = Decoder::new(&lm, &v, &emb, &tb, config).unwrap();
        let mut s = lm.session();
        s.push(&lm.tokenize("16 times 16 is ")).unwrap();
        let id = dec.next_token(&mut *s, &|_| true, &mut dec.rng()).unwrap();
        assert_eq!(id.0, lm.tokenize("the")[0]);
    }

    #[test]
    fn square_running_example() {
        let (lm, v, emb) = square_setup();
        let tb = SquareTool;
        let dec = Decoder::new(&lm, &v, &emb, &tb, DecodeConfig::default()).unwrap();
        let t = dec.generate("16 times 16 is ").unwrap();
        assert_eq!(t.final_text, "256 square feet");
        assert_eq!(t.stop_reason, StopReason::Eos);
        let calls: Vec<&ToolCall> = t.calls().collect();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].raw_args, "16");
        let (c, pos) = t.injected()[0];
        assert_eq!(&t.final_text[pos..pos + 3], c.result_text().unwrap());
        let json: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(json["segments"][0]["tool"], "square");
        assert_eq!(json["segments"][0]["args"], "16");
        assert_eq!(json["stop_reason"], "eos");
    }

    #[test]
    fn zero_call_budget_gives_plain_text() {
        let (lm, v, emb) = square_setup();
        let tb = SquareTool;
        let config = DecodeConfig {
            max_tool_calls: 0,
            max_new_tokens: 1,
            ..Default::default()
        };
        let dec = Decoder::new(&lm, &v, &emb, &tb, config).unwrap();
        let t = dec.generate("16 times 16 is ").unwrap();
        assert_eq!(t.calls().count(), 0);
        assert_eq!(t.final_text, "the");
        assert_eq!(t.stop_reason, StopReason::Budget);
    }

    #[test]
    fn failed_call_resamples_without_toolken() {
        let mut lm = ScriptedLm::new(D);
        let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
        v.register(
            ToolSpec::function("divide", vec![ArgSpec::number("a"), ArgSpec::number("b")], "")
                .with_demos(["8 over 2 is [divide](8, 2)=4"]),
        )
        .unwrap();
        let mut emb = ToolkenEmbeddings::zeros(vec!["divide".into()], D, Fingerprint::default());
        emb.row_mut(0)[0] = 10.0;
        let h = vec![1.0, 0.0, 0.0, 0.0];
        lm.script_word("5 over 0 is ", "the", h.clone(), 2.0).unwrap();
        lm.script_continuation(
            "8 over 2 is [divide](8, 2)=4\n\n5 over 0 is [divide](",
            "5, 0)",
            h.clone(),
        )
        .unwrap();
        lm.script_word("5 over 0 is the", "", vec![0.0; D], 5.0).unwrap();
        let tb = Toolbox::arithmetic(&[ArithOp::Divide]);
        let dec = Decoder::new(&lm, &v, &emb, &tb, DecodeConfig::default()).unwrap();
        let t = dec.generate("5 over 0 is ").unwrap();
        let calls: Vec<&ToolCall> = t.calls().collect();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].status, CallStatus::ExecError);
        assert_eq!(t.final_text, "the");
        assert_eq!(t.stop_reason, StopReason::Eos);

        let abort = DecodeConfig {
            on_tool_error: OnToolError::Abort,
            ..Default::default()
        };
        let dec = Decoder::new(&lm, &v, &emb, &tb, abort).unwrap();
        assert_eq!(dec.generate("5 over 0 is ").unwrap().stop_reason, StopReason::Error);
    }

    #[test]
    fn argument_completion_shapes() {
        let mut lm = ScriptedLm::new(D);
        let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
        let spec = ToolSpec::function("multiply", vec![ArgSpec::number("a"), ArgSpec::number("b")], "")
            .with_demos(["2 times 3 is [multiply](2, 3)=6"]);
        v.register(spec.clone()).unwrap();
        let emb = ToolkenEmbeddings::zeros(vec!["multiply".into()], D, Fingerprint::default());
        let h = vec![0.0; D];
        lm.script_continuation(
            "2 times 3 is [multiply](2, 3)=6\n\n50 times 3.2 is [multiply](",
            "50, 3.2)",
            h.clone(),
        )
        .unwrap();
        lm.script_continuation("2 times 3 is [multiply](2, 3)=6\n\nhm [multiply](", "50, 3.2, 1, 2", h)
            .unwrap();
        let tb = Toolbox::arithmetic(&[ArithOp::Multiply]);
        let config = DecodeConfig {
            max_arg_tokens: 8,
            ..Default::default()
        };
        let dec = Decoder::new(&lm, &v, &emb, &tb, config).unwrap();
        let mut rng = dec.rng();
        let args = dec.complete_arguments(&spec, "50 times 3.2 is ", &mut rng).unwrap();
        assert_eq!(args, Arguments::Closed("50, 3.2".into()));
        let call = dec.call_tool(&spec, "50 times 3.2 is ", &mut rng).unwrap();
        assert_eq!(call.result_text(), Some("160"));
        let call = dec.call_tool(&spec, "hm ", &mut rng).unwrap();
        assert_eq!(call.status, CallStatus::ParseError);
    }

    #[test]
    fn zero_demos_is_config_error() {
        let (lm, v, emb) = square_setup();
        let tb = SquareTool;
        let config = DecodeConfig {
            tool_mode_demos: 0,
            ..Default::default()
        };
        assert!(matches!(
            Decoder::new(&lm, &v, &emb, &tb, config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_embeddings_match_bare_backend() {
        let lm = ToyLm::from_seed(3);
        let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
        v.register(ToolSpec::function("square", vec![ArgSpec::number("a")], "").with_demos(["[square](2)=4"]))
            .unwrap();
        let emb = ToolkenEmbeddings::zeros(vec!["square".into()], 128, lm.fingerprint());
        let tb = SquareTool;
        let dec = Decoder::new(&lm, &v, &emb, &tb, DecodeConfig::default()).unwrap();
        let mut s = lm.session();
        for word in ["the", " old", " river", " is"] {
            s.push(&lm.tokenize(word)).unwrap();
            let out = s.output().unwrap();
            let bare = argmax(&out.logits.iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap();
            let top = out.logits[bare as usize];
            let id = dec.next_token(&mut *s, &|_| true, &mut dec.rng()).unwrap();
            if top > 0.0 {
                assert_eq!(id.0, bare);
            }
        }
    }

    #[test]
    fn masked_generation_is_bare_greedy() {
        let lm = ToyLm::from_seed(5);
        let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
        v.register(ToolSpec::function("square", vec![ArgSpec::number("a")], "").with_demos(["[square](2)=4"]))
            .unwrap();
        let mut emb = ToolkenEmbeddings::zeros(vec!["square".into()], 128, lm.fingerprint());
        emb.row_mut(0).iter_mut().for_each(|x| *x = 3.0);
        let tb = SquareTool;
        let config = DecodeConfig {
            enabled_tools: Some(vec![]),
            max_new_tokens: 12,
            stop: vec![],
            ..Default::default()
        };
        let dec = Decoder::new(&lm, &v, &emb, &tb, config).unwrap();
        let prompt = "the old river is";
        let t = dec.generate(prompt).unwrap();
        let mut ids = lm.tokenize(prompt);
        let mut expect = String::new();
        for _ in 0..12 {
            let out = lm.forward(&ids).unwrap().pop().unwrap();
            let id = argmax(&out.logits.iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap();
            if id == 0 {
                break;
            }
            expect.push_str(&lm.detokenize(&[id]));
            ids.push(id);
        }
        assert_eq!(t.final_text, expect);
    }

    #[test]
    fn plan_mode_alternates() {
        let lm = ToyLm::from_seed(1);
        let v = crate::data::plan::plan_vocab(
            LmBackend::vocab_size(&lm) as u32,
            &["FIND".into(), "SIT".into()],
            &["chair".into(), "desk".into()],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..10 {
            let names: Vec<String> = v.names().map(str::to_string).collect();
            let mut emb = ToolkenEmbeddings::zeros(names, 128, lm.fingerprint());
            emb.matrix.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            let tb = Toolbox::new();
            let config = DecodeConfig {
                max_new_tokens: 9,
                strategy: super::Strategy::Sample {
                    temperature: 1.0,
                    seed: trial,
                },
                ..Default::default()
            };
            let dec = Decoder::new(&lm, &v, &emb, &tb, config).unwrap();
            let plan = dec.generate_plan("Goal: sit\nPlan:\n").unwrap();
            plan.validate(&v).unwrap();
            assert!(plan.truncated || plan.plan.len() % 2 == 1);
        }
    }

    proptest! {
        #[test]
        fn fused_distribution_sums_to_one(
            words in prop::collection::vec(-30f32..30.0, 1..20),
            h in prop::collection::vec(-3f32..3.0, 3),
            rows in prop::collection::vec(-3f32..3.0, 6),
            bias in -5f32..5.0,
        ) {
            let lm = ScriptedLm::new(3);
            let mut v = ToolkenVocab::new(LmBackend::vocab_size(&lm) as u32);
            v.register(ToolSpec::object("a")).unwrap();
            v.register(ToolSpec::object("b")).unwrap();
            let emb = ToolkenEmbeddings { names: vec!["a".into(), "b".into()], dim: 3, matrix: rows, fingerprint: Fingerprint::default() };
            let tb = Toolbox::new();
            let dec = Decoder::new(&lm, &v, &emb, &tb, DecodeConfig { toolken_bias: bias, ..Default::default() }).unwrap();
            let mut logits = vec![0.0; LmBackend::vocab_size(&lm)];
            logits[..words.len()].copy_from_slice(&words);
            let out = StepOutput { hidden: crate::backend::HiddenState::new(h).unwrap(), logits };
            let p = dec.fused_probabilities(&out, &|_| true).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
