//! One-hop arithmetic word problems over the thirteen operators.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{harvest_and_fit, pair_traces, Trained};
use crate::backend::{LmBackend, WordHead};
use crate::call::{parse_args, parse_number, ArgValue};
use crate::data::synth::{fill_template, synth_onehop, TemplateRecord};
use crate::data::AnnotatedTrace;
use crate::decode::{DecodeConfig, Decoder};
use crate::error::{Error, Result};
use crate::eval::{score_transcript, Gold, GoldCall, NumericMode, Report};
use crate::tools::{ArithOp, Toolbox};
use crate::train::TrainConfig;
use crate::vocab::{ToolSpec, ToolkenVocab};

/// Training and held-out questions per operator.
pub const TRAIN_PER_OP: usize = 47;
pub const HELD_OUT_PER_OP: usize = 3;

/// Plain worked examples placed before every question. Their answers are
/// not operands of the question, so the backbone alone does not solve it.
pub const REASONING_PREFIX: &str = "Question: How many days are in a week?\nAnswer: The answer is 7.\n\n\
Question: How many sides does a square have?\nAnswer: The answer is 4.\n\n";

const ANSWER_CUE: &str = "\nAnswer: The answer is {r}.";

const PATTERNS: [(ArithOp, [&str; 3]); 13] = [
    (
        ArithOp::Add,
        [
            "What is {a} plus {b}?",
            "What is the sum of {a} and {b}?",
            "Can you compute {a} added to {b}?",
        ],
    ),
    (
        ArithOp::Subtract,
        [
            "What is {a} minus {b}?",
            "What is the difference of {a} and {b}?",
            "How many are left when {b} are taken away from {a}?",
        ],
    ),
    (
        ArithOp::Multiply,
        [
            "What is {a} times {b}?",
            "What is the product of {a} and {b}?",
            "Can you compute {a} multiplied by {b}?",
        ],
    ),
    (
        ArithOp::Divide,
        [
            "What is {a} divided by {b}?",
            "What is the quotient of {a} and {b}?",
            "Can you compute {a} over {b}?",
        ],
    ),
    (
        ArithOp::Power,
        [
            "What is {a} raised to the power {b}?",
            "What is {a} to the power of {b}?",
            "Can you compute {a} with exponent {b}?",
        ],
    ),
    (
        ArithOp::Sqrt,
        [
            "What is the square root of {a}?",
            "Can you compute the square root of the number {a}?",
            "Can you find the root of {a}?",
        ],
    ),
    (
        ArithOp::Log,
        [
            "What is the common logarithm of {a}?",
            "Can you compute the log of {a}?",
            "Can you find the logarithm of {a} in base ten?",
        ],
    ),
    (
        ArithOp::Ln,
        [
            "What is the natural logarithm of {a}?",
            "Can you compute the natural log of {a}?",
            "Can you find the natural log value of {a}?",
        ],
    ),
    (
        ArithOp::Lcm,
        [
            "What is the least common multiple of {a} and {b}?",
            "Can you find the least common multiple of {a} and {b}?",
            "Can you compute the lcm of {a} and {b}?",
        ],
    ),
    (
        ArithOp::Gcd,
        [
            "What is the greatest common divisor of {a} and {b}?",
            "Can you find the greatest common factor of {a} and {b}?",
            "Can you compute the gcd of {a} and {b}?",
        ],
    ),
    (
        ArithOp::Remainder,
        [
            "What is the remainder when {a} is divided by {b}?",
            "What is left over when {a} is divided by {b}?",
            "Can you compute {a} mod {b}?",
        ],
    ),
    (
        ArithOp::Choose,
        [
            "How many ways can you choose {k} items from {n}?",
            "How many ways are there to pick {k} of {n} items?",
            "Can you compute {n} choose {k}?",
        ],
    ),
    (
        ArithOp::Permutate,
        [
            "How many ordered ways can you arrange {k} of {n} items?",
            "What is the number of permutations of {k} items from {n}?",
            "Can you compute the permutations of {n} taking {k}?",
        ],
    ),
];

/// Built-in question patterns: three per operator, each ending with the
/// `The answer is {r}.` cue.
pub fn builtin_templates() -> Vec<TemplateRecord> {
    PATTERNS
        .iter()
        .flat_map(|(op, pats)| {
            pats.iter().map(move |p| TemplateRecord {
                tool: op.name().to_string(),
                pattern: format!("Question: {p}{ANSWER_CUE}"),
            })
        })
        .collect()
}

fn templates_for(templates: &[TemplateRecord], op: ArithOp) -> Result<Vec<String>> {
    let v: Vec<String> = templates
        .iter()
        .filter(|t| t.tool == op.name())
        .map(|t| t.pattern.clone())
        .collect();
    if v.is_empty() {
        return Err(Error::MissingTemplate(op.name().to_string()));
    }
    Ok(v)
}

/// One tool-mode demonstration per template, in template order.
pub fn demonstrations(op: ArithOp, templates: &[TemplateRecord], seed: u64) -> Result<Vec<String>> {
    let spec = op.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd3e0);
    templates_for(templates, op)?
        .iter()
        .map(|pattern| {
            let (args, result) = loop {
                let args = op.sample_operands(&mut rng);
                if let Ok(r) = op.apply(&args) {
                    break (args, r);
                }
            };
            let operands: Vec<String> = args.iter().map(|&x| crate::call::format_number(x)).collect();
            let trace = fill_template(&spec, pattern, &operands, &result.text)?;
            let call = &trace.calls[0];
            Ok(format!(
                "{}[{}]({})={}{}",
                &trace.text[..call.start],
                op.name(),
                call.args,
                &trace.text[call.start..call.end],
                &trace.text[call.end..]
            ))
        })
        .collect()
}

/// A vocabulary of `ops` with demonstrations attached.
pub fn vocab(base_vocab_size: u32, ops: &[ArithOp], templates: &[TemplateRecord], seed: u64) -> Result<ToolkenVocab> {
    let mut v = ToolkenVocab::new(base_vocab_size);
    for &op in ops {
        v.register(op.spec().with_demos(demonstrations(op, templates, seed)?))?;
    }
    Ok(v)
}

/// A held-out question: the prompt ends right before the answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub prompt: String,
    pub gold: Gold,
    pub call: GoldCall,
}

impl Item {
    fn from_trace(id: String, trace: &AnnotatedTrace, spec: &ToolSpec) -> Result<Self> {
        let call = &trace.calls[0];
        let result = trace.result(call);
        let gold = parse_number(result).ok_or_else(|| Error::InvalidTrace(format!("non-numeric result {result:?}")))?;
        let args: Vec<ArgValue> = parse_args(spec, &call.args)?;
        Ok(Item {
            id,
            prompt: trace.text[..call.start].to_string(),
            gold: Gold::Number(gold),
            call: GoldCall {
                tool: call.tool.clone(),
                args: Some(args),
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<AnnotatedTrace>,
    pub held_out: Vec<Item>,
}

/// Draws `train + held_out` distinct questions per operator; held-out texts
/// never appear in the training set.
pub fn split(ops: &[ArithOp], templates: &[TemplateRecord], train: usize, held_out: usize, seed: u64) -> Result<Split> {
    let mut out = Split {
        train: Vec::new(),
        held_out: Vec::new(),
    };
    for (i, &op) in ops.iter().enumerate() {
        let spec = op.spec();
        let pats = templates_for(templates, op)?;
        let want = train + held_out;
        let mut seen = BTreeSet::new();
        let mut traces = Vec::with_capacity(want);
        let mut round = 0u64;
        while traces.len() < want {
            if round == 8 {
                return Err(Error::InsufficientData(format!(
                    "only {} distinct `{op}` questions",
                    traces.len()
                )));
            }
            let batch = synth_onehop(&spec, &pats, want * 2, seed.wrapping_add(1000 * i as u64 + round))?;
            for t in batch {
                if traces.len() < want && seen.insert(t.text.clone()) {
                    traces.push(t);
                }
            }
            round += 1;
        }
        for (j, t) in traces[train..].iter().enumerate() {
            out.held_out.push(Item::from_trace(format!("{op}-{j}"), t, &spec)?);
        }
        traces.truncate(train);
        out.train.extend(traces);
    }
    Ok(out)
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.3,
        epochs: 600,
        patience: 0,
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct FuncQaRun {
    pub trained: Trained,
    pub report: Report,
    /// `(item id, reason)` for transcripts whose injected text does not match
    /// a re-execution of their calls.
    pub injection_failures: Vec<(String, String)>,
}

/// Trains all thirteen operator toolkens on [`TRAIN_PER_OP`] questions each
/// and answers the [`HELD_OUT_PER_OP`] held-out questions per operator.
pub fn desk_run<B: LmBackend + WordHead>(backend: &B, dir: &Path, seed: u64) -> Result<FuncQaRun> {
    let templates = builtin_templates();
    let vocab = vocab(LmBackend::vocab_size(backend) as u32, &ArithOp::ALL, &templates, 0)?;
    let split = split(&ArithOp::ALL, &templates, TRAIN_PER_OP, HELD_OUT_PER_OP, seed)?;
    let seqs = pair_traces(backend, &vocab, &split.train)?;
    let trained = harvest_and_fit(
        backend,
        &vocab,
        &seqs,
        Some(REASONING_PREFIX),
        &dir.join("funcqa.dump"),
        &train_config(),
    )?;
    let tools = Toolbox::arithmetic(&ArithOp::ALL);
    let decoder = Decoder::new(backend, &vocab, &trained.embeddings, &tools, DecodeConfig::default())?;
    let mut records = Vec::new();
    let mut injection_failures = Vec::new();
    for item in &split.held_out {
        let tr = decoder.generate(&format!("{REASONING_PREFIX}{}", item.prompt))?;
        if let Err(e) = tr.check_injection(&vocab, &tools) {
            injection_failures.push((item.id.clone(), e));
        }
        records.push(score_transcript(
            &item.id,
            &tr,
            &item.gold,
            Some(&item.call),
            NumericMode::Exact,
        ));
    }
    Ok(FuncQaRun {
        trained,
        report: Report::new("funcqa", records),
        injection_failures,
    })
}
