//! Training data: annotated traces and the paired `(s, s′)` sequences built
//! from them.

pub mod kbqa;
pub mod magnify;
pub mod plan;
pub mod synth;

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::LmBackend;
use crate::error::{Error, Result};
use crate::vocab::ToolkenVocab;

pub use kbqa::{kb_to_qa, sample_kb_subsets, KbQuestion, KbSubset};
pub use plan::{plan_trace, PlanSequence};
pub use synth::{synth_onehop, FileTemplates, TemplateSource};

/// Target id marking an ignored position.
pub const NA_TARGET: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCall {
    /// Byte range of the result substring produced by the call.
    pub start: usize,
    pub end: usize,
    pub tool: String,
    pub args: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTrace {
    pub text: String,
    pub calls: Vec<TraceCall>,
}

impl AnnotatedTrace {
    pub fn plain(text: &str) -> Self {
        AnnotatedTrace {
            text: text.to_string(),
            calls: Vec::new(),
        }
    }

    /// Spans sorted, non-overlapping, separated, and on char boundaries.
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = None;
        for c in &self.calls {
            let bad = |why: &str| Error::InvalidTrace(format!("call `{}` [{}, {}): {why}", c.tool, c.start, c.end));
            if c.start >= c.end || c.end > self.text.len() {
                return Err(bad("span out of bounds or empty"));
            }
            if !self.text.is_char_boundary(c.start) || !self.text.is_char_boundary(c.end) {
                return Err(bad("span not on a character boundary"));
            }
            if let Some(p) = prev_end {
                if c.start < p {
                    return Err(bad("spans overlap or are unsorted"));
                }
                if c.start == p {
                    return Err(bad("adjacent result spans need a separating token"));
                }
            }
            prev_end = Some(c.end);
        }
        Ok(())
    }

    pub fn result(&self, call: &TraceCall) -> &str {
        &self.text[call.start..call.end]
    }
}

/// Word tokens `s` and aligned fused targets `s′`.
///
/// `s_prime[k]` is the target for the token at position `k`: the word itself,
/// a toolken id where a call result starts, or [`NA_TARGET`] inside a result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelSequence {
    pub s: Vec<u32>,
    pub s_prime: Vec<u32>,
}

impl ParallelSequence {
    pub fn toolken_targets(&self, base_vocab: u32) -> usize {
        self.s_prime
            .iter()
            .filter(|&&t| t != NA_TARGET && t >= base_vocab)
            .count()
    }

    pub fn na_targets(&self) -> usize {
        self.s_prime.iter().filter(|&&t| t == NA_TARGET).count()
    }
}

/// Pairs a trace with its fused targets. Every result span must start and end
/// on token boundaries of the backend's tokenizer.
pub fn build_parallel(
    trace: &AnnotatedTrace,
    backend: &dyn LmBackend,
    vocab: &ToolkenVocab,
) -> Result<ParallelSequence> {
    trace.validate()?;
    let tokens = backend.tokenize_with_offsets(&trace.text);
    let s: Vec<u32> = tokens.iter().map(|t| t.id).collect();
    let mut s_prime = s.clone();
    for call in &trace.calls {
        let tool = vocab
            .lookup(&call.tool)
            .ok_or_else(|| Error::UnknownTool(call.tool.clone()))?;
        let misaligned = || Error::SpanMisaligned {
            start: call.start,
            end: call.end,
            text: trace.result(call).to_string(),
        };
        let first = tokens
            .iter()
            .position(|t| t.start == call.start)
            .ok_or_else(misaligned)?;
        let last = tokens.iter().position(|t| t.end == call.end).ok_or_else(misaligned)?;
        if last < first {
            return Err(misaligned());
        }
        s_prime[first] = tool.0;
        for t in &mut s_prime[first + 1..=last] {
            *t = NA_TARGET;
        }
    }
    Ok(ParallelSequence { s, s_prime })
}

/// Like [`build_parallel`], but when a result span's start is merged into the
/// preceding token, a single space is inserted before the result first.
pub fn build_parallel_aligned(
    trace: &AnnotatedTrace,
    backend: &dyn LmBackend,
    vocab: &ToolkenVocab,
) -> Result<(ParallelSequence, AnnotatedTrace)> {
    match build_parallel(trace, backend, vocab) {
        Err(Error::SpanMisaligned { .. }) => {
            let fixed = insert_spaces(trace, backend);
            let seq = build_parallel(&fixed, backend, vocab)?;
            Ok((seq, fixed))
        }
        other => other.map(|seq| (seq, trace.clone())),
    }
}

fn insert_spaces(trace: &AnnotatedTrace, backend: &dyn LmBackend) -> AnnotatedTrace {
    let tokens = backend.tokenize_with_offsets(&trace.text);
    let mut text = String::with_capacity(trace.text.len() + trace.calls.len());
    let mut calls = Vec::with_capacity(trace.calls.len());
    let mut cursor = 0;
    let mut shift = 0;
    for c in &trace.calls {
        let aligned = tokens.iter().any(|t| t.start == c.start);
        let after_space = trace.text[..c.start].ends_with(' ');
        text.push_str(&trace.text[cursor..c.start]);
        if !aligned && !after_space && c.start > 0 {
            text.push(' ');
            shift += 1;
        }
        calls.push(TraceCall {
            start: c.start + shift,
            end: c.end + shift,
            ..c.clone()
        });
        cursor = c.start;
    }
    text.push_str(&trace.text[cursor..]);
    AnnotatedTrace { text, calls }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads JSONL lines lazily, yielding `(line number, parsed)` pairs.
pub fn jsonl_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<impl Iterator<Item = (usize, Result<T>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(std::io::BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(move |(i, line)| {
            let parsed = line.map_err(|e| Error::io(&owned, e)).and_then(|l| {
                serde_json::from_str(&l).map_err(|e| Error::Data {
                    path: owned.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            });
            (i + 1, parsed)
        }))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
