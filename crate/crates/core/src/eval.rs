//! Answer extraction, scoring rules and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::call::{format_number, ArgValue};
use crate::data::PlanSequence;
use crate::decode::Transcript;
use crate::error::Result;
use crate::tools::PlanOutcome;

pub const ANSWER_MARKER: &str = "The answer is";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Number,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Number(f64),
    Text(String),
}

impl Answer {
    pub fn render(&self) -> String {
        match self {
            Answer::Number(x) => format_number(*x),
            Answer::Text(s) => s.clone(),
        }
    }
}

/// The last number in `text`: an optional minus sign, digits with optional
/// thousands commas, and an optional fraction.
pub fn extract_number(text: &str) -> Option<f64> {
    let b = text.as_bytes();
    let mut last = None;
    let mut i = 0;
    while i < b.len() {
        if !b[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let neg = i > 0 && b[i - 1] == b'-' && (i < 2 || !b[i - 2].is_ascii_alphanumeric());
        let mut s = String::new();
        while i < b.len() {
            if b[i].is_ascii_digit() {
                s.push(b[i] as char);
            } else if b[i] == b','
                && i + 3 < b.len() + 1
                && b[i + 1..].iter().take(3).all(u8::is_ascii_digit)
                && !s.is_empty()
            {
                // thousands separator
            } else {
                break;
            }
            i += 1;
        }
        if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
            s.push('.');
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                s.push(b[i] as char);
                i += 1;
            }
        }
        if let Ok(x) = s.parse::<f64>() {
            last = Some(if neg { -x } else { x });
        }
    }
    last
}

/// Text after the last answer marker (or the whole text without one), up to
/// the end of its line, trimmed of terminal punctuation. A final period
/// survives when it closes a capital-letter abbreviation such as `F.C.`.
pub fn extract_text(text: &str) -> Option<String> {
    let tail = match text.rfind(ANSWER_MARKER) {
        Some(p) => &text[p + ANSWER_MARKER.len()..],
        None => text,
    };
    let line = tail.trim_start().lines().next().unwrap_or("").trim();
    let mut s = line.trim_end_matches([',', ';', ':', '!', '?']).trim_end();
    if s.ends_with('.') && !is_abbreviation(s) {
        s = s[..s.len() - 1].trim_end();
    }
    (!s.is_empty()).then(|| s.to_string())
}

fn is_abbreviation(s: &str) -> bool {
    let chars: Vec<char> = s.chars().collect();
    let n = chars.len();
    n >= 2 && chars[n - 2].is_uppercase() && (n == 2 || matches!(chars[n - 3], '.' | ' '))
}

pub fn extract_answer(text: &str, kind: AnswerKind) -> Option<Answer> {
    match kind {
        AnswerKind::Number => extract_number(text).map(Answer::Number),
        AnswerKind::Text => extract_text(text).map(Answer::Text),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericMode {
    /// Both sides rounded to two decimals, then compared.
    Exact,
    /// Relative error of at most 0.1%.
    Tolerance,
}

/// `x` in hundredths, rounded half away from zero on its shortest decimal
/// representation.
pub fn round_cents(x: f64) -> Option<i128> {
    if !x.is_finite() {
        return None;
    }
    let s = format!("{:?}", x.abs());
    let (mantissa, exp) = match s.split_once('e') {
        Some((m, e)) => (m.to_string(), e.parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((&mantissa, ""));
    let mut digits: Vec<u8> = int.bytes().chain(frac.bytes()).map(|c| c - b'0').collect();
    let mut point = int.len() as i32 + exp;
    if point < 0 {
        let pad = (-point) as usize;
        digits.splice(0..0, std::iter::repeat_n(0, pad));
        point = 0;
    }
    let point = point as usize;
    while digits.len() < point + 3 {
        digits.push(0);
    }
    let mut cents: i128 = 0;
    for &d in &digits[..point + 2] {
        cents = cents.checked_mul(10)?.checked_add(d as i128)?;
    }
    if digits[point + 2] >= 5 {
        cents += 1;
    }
    Some(if x < 0.0 { -cents } else { cents })
}

pub fn score_numeric(pred: f64, gold: f64, mode: NumericMode) -> bool {
    match mode {
        NumericMode::Exact => match (round_cents(pred), round_cents(gold)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        },
        NumericMode::Tolerance => {
            if gold == 0.0 {
                pred.abs() <= 1e-9
            } else {
                (pred - gold).abs() <= 0.001 * gold.abs()
            }
        }
    }
}

pub fn normalize_answer(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn score_kb(pred: &str, gold: &str) -> bool {
    let p = normalize_answer(pred);
    !p.is_empty() && p == normalize_answer(gold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanScores {
    pub n: usize,
    pub grounding: f64,
    pub executable: f64,
    pub success: f64,
    pub success_relaxed: f64,
}

pub fn score_plans(outcomes: &[PlanOutcome]) -> PlanScores {
    let n = outcomes.len();
    if n == 0 {
        return PlanScores::default();
    }
    let rate = |f: fn(&PlanOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n as f64;
    PlanScores {
        n,
        grounding: rate(|o| o.grounded),
        executable: rate(|o| o.executable),
        success: rate(|o| o.success),
        success_relaxed: rate(|o| o.success_relaxed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Number(f64),
    Text(String),
    Plan { goal_assertions: Vec<String> },
}

/// The call a correct solution makes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldCall {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Vec<ArgValue>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Transcript(Transcript),
    Plan(PlanSequence),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: usize,
    pub correct_tool: usize,
    pub correct_args: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub gold: Gold,
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub metrics: BTreeMap<String, bool>,
    pub stats: CallStats,
}

fn args_match(a: &[ArgValue], b: &[ArgValue]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (ArgValue::Number(p), ArgValue::Number(q)) => score_numeric(*p, *q, NumericMode::Exact),
            (ArgValue::Entity(p), ArgValue::Entity(q)) => score_kb(p, q),
            _ => false,
        })
}

/// Scores a reasoning-mode transcript against a numeric or text gold answer.
///
/// Metrics: `answer_correct`, `no_answer`, `tool_correct` (first call uses
/// the gold tool; only with `expected`), `via_tool` (the extracted answer is
/// the result of an ok call).
pub fn score_transcript(
    id: &str,
    transcript: &Transcript,
    gold: &Gold,
    expected: Option<&GoldCall>,
    mode: NumericMode,
) -> EvalRecord {
    let kind = match gold {
        Gold::Number(_) => AnswerKind::Number,
        _ => AnswerKind::Text,
    };
    let answer = extract_answer(&transcript.final_text, kind);
    let correct = match (&answer, gold) {
        (Some(Answer::Number(p)), Gold::Number(g)) => score_numeric(*p, *g, mode),
        (Some(Answer::Text(p)), Gold::Text(g)) => score_kb(p, g),
        _ => false,
    };
    let via_tool = answer.as_ref().is_some_and(|a| {
        transcript.calls().filter_map(|c| c.result.as_ref()).any(|r| match a {
            Answer::Number(p) => r.value.is_some_and(|v| score_numeric(*p, v, NumericMode::Exact)),
            Answer::Text(p) => score_kb(p, &r.text),
        })
    });
    let mut stats = CallStats::default();
    for c in transcript.calls() {
        stats.calls += 1;
        if let Some(g) = expected {
            if c.tool == g.tool {
                stats.correct_tool += 1;
                if let (Some(a), Some(b)) = (&c.parsed_args, &g.args) {
                    if args_match(a, b) {
                        stats.correct_args += 1;
                    }
                }
            }
        }
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("answer_correct".to_string(), correct);
    metrics.insert("no_answer".to_string(), answer.is_none());
    metrics.insert("via_tool".to_string(), via_tool);
    if let Some(g) = expected {
        let first = transcript.calls().next();
        metrics.insert("tool_correct".to_string(), first.is_some_and(|c| c.tool == g.tool));
    }
    EvalRecord {
        id: id.to_string(),
        gold: gold.clone(),
        prediction: Prediction::Transcript(transcript.clone()),
        answer: answer.map(|a| a.render()),
        metrics,
        stats,
    }
}

pub fn plan_record(id: &str, plan: &PlanSequence, goal_assertions: &[String], outcome: PlanOutcome) -> EvalRecord {
    let metrics = [
        ("grounded", outcome.grounded),
        ("executable", outcome.executable),
        ("success", outcome.success),
        ("success_relaxed", outcome.success_relaxed),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    EvalRecord {
        id: id.to_string(),
        gold: Gold::Plan {
            goal_assertions: goal_assertions.to_vec(),
        },
        prediction: Prediction::Plan(plan.clone()),
        answer: None,
        metrics,
        stats: CallStats::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub n: usize,
    pub metrics: BTreeMap<String, f64>,
    pub per_record: Vec<EvalRecord>,
}

impl Report {
    /// Each metric is the share of records where it holds, over the records
    /// that report it.
    pub fn new(dataset: &str, per_record: Vec<EvalRecord>) -> Self {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in &per_record {
            for (k, &v) in &r.metrics {
                let e = counts.entry(k.clone()).or_default();
                e.0 += v as usize;
                e.1 += 1;
            }
        }
        let metrics = counts
            .into_iter()
            .map(|(k, (hit, n))| (k, hit as f64 / n as f64))
            .collect();
        Report {
            dataset: dataset.to_string(),
            n: per_record.len(),
            metrics,
            per_record,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_table(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{} (n = {})\n", self.dataset, self.n);
        let _ = writeln!(out, "{:<width$}  value", "metric");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k:<width$}  {v:.4}");
        }
        out
    }
}
