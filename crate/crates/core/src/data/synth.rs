//! Template-based synthetic one-hop demonstrations.
//!
//! A template is a text pattern with one `{name}` slot per argument of the
//! tool and exactly one `{r}` result slot.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedTrace, TraceCall};
use crate::call::format_number;
use crate::error::{Error, Result};
use crate::tools::ArithOp;
use crate::vocab::ToolSpec;

pub const RESULT_SLOT: &str = "r";
/// Resampling budget for operands outside the operator's domain.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub tool: String,
    pub pattern: String,
}

/// Supplies question patterns for a tool. The file-backed source is the
/// default; a generator backed by another model can implement the same trait.
pub trait TemplateSource {
    fn templates(&self, tool: &ToolSpec) -> Result<Vec<String>>;
}

#[derive(Clone, Debug, Default)]
pub struct FileTemplates {
    by_tool: BTreeMap<String, Vec<String>>,
}

impl FileTemplates {
    pub fn from_records(records: &[TemplateRecord]) -> Self {
        let mut by_tool: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            by_tool.entry(r.tool.clone()).or_default().push(r.pattern.clone());
        }
        FileTemplates { by_tool }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let records: Vec<TemplateRecord> = super::read_jsonl(path)?;
        Ok(Self::from_records(&records))
    }

    pub fn tools(&self) -> impl Iterator<Item = &str> {
        self.by_tool.keys().map(String::as_str)
    }
}

impl TemplateSource for FileTemplates {
    fn templates(&self, tool: &ToolSpec) -> Result<Vec<String>> {
        self.by_tool
            .get(&tool.name)
            .filter(|v| !v.is_empty())
            .cloned()
            .ok_or_else(|| Error::MissingTemplate(tool.name.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Lit(String),
    Slot(String),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Lit(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::InvalidTemplate(format!("unclosed slot in {pattern:?}")))?;
        out.push(Piece::Slot(rest[open + 1..open + close].to_string()));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Lit(rest.to_string()));
    }
    Ok(out)
}

/// Checks that `pattern` has exactly the tool's argument slots and one result
/// slot.
pub fn check_template(tool: &ToolSpec, pattern: &str) -> Result<()> {
    let pieces = parse_pattern(pattern)?;
    let count = |name: &str| {
        pieces
            .iter()
            .filter(|p| matches!(p, Piece::Slot(s) if s == name))
            .count()
    };
    if count(RESULT_SLOT) != 1 {
        return Err(Error::InvalidTemplate(format!(
            "{pattern:?} needs exactly one {{{RESULT_SLOT}}} slot"
        )));
    }
    for arg in &tool.arg_schema {
        if count(&arg.name) == 0 {
            return Err(Error::InvalidTemplate(format!(
                "{pattern:?} lacks slot {{{}}} for `{}`",
                arg.name, tool.name
            )));
        }
    }
    for p in &pieces {
        if let Piece::Slot(s) = p {
            if s != RESULT_SLOT && !tool.arg_schema.iter().any(|a| &a.name == s) {
                return Err(Error::InvalidTemplate(format!("{pattern:?} has unknown slot {{{s}}}")));
            }
        }
    }
    Ok(())
}

/// Fills `pattern` with operand strings and the result, returning the trace
/// with a call span over the result.
pub fn fill_template(tool: &ToolSpec, pattern: &str, operands: &[String], result: &str) -> Result<AnnotatedTrace> {
    let mut text = String::new();
    let mut span = None;
    for p in parse_pattern(pattern)? {
        match p {
            Piece::Lit(s) => text.push_str(&s),
            Piece::Slot(s) if s == RESULT_SLOT => {
                let start = text.len();
                text.push_str(result);
                span = Some((start, text.len()));
            }
            Piece::Slot(s) => {
                let i = tool
                    .arg_schema
                    .iter()
                    .position(|a| a.name == s)
                    .ok_or_else(|| Error::InvalidTemplate(format!("unknown slot {{{s}}}")))?;
                text.push_str(&operands[i]);
            }
        }
    }
    let (start, end) = span.ok_or_else(|| Error::InvalidTemplate(format!("{pattern:?} has no result slot")))?;
    Ok(AnnotatedTrace {
        text,
        calls: vec![TraceCall {
            start,
            end,
            tool: tool.name.clone(),
            args: operands.join(", "),
        }],
    })
}

/// `n` one-hop traces for an arithmetic tool, operands drawn from the
/// operator's default ranges.
pub fn synth_onehop(op: &ToolSpec, templates: &[String], n: usize, seed: u64) -> Result<Vec<AnnotatedTrace>> {
    let arith: ArithOp = op.name.parse().map_err(Error::UnknownTool)?;
    synth_onehop_with(op, templates, n, seed, |rng| arith.sample_operands(rng))
}

/// Like [`synth_onehop`] with a custom operand sampler. Draws outside the
/// operator's domain are resampled up to [`MAX_RESAMPLES`] times.
pub fn synth_onehop_with<F>(
    op: &ToolSpec,
    templates: &[String],
    n: usize,
    seed: u64,
    mut sample: F,
) -> Result<Vec<AnnotatedTrace>>
where
    F: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    let arith: ArithOp = op.name.parse().map_err(Error::UnknownTool)?;
    if templates.is_empty() {
        return Err(Error::MissingTemplate(op.name.clone()));
    }
    for t in templates {
        check_template(op, t)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let pattern = &templates[rng.random_range(0..templates.len())];
        let mut attempt = 0;
        let (args, result) = loop {
            let args = sample(&mut rng);
            match arith.apply(&args) {
                Ok(r) => break (args, r),
                Err(_) if attempt + 1 < MAX_RESAMPLES => attempt += 1,
                Err(_) => {
                    return Err(Error::SamplingExhausted {
                        op: op.name.clone(),
                        attempts: MAX_RESAMPLES,
                    })
                }
            }
        };
        let operands: Vec<String> = args.iter().map(|&x| format_number(x)).collect();
        out.push(fill_template(op, pattern, &operands, &result.text)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcm_template() -> Vec<String> {
        vec!["The least common multiple of {a} and {b} is {r}.".to_string()]
    }

    #[test]
    fn fills_lcm() {
        let spec = ArithOp::Lcm.spec();
        let tr = fill_template(&spec, &lcm_template()[0], &["4".into(), "6".into()], "12").unwrap();
        assert_eq!(tr.text, "The least common multiple of 4 and 6 is 12.");
        assert_eq!(tr.result(&tr.calls[0]), "12");
        assert_eq!(tr.calls[0].args, "4, 6");
    }

    #[test]
    fn results_match_executor() {
        let spec = ArithOp::Lcm.spec();
        let traces = synth_onehop(&spec, &lcm_template(), 50, 3).unwrap();
        assert_eq!(traces.len(), 50);
        for tr in &traces {
            let call = &tr.calls[0];
            let args: Vec<f64> = call.args.split(", ").map(|a| a.parse().unwrap()).collect();
            assert_eq!(ArithOp::Lcm.apply(&args).unwrap().text, tr.result(call));
        }
        assert_eq!(traces, synth_onehop(&spec, &lcm_template(), 50, 3).unwrap());
        assert_ne!(traces, synth_onehop(&spec, &lcm_template(), 50, 4).unwrap());
    }

    #[test]
    fn out_of_domain_sampling_errors() {
        let spec = ArithOp::Sqrt.spec();
        let t = vec!["The square root of {a} is {r}.".to_string()];
        let r = synth_onehop_with(&spec, &t, 1, 0, |_| vec![-4.0]);
        assert!(matches!(
            r,
            Err(Error::SamplingExhausted {
                attempts: MAX_RESAMPLES,
                ..
            })
        ));
        let mut calls = 0;
        let r = synth_onehop_with(&spec, &t, 1, 0, |_| {
            calls += 1;
            vec![if calls < 5 { -1.0 } else { 9.0 }]
        });
        assert_eq!(r.unwrap()[0].text, "The square root of 9 is 3.");
    }

    #[test]
    fn template_checks() {
        let spec = ArithOp::Lcm.spec();
        assert!(check_template(&spec, "lcm of {a} and {b}").is_err());
        assert!(check_template(&spec, "lcm of {a} is {r}").is_err());
        assert!(check_template(&spec, "{a} {b} {c} {r}").is_err());
        assert!(check_template(&spec, "{a} {b} {r} {r}").is_err());
        assert!(check_template(&spec, "{a} {b} {r").is_err());
    }

    #[test]
    fn zero_count() {
        assert!(synth_onehop(&ArithOp::Add.spec(), &["{a}+{b}={r}".to_string()], 0, 1)
            .unwrap()
            .is_empty());
    }
}
