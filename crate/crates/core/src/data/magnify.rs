//! Number magnification for arithmetic traces.
//!
//! Every question operand (a call argument that is not the result of an
//! earlier call) is multiplied by `10^k`; downstream results are recomputed
//! through the arithmetic executors and the trace text is rewritten to match.

use std::collections::HashMap;

use super::{AnnotatedTrace, TraceCall};
use crate::call::{format_number, parse_number};
use crate::error::{Error, Result};
use crate::tools::ArithOp;

/// Shifts the decimal point of a plain decimal literal `k` places right.
pub fn shift_decimal(lit: &str, k: u32) -> Option<String> {
    let (neg, body) = match lit.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, lit),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut digits = format!("{int}{frac}");
    let point = int.len() + k as usize;
    while digits.len() < point {
        digits.push('0');
    }
    let (a, b) = digits.split_at(point);
    let a = a.trim_start_matches('0');
    let b = b.trim_end_matches('0');
    let a = if a.is_empty() { "0" } else { a };
    let mut out = String::new();
    if neg && (a != "0" || !b.is_empty()) {
        out.push('-');
    }
    out.push_str(a);
    if !b.is_empty() {
        out.push('.');
        out.push_str(b);
    }
    Some(out)
}

/// Byte ranges of number literals (digits with at most one inner point).
fn number_literals(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < b.len() && b[i] == b'.' && b[i + 1].is_ascii_digit() {
                i += 1;
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push((start, i));
        } else {
            i += 1;
        }
    }
    out
}

pub fn magnify(trace: &AnnotatedTrace, k: u32) -> Result<AnnotatedTrace> {
    trace.validate()?;
    let bad = |why: String| Error::InvalidTrace(format!("magnify: {why}"));
    // old literal -> new literal, for question operands and call results
    let mut operands: HashMap<String, String> = HashMap::new();
    let mut results: HashMap<String, String> = HashMap::new();
    let mut new_results = Vec::with_capacity(trace.calls.len());
    let mut new_args = Vec::with_capacity(trace.calls.len());
    for call in &trace.calls {
        let op: ArithOp = call.tool.parse().map_err(bad)?;
        let mut args = Vec::new();
        let mut arg_text = Vec::new();
        for raw in call.args.split(',').map(str::trim) {
            let new = if let Some(r) = results.get(raw) {
                r.clone()
            } else {
                let scaled =
                    shift_decimal(raw, k).ok_or_else(|| bad(format!("argument `{raw}` is not a plain number")))?;
                operands.insert(raw.to_string(), scaled.clone());
                scaled
            };
            args.push(parse_number(&new).ok_or_else(|| bad(format!("`{new}` does not parse")))?);
            arg_text.push(new);
        }
        let r = op
            .apply(&args)
            .map_err(|e| bad(format!("{}({}): {e}", call.tool, arg_text.join(", "))))?;
        results.insert(trace.result(call).to_string(), r.text.clone());
        new_results.push(r.text);
        new_args.push(arg_text.join(", "));
    }

    let mut text = String::with_capacity(trace.text.len() + 16);
    let mut calls = Vec::with_capacity(trace.calls.len());
    let mut cursor = 0;
    let mut spans = trace.calls.iter().enumerate().peekable();
    for (s, e) in number_literals(&trace.text) {
        if s < cursor {
            continue;
        }
        if let Some(&(ci, c)) = spans.peek() {
            if c.start <= s && s < c.end || c.start < e && e <= c.end {
                text.push_str(&trace.text[cursor..c.start]);
                let start = text.len();
                text.push_str(&new_results[ci]);
                calls.push(TraceCall {
                    start,
                    end: text.len(),
                    tool: c.tool.clone(),
                    args: new_args[ci].clone(),
                });
                cursor = c.end;
                spans.next();
                continue;
            }
        }
        let lit = &trace.text[s..e];
        if let Some(new) = operands.get(lit).or_else(|| results.get(lit)) {
            text.push_str(&trace.text[cursor..s]);
            text.push_str(new);
            cursor = e;
        }
    }
    for (ci, c) in spans {
        if c.start < cursor {
            return Err(bad(format!("result span of `{}` overlaps a number", c.tool)));
        }
        text.push_str(&trace.text[cursor..c.start]);
        let start = text.len();
        text.push_str(&new_results[ci]);
        calls.push(TraceCall {
            start,
            end: text.len(),
            tool: c.tool.clone(),
            args: new_args[ci].clone(),
        });
        cursor = c.end;
    }
    text.push_str(&trace.text[cursor..]);
    let out = AnnotatedTrace { text, calls };
    out.validate()?;
    Ok(out)
}

/// The scale applied by [`magnify`], for reporting.
pub fn scale_factor(k: u32) -> String {
    format_number(10f64.powi(k as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step() -> AnnotatedTrace {
        let text = "Tom has 3 bags of 12 apples and eats 5. He has 3*12=36 apples, then 36-5=31 apples.";
        let r1 = text.find("=36").unwrap() + 1;
        let r2 = text.find("=31").unwrap() + 1;
        AnnotatedTrace {
            text: text.into(),
            calls: vec![
                TraceCall {
                    start: r1,
                    end: r1 + 2,
                    tool: "multiply".into(),
                    args: "3, 12".into(),
                },
                TraceCall {
                    start: r2,
                    end: r2 + 2,
                    tool: "subtract".into(),
                    args: "36, 5".into(),
                },
            ],
        }
    }

    #[test]
    fn shifts() {
        assert_eq!(shift_decimal("3.2", 2).as_deref(), Some("320"));
        assert_eq!(shift_decimal("0.05", 1).as_deref(), Some("0.5"));
        assert_eq!(shift_decimal("12", 3).as_deref(), Some("12000"));
        assert_eq!(shift_decimal("-1.25", 1).as_deref(), Some("-12.5"));
        assert_eq!(shift_decimal("12", 0).as_deref(), Some("12"));
        assert!(shift_decimal("1e5", 1).is_none());
    }

    #[test]
    fn magnifies_and_recomputes() {
        let m = magnify(&two_step(), 2).unwrap();
        assert_eq!(
            m.text,
            "Tom has 300 bags of 1200 apples and eats 500. He has 300*1200=360000 apples, then 360000-500=359500 apples."
        );
        assert_eq!(m.result(&m.calls[0]), "360000");
        assert_eq!(m.result(&m.calls[1]), "359500");
        assert_eq!(m.calls[1].args, "360000, 500");
        for c in &m.calls {
            let op: ArithOp = c.tool.parse().unwrap();
            let args: Vec<f64> = c.args.split(", ").map(|a| a.parse().unwrap()).collect();
            assert_eq!(op.apply(&args).unwrap().text, m.result(c));
        }
    }

    #[test]
    fn zero_is_identity() {
        let t = two_step();
        assert_eq!(magnify(&t, 0).unwrap(), t);
    }
}
