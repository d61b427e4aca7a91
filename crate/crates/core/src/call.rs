//! Tool-call records and the `[name](arg1, arg2)=result` surface syntax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{ArgKind, ToolSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Number(f64),
    Entity(String),
}

impl ArgValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Number(x) => Some(*x),
            ArgValue::Entity(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

impl ToolResult {
    pub fn number(value: f64) -> Self {
        ToolResult {
            text: format_number(value),
            value: Some(value),
        }
    }

    pub fn exact(text: String, value: f64) -> Self {
        ToolResult {
            text,
            value: Some(value),
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        ToolResult {
            text: text.into(),
            value: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallStatus {
    Ok,
    ParseError,
    ExecError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(rename = "args")]
    pub raw_args: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_args: Option<Vec<ArgValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ToolResult>,
    pub status: CallStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolCall {
    pub fn ok(tool: &str, raw: &str, args: Vec<ArgValue>, result: ToolResult) -> Self {
        ToolCall {
            tool: tool.to_string(),
            raw_args: raw.to_string(),
            parsed_args: Some(args),
            result: Some(result),
            status: CallStatus::Ok,
            error: None,
        }
    }

    pub fn parse_error(tool: &str, raw: &str, reason: String) -> Self {
        ToolCall {
            tool: tool.to_string(),
            raw_args: raw.to_string(),
            parsed_args: None,
            result: None,
            status: CallStatus::ParseError,
            error: Some(reason),
        }
    }

    pub fn exec_error(tool: &str, raw: &str, args: Vec<ArgValue>, reason: String) -> Self {
        ToolCall {
            tool: tool.to_string(),
            raw_args: raw.to_string(),
            parsed_args: Some(args),
            result: None,
            status: CallStatus::ExecError,
            error: Some(reason),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CallStatus::Ok
    }

    pub fn result_text(&self) -> Option<&str> {
        self.result.as_ref().map(|r| r.text.as_str())
    }
}

/// Integral values print without a fractional part; everything else uses the
/// shortest decimal that round-trips.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.fract() == 0.0 && x.abs() < 1e21 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

pub fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim().replace('_', "");
    if t.is_empty() {
        return None;
    }
    let t = t.strip_prefix('+').unwrap_or(&t);
    if !t
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | 'e' | 'E'))
    {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Parses the raw text between the call parentheses against the tool's schema.
///
/// A single entity-string argument takes the whole trimmed text; otherwise the
/// text is split on commas and each piece parsed by its declared kind.
pub fn parse_args(spec: &ToolSpec, raw: &str) -> Result<Vec<ArgValue>> {
    let err = |reason: String| Error::ArgParse {
        tool: spec.name.clone(),
        raw: raw.to_string(),
        reason,
    };
    let schema = &spec.arg_schema;
    if schema.is_empty() {
        return if raw.trim().is_empty() {
            Ok(Vec::new())
        } else {
            Err(err("tool takes no arguments".into()))
        };
    }
    if schema.len() == 1 && schema[0].kind == ArgKind::EntityString {
        let value = unquote(raw.trim());
        if value.is_empty() {
            return Err(err("empty argument".into()));
        }
        return Ok(vec![ArgValue::Entity(value.to_string())]);
    }
    let pieces: Vec<&str> = raw.split(',').map(str::trim).collect();
    if pieces.len() != schema.len() {
        return Err(err(format!(
            "expected {} arguments, found {}",
            schema.len(),
            pieces.len()
        )));
    }
    pieces
        .iter()
        .zip(schema)
        .map(|(piece, arg)| match arg.kind {
            ArgKind::Number => parse_number(piece)
                .map(ArgValue::Number)
                .ok_or_else(|| err(format!("`{piece}` is not a number"))),
            ArgKind::EntityString => {
                let v = unquote(piece);
                if v.is_empty() {
                    Err(err(format!("empty argument `{}`", arg.name)))
                } else {
                    Ok(ArgValue::Entity(v.to_string()))
                }
            }
        })
        .collect()
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s)
}

pub fn render_args(args: &[ArgValue]) -> String {
    args.iter()
        .map(|a| match a {
            ArgValue::Number(x) => format_number(*x),
            ArgValue::Entity(s) => s.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Index of the first `)` not inside double quotes, if any.
pub fn closing_paren(text: &str) -> Option<usize> {
    let mut quoted = false;
    for (i, c) in text.char_indices() {
        match c {
            '"' => quoted = !quoted,
            ')' if !quoted => return Some(i),
            _ => {}
        }
    }
    None
}

/// A call found in annotated text by [`find_calls`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallMatch {
    /// Byte range of the whole `[name](args)=result` expression.
    pub start: usize,
    pub end: usize,
    pub tool: String,
    pub raw_args: String,
    pub result: String,
}

/// Locates `[name](args)=result` expressions. A quoted result is the quoted
/// string; a numeric result runs to the next whitespace; any other result runs
/// to the end of the line. Trailing sentence punctuation is not part of the
/// result, except the period of an abbreviation such as `F.C.`.
pub fn find_calls(text: &str) -> Vec<CallMatch> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(off) = text[i..].find('[') {
        let start = i + off;
        let Some(close) = text[start..].find(']').map(|c| start + c) else {
            break;
        };
        let name = &text[start + 1..close];
        if validate_call_name(name) && bytes.get(close + 1) == Some(&b'(') {
            let args_start = close + 2;
            if let Some(rel) = closing_paren(&text[args_start..]) {
                let args_end = args_start + rel;
                if bytes.get(args_end + 1) == Some(&b'=') {
                    let res_start = args_end + 2;
                    let res_end = result_end(text, res_start);
                    if res_end > res_start {
                        let result = text[res_start..res_end].trim_matches('"');
                        out.push(CallMatch {
                            start,
                            end: res_end,
                            tool: name.to_string(),
                            raw_args: text[args_start..args_end].to_string(),
                            result: result.to_string(),
                        });
                        i = res_end;
                        continue;
                    }
                }
            }
        }
        i = start + 1;
    }
    out
}

fn validate_call_name(name: &str) -> bool {
    !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '[' | ']' | '(' | ')' | ','))
}

fn result_end(text: &str, start: usize) -> usize {
    let rest = &text[start..];
    if let Some(stripped) = rest.strip_prefix('"') {
        return match stripped.find('"') {
            Some(q) => start + q + 2,
            None => text.len(),
        };
    }
    let numeric = rest.starts_with(|c: char| c.is_ascii_digit() || c == '-');
    let stop = if numeric {
        rest.find(|c: char| c.is_whitespace())
    } else {
        rest.find('\n')
    };
    let mut end = stop.map_or(text.len(), |p| start + p);
    while end > start && text.as_bytes()[end - 1] == b' ' {
        end -= 1;
    }
    // sentence punctuation directly after the value
    while end > start && matches!(text.as_bytes()[end - 1], b'.' | b',' | b'?' | b'!' | b';') {
        let candidate = &text[start..end - 1];
        if text.as_bytes()[end - 1] == b'.' && candidate.ends_with(|c: char| c.is_ascii_uppercase()) {
            break;
        }
        end -= 1;
    }
    end
}
