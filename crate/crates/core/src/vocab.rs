//! Toolken vocabulary: the registry of tools appended after the word vocabulary.
//!
//! A vocabulary bound to a backend with `base_vocab_size` words assigns tool `i`
//! the fused id `base_vocab_size + i`. Tools are only ever appended, so ids of
//! previously registered tools never move.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel name for ignored training targets.
pub const NA_NAME: &str = "[N/A]";
/// Name of the plan terminator toolken.
pub const END_NAME: &str = "[END]";

const RESERVED: [&str; 4] = [NA_NAME, END_NAME, "N/A", "END"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolKind {
    FunctionWithArgs,
    NoArgAction,
    NoArgObject,
    EndMarker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgKind {
    Number,
    EntityString,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
}

impl ArgSpec {
    pub fn number(name: &str) -> Self {
        ArgSpec {
            name: name.to_string(),
            kind: ArgKind::Number,
        }
    }

    pub fn entity(name: &str) -> Self {
        ArgSpec {
            name: name.to_string(),
            kind: ArgKind::EntityString,
        }
    }
}

/// A demonstration text containing one `[tool](arguments)=result` call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoExample {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    #[serde(default)]
    pub arg_schema: Vec<ArgSpec>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<DemoExample>,
}

impl ToolSpec {
    pub fn function(name: &str, args: Vec<ArgSpec>, description: &str) -> Self {
        ToolSpec {
            name: name.to_string(),
            kind: ToolKind::FunctionWithArgs,
            arg_schema: args,
            description: description.to_string(),
            demonstrations: Vec::new(),
        }
    }

    pub fn action(name: &str) -> Self {
        Self::no_arg(name, ToolKind::NoArgAction)
    }

    pub fn object(name: &str) -> Self {
        Self::no_arg(name, ToolKind::NoArgObject)
    }

    fn no_arg(name: &str, kind: ToolKind) -> Self {
        ToolSpec {
            name: name.to_string(),
            kind,
            arg_schema: Vec::new(),
            description: String::new(),
            demonstrations: Vec::new(),
        }
    }

    pub fn with_demos<I, S>(mut self, demos: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.demonstrations
            .extend(demos.into_iter().map(|t| DemoExample { text: t.into() }));
        self
    }

    /// Surface form used when the toolken is written into plan-mode text.
    pub fn render(&self) -> String {
        match self.kind {
            ToolKind::NoArgAction => format!("[{}] ", self.name),
            ToolKind::NoArgObject => format!("<{}>\n", self.name),
            ToolKind::EndMarker => END_NAME.to_string(),
            ToolKind::FunctionWithArgs => format!("[{}]", self.name),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_name(&self.name)?;
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidToolSpec {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            ToolKind::FunctionWithArgs if self.arg_schema.is_empty() => {
                Err(bad("function tools need at least one argument"))
            }
            ToolKind::NoArgAction | ToolKind::NoArgObject | ToolKind::EndMarker if !self.arg_schema.is_empty() => {
                Err(bad("no-arg tools cannot declare arguments"))
            }
            _ => Ok(()),
        }
    }
}

pub fn validate_name(name: &str) -> Result<()> {
    let invalid = |reason| Error::InvalidToolName {
        name: name.to_string(),
        reason,
    };
    if name.is_empty() {
        return Err(invalid("empty"));
    }
    if name
        .chars()
        .any(|c| c.is_whitespace() || matches!(c, '[' | ']' | '(' | ')' | ','))
    {
        return Err(invalid("contains whitespace or one of `[ ] ( ) ,`"));
    }
    if RESERVED.contains(&name) {
        return Err(invalid("reserved"));
    }
    Ok(())
}

/// Identifier over the fused space of word tokens followed by toolkens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FusedTokenId(pub u32);

impl FusedTokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for FusedTokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TokenClass<'a> {
    Word(u32),
    Toolken { index: usize, spec: &'a ToolSpec },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolkenVocab {
    base_vocab_size: u32,
    tools: Vec<ToolSpec>,
}

impl ToolkenVocab {
    pub fn new(base_vocab_size: u32) -> Self {
        ToolkenVocab {
            base_vocab_size,
            tools: Vec::new(),
        }
    }

    pub fn base_vocab_size(&self) -> u32 {
        self.base_vocab_size
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn fused_size(&self) -> u32 {
        self.base_vocab_size + self.tools.len() as u32
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<FusedTokenId> {
        spec.validate()?;
        self.push(spec)
    }

    /// Appends the `[END]` plan terminator, returning the existing id if present.
    pub fn register_end_marker(&mut self) -> Result<FusedTokenId> {
        if let Some(id) = self.lookup(END_NAME) {
            return Ok(id);
        }
        self.push(ToolSpec {
            name: END_NAME.to_string(),
            kind: ToolKind::EndMarker,
            arg_schema: Vec::new(),
            description: "end of plan".to_string(),
            demonstrations: Vec::new(),
        })
    }

    fn push(&mut self, spec: ToolSpec) -> Result<FusedTokenId> {
        if self.lookup(&spec.name).is_some() {
            return Err(Error::DuplicateTool(spec.name));
        }
        let id = FusedTokenId(self.fused_size());
        self.tools.push(spec);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<FusedTokenId> {
        self.tools
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.toolken_id(i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tools.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn toolken_id(&self, index: usize) -> FusedTokenId {
        FusedTokenId(self.base_vocab_size + index as u32)
    }

    pub fn classify(&self, id: FusedTokenId) -> Result<TokenClass<'_>> {
        if id.0 < self.base_vocab_size {
            return Ok(TokenClass::Word(id.0));
        }
        let index = (id.0 - self.base_vocab_size) as usize;
        match self.tools.get(index) {
            Some(spec) => Ok(TokenClass::Toolken { index, spec }),
            None => Err(Error::TokenOutOfRange {
                id: id.0,
                size: self.fused_size(),
            }),
        }
    }

    pub fn freeze(self) -> Arc<ToolkenVocab> {
        Arc::new(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ToolkenVocab = serde_json::from_str(text)?;
        let mut vocab = ToolkenVocab::new(raw.base_vocab_size);
        for spec in raw.tools {
            if spec.kind == ToolKind::EndMarker && spec.name == END_NAME {
                vocab.register_end_marker()?;
            } else {
                vocab.register(spec)?;
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ToolSpec {
        ToolSpec::function("square", vec![ArgSpec::number("x")], "x squared")
    }

    #[test]
    fn first_registration_gets_base_id() {
        let mut v = ToolkenVocab::new(32000);
        assert_eq!(v.register(square()).unwrap(), FusedTokenId(32000));
    }

    #[test]
    fn consecutive_ids() {
        let mut v = ToolkenVocab::new(32000);
        let ids: Vec<u32> = (0..13)
            .map(|i| {
                v.register(ToolSpec::function(&format!("op{i}"), vec![ArgSpec::number("a")], ""))
                    .unwrap()
                    .0
            })
            .collect();
        assert_eq!(ids, (32000..32013).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_rejected() {
        let mut v = ToolkenVocab::new(32000);
        v.register(square()).unwrap();
        assert!(matches!(v.register(square()), Err(Error::DuplicateTool(_))));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn name_rules() {
        for bad in ["", "a b", "a[b", "x]", "f(", "g)", "a,b", "[END]", "[N/A]", "N/A"] {
            let spec = ToolSpec::object(bad);
            assert!(spec.validate().is_err(), "{bad:?} accepted");
        }
        assert!(ToolSpec::object("remote_control").validate().is_ok());
    }

    #[test]
    fn shape_rules() {
        let mut f = square();
        f.arg_schema.clear();
        assert!(f.validate().is_err());
        let mut o = ToolSpec::object("chair");
        o.arg_schema.push(ArgSpec::number("x"));
        assert!(o.validate().is_err());
    }

    #[test]
    fn classify_boundaries() {
        let mut v = ToolkenVocab::new(32000);
        v.register(square()).unwrap();
        assert_eq!(v.classify(FusedTokenId(31999)).unwrap(), TokenClass::Word(31999));
        match v.classify(FusedTokenId(32000)).unwrap() {
            TokenClass::Toolken { index, spec } => {
                assert_eq!(index, 0);
                assert_eq!(spec.name, "square");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn classify_out_of_range() {
        let mut v = ToolkenVocab::new(32000);
        for i in 0..13 {
            v.register(ToolSpec::object(&format!("o{i}"))).unwrap();
        }
        assert!(matches!(
            v.classify(FusedTokenId(32013)),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn end_marker_is_idempotent_and_reserved() {
        let mut v = ToolkenVocab::new(10);
        let a = v.register_end_marker().unwrap();
        let b = v.register_end_marker().unwrap();
        assert_eq!(a, b);
        assert_eq!(v.len(), 1);
        let json = v.to_json().unwrap();
        assert_eq!(ToolkenVocab::from_json(&json).unwrap(), v);
    }

    #[test]
    fn append_keeps_serialized_prefix() {
        let mut v = ToolkenVocab::new(300);
        v.register(square()).unwrap();
        v.register(ToolSpec::object("chair")).unwrap();
        let before = v.to_json().unwrap();
        v.register(ToolSpec::action("SIT")).unwrap();
        let after = v.to_json().unwrap();
        // everything up to the close of the last old tool object is unchanged
        let cut = before.rfind('}').unwrap();
        let cut = before[..cut].rfind('}').unwrap() + 1;
        assert_eq!(&after[..cut], &before[..cut]);
    }
}
