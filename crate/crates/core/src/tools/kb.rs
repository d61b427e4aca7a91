//! In-memory relation store: every relation is a tool mapping a subject
//! entity to its object entity.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::vocab::{ArgSpec, ToolSpec};

pub const SUBJECT_SLOT: &str = "[S]";
pub const MAX_RELATIONS: usize = 243;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KbError {
    UnknownRelation(String),
    SubjectNotFound { relation: String, subject: String },
}

impl std::fmt::Display for KbError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KbError::UnknownRelation(r) => write!(f, "unknown relation `{r}`"),
            KbError::SubjectNotFound { relation, subject } => {
                write!(f, "no `{relation}` fact for subject {subject:?}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fact {
    pub relation: String,
    pub subject: String,
    pub object: String,
}

impl Fact {
    pub fn new(relation: &str, subject: &str, object: &str) -> Self {
        Fact {
            relation: relation.to_string(),
            subject: subject.to_string(),
            object: object.to_string(),
        }
    }
}

/// Subjects are compared after NFC normalisation and trimming; case is kept.
pub fn normalize_subject(s: &str) -> String {
    s.trim().nfc().collect()
}

#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    facts: BTreeMap<String, BTreeMap<String, String>>,
    templates: BTreeMap<String, String>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later facts for the same (relation, subject) replace earlier ones.
    pub fn insert(&mut self, fact: &Fact) -> Result<()> {
        if !self.facts.contains_key(&fact.relation) && self.facts.len() >= MAX_RELATIONS {
            return Err(Error::InsufficientData(format!(
                "store already holds {MAX_RELATIONS} relations"
            )));
        }
        self.facts
            .entry(fact.relation.clone())
            .or_default()
            .insert(normalize_subject(&fact.subject), fact.object.clone());
        Ok(())
    }

    pub fn set_template(&mut self, relation: &str, template: &str) -> Result<()> {
        if !template.contains(SUBJECT_SLOT) {
            return Err(Error::InvalidTemplate(format!(
                "template for `{relation}` lacks {SUBJECT_SLOT}"
            )));
        }
        self.templates.insert(relation.to_string(), template.to_string());
        Ok(())
    }

    pub fn template(&self, relation: &str) -> Option<&str> {
        self.templates.get(relation).map(String::as_str)
    }

    pub fn templates(&self) -> &BTreeMap<String, String> {
        &self.templates
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.facts.keys().map(String::as_str)
    }

    pub fn relation_count(&self) -> usize {
        self.facts.len()
    }

    pub fn fact_count(&self) -> usize {
        self.facts.values().map(BTreeMap::len).sum()
    }

    pub fn facts(&self) -> impl Iterator<Item = Fact> + '_ {
        self.facts
            .iter()
            .flat_map(|(r, m)| m.iter().map(move |(s, o)| Fact::new(r, s, o)))
    }

    pub fn is_stored_object(&self, relation: &str, object: &str) -> bool {
        self.facts
            .get(relation)
            .is_some_and(|m| m.values().any(|o| o == object))
    }

    pub fn lookup(&self, relation: &str, subject: &str) -> std::result::Result<&str, KbError> {
        let table = self
            .facts
            .get(relation)
            .ok_or_else(|| KbError::UnknownRelation(relation.to_string()))?;
        table
            .get(&normalize_subject(subject))
            .map(String::as_str)
            .ok_or_else(|| KbError::SubjectNotFound {
                relation: relation.to_string(),
                subject: subject.to_string(),
            })
    }

    /// The tool spec for one relation: a single entity argument.
    pub fn relation_spec(&self, relation: &str) -> ToolSpec {
        let description = self
            .template(relation)
            .map(|t| t.replace(SUBJECT_SLOT, "X"))
            .unwrap_or_default();
        ToolSpec::function(relation, vec![ArgSpec::entity("subject")], &description)
    }

    /// Parses `relation<TAB>subject<TAB>object` lines.
    pub fn parse_tsv(text: &str, path: &Path) -> Result<Vec<Fact>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 || cols.iter().any(|c| c.trim().is_empty()) {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "expected relation<TAB>subject<TAB>object".into(),
                });
            }
            out.push(Fact::new(cols[0].trim(), cols[1].trim(), cols[2].trim()));
        }
        Ok(out)
    }

    pub fn load_tsv(&mut self, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let facts = Self::parse_tsv(&text, path)?;
        for f in &facts {
            self.insert(f)?;
        }
        Ok(facts.len())
    }

    /// Parses `relation<TAB>template` lines.
    pub fn load_templates(&mut self, path: &Path) -> Result<usize> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (rel, tpl) = line.split_once('\t').ok_or_else(|| Error::Data {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "expected relation<TAB>template".into(),
            })?;
            self.set_template(rel.trim(), tpl.trim())?;
            n += 1;
        }
        Ok(n)
    }
}

pub fn write_tsv(facts: &[Fact]) -> String {
    facts
        .iter()
        .map(|f| format!("{}\t{}\t{}\n", f.relation, f.subject, f.object))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> TripleStore {
        let mut s = TripleStore::new();
        s.insert(&Fact::new("winner_of", "2005-06 FA Cup", "Liverpool F.C."))
            .unwrap();
        s.insert(&Fact::new("capital", "U.S.", "Washington D.C.")).unwrap();
        s.set_template("winner_of", "Who is the winner of [S]?").unwrap();
        s
    }

    #[test]
    fn lookups() {
        let s = store();
        assert_eq!(s.lookup("winner_of", "2005-06 FA Cup"), Ok("Liverpool F.C."));
        assert_eq!(s.lookup("capital", " U.S. "), Ok("Washington D.C."));
        assert!(matches!(
            s.lookup("winner_of", "Nonexistent Cup"),
            Err(KbError::SubjectNotFound { .. })
        ));
        assert!(matches!(s.lookup("founder", "U.S."), Err(KbError::UnknownRelation(_))));
        assert!(s.lookup("capital", "u.s.").is_err());
    }

    #[test]
    fn nfc_subjects() {
        let mut s = TripleStore::new();
        s.insert(&Fact::new("capital", "Zu\u{0308}rich", "x")).unwrap();
        assert_eq!(s.lookup("capital", "Z\u{00fc}rich"), Ok("x"));
    }

    #[test]
    fn tsv_round_trip() {
        let s = store();
        let facts: Vec<Fact> = s.facts().collect();
        let parsed = TripleStore::parse_tsv(&write_tsv(&facts), Path::new("x")).unwrap();
        assert_eq!(parsed, facts);
        assert!(TripleStore::parse_tsv("a\tb\n", Path::new("x")).is_err());
    }

    #[test]
    fn template_needs_slot() {
        let mut s = store();
        assert!(s.set_template("capital", "What is the capital?").is_err());
        assert_eq!(s.relation_spec("winner_of").arg_schema.len(), 1);
    }
}
