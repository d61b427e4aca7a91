//! Knowledge-base facts as templated question/answer traces.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedTrace, TraceCall};
use crate::error::{Error, Result};
use crate::tools::kb::{Fact, SUBJECT_SLOT};

pub const QUESTION_PREFIX: &str = "Question: ";
pub const ANSWER_PREFIX: &str = "\nAnswer: The answer is ";

pub const SUBSET_RELATION_COUNTS: [usize; 4] = [30, 60, 100, 234];
pub const SUBSET_SIZE: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbQuestion {
    pub relation: String,
    pub subject: String,
    pub object: String,
    pub question: String,
}

impl KbQuestion {
    /// The reasoning-mode prompt, ending right where the answer starts.
    pub fn prompt(&self) -> String {
        format!("{QUESTION_PREFIX}{}{ANSWER_PREFIX}", self.question)
    }
}

pub fn fill_question(template: &str, subject: &str) -> String {
    template.replace(SUBJECT_SLOT, subject)
}

pub fn question_for(fact: &Fact, templates: &BTreeMap<String, String>) -> Result<KbQuestion> {
    if fact.subject.trim().is_empty() || fact.object.trim().is_empty() {
        return Err(Error::InvalidTrace(format!(
            "fact for `{}` has an empty subject or object",
            fact.relation
        )));
    }
    let template = templates
        .get(&fact.relation)
        .ok_or_else(|| Error::MissingTemplate(fact.relation.clone()))?;
    Ok(KbQuestion {
        relation: fact.relation.clone(),
        subject: fact.subject.clone(),
        object: fact.object.clone(),
        question: fill_question(template, &fact.subject),
    })
}

/// `Question: <template>\nAnswer: The answer is <object>.` with the call span
/// over the object and the subject as argument.
pub fn kb_to_qa(fact: &Fact, templates: &BTreeMap<String, String>) -> Result<AnnotatedTrace> {
    let q = question_for(fact, templates)?;
    let mut text = q.prompt();
    let start = text.len();
    text.push_str(&fact.object);
    let end = text.len();
    text.push('.');
    Ok(AnnotatedTrace {
        text,
        calls: vec![TraceCall {
            start,
            end,
            tool: fact.relation.clone(),
            args: fact.subject.clone(),
        }],
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbSubset {
    /// The sampled relations, in sampling order.
    pub relations: Vec<String>,
    pub questions: Vec<KbQuestion>,
}

/// Draws one question subset per entry of `relation_counts`, each restricted
/// to that many relations. With `nested`, the relation sets grow by prefix of
/// a single shuffled order, so smaller sets are contained in larger ones.
pub fn sample_kb_subsets(
    testset: &[KbQuestion],
    relation_counts: &[usize],
    size: usize,
    seed: u64,
    nested: bool,
) -> Result<Vec<KbSubset>> {
    let relations: Vec<&str> = testset
        .iter()
        .map(|q| q.relation.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let max = relation_counts.iter().copied().max().unwrap_or(0);
    if relations.len() < max {
        return Err(Error::InsufficientData(format!(
            "test set covers {} relations, {max} requested",
            relations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = relations.clone();
    order.shuffle(&mut rng);
    let mut subsets = Vec::with_capacity(relation_counts.len());
    for &k in relation_counts {
        if !nested {
            order.shuffle(&mut rng);
        }
        let chosen: BTreeSet<&str> = order[..k].iter().copied().collect();
        let mut pool: Vec<&KbQuestion> = testset
            .iter()
            .filter(|q| chosen.contains(q.relation.as_str()))
            .collect();
        if pool.len() < size {
            return Err(Error::InsufficientData(format!(
                "{} questions over {k} relations, {size} requested",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        subsets.push(KbSubset {
            relations: order[..k].iter().map(|r| r.to_string()).collect(),
            questions: pool[..size].iter().map(|q| (*q).clone()).collect(),
        });
    }
    Ok(subsets)
}
