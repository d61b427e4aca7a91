//! Plan-mode data: alternating action/object toolken sequences ending with
//! `[END]`, their rendered training traces, and script curation.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AnnotatedTrace, TraceCall};
use crate::error::{Error, Result};
use crate::tools::home::{MiniHome, PlanStep, RuleTable, Scenario};
use crate::vocab::{FusedTokenId, TokenClass, ToolKind, ToolkenVocab, END_NAME};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSequence {
    pub prompt_text: String,
    pub plan: Vec<FusedTokenId>,
    /// Set when decoding ran out of budget before `[END]`.
    #[serde(default)]
    pub truncated: bool,
}

impl PlanSequence {
    /// Odd (1-indexed) items are actions, even items objects, and the last
    /// item is `[END]`, which may only take an action slot.
    pub fn validate(&self, vocab: &ToolkenVocab) -> Result<()> {
        let bad = |why: String| Error::InvalidTrace(format!("plan: {why}"));
        let n = self.plan.len();
        for (i, &id) in self.plan.iter().enumerate() {
            let kind = match vocab.classify(id)? {
                TokenClass::Toolken { spec, .. } => spec.kind,
                TokenClass::Word(w) => return Err(bad(format!("item {} is word {w}", i + 1))),
            };
            let action_slot = i % 2 == 0;
            let ok = match kind {
                ToolKind::NoArgAction => action_slot,
                ToolKind::NoArgObject => !action_slot,
                ToolKind::EndMarker => action_slot && i + 1 == n,
                ToolKind::FunctionWithArgs => false,
            };
            if !ok {
                return Err(bad(format!("item {} ({kind:?}) out of place", i + 1)));
            }
        }
        let ends = self
            .plan
            .last()
            .is_some_and(|&id| matches!(vocab.classify(id), Ok(TokenClass::Toolken { spec, .. }) if spec.kind == ToolKind::EndMarker));
        if !ends && !self.truncated {
            return Err(bad("does not end with [END]".into()));
        }
        Ok(())
    }

    pub fn steps(&self, vocab: &ToolkenVocab) -> Result<Vec<PlanStep>> {
        let names: Vec<&str> = self
            .plan
            .iter()
            .map(|&id| match vocab.classify(id)? {
                TokenClass::Toolken { spec, .. } => Ok(spec.name.as_str()),
                TokenClass::Word(w) => Err(Error::InvalidTrace(format!("plan item {w} is a word"))),
            })
            .collect::<Result<_>>()?;
        Ok(names
            .chunks(2)
            .filter(|c| c.len() == 2)
            .map(|c| PlanStep::new(c[0], c[1]))
            .collect())
    }

    pub fn from_steps(prompt: &str, steps: &[PlanStep], vocab: &ToolkenVocab) -> Result<Self> {
        let id = |name: &str| vocab.lookup(name).ok_or_else(|| Error::UnknownTool(name.to_string()));
        let mut plan = Vec::with_capacity(steps.len() * 2 + 1);
        for s in steps {
            plan.push(id(&s.action)?);
            plan.push(id(&s.object)?);
        }
        plan.push(id(END_NAME)?);
        Ok(PlanSequence {
            prompt_text: prompt.to_string(),
            plan,
            truncated: false,
        })
    }
}

/// Registers one action toolken per rule, one object toolken per catalog
/// entry, and `[END]`.
pub fn plan_vocab(base_vocab_size: u32, actions: &[String], objects: &[String]) -> Result<ToolkenVocab> {
    let mut v = ToolkenVocab::new(base_vocab_size);
    for a in actions {
        v.register(crate::vocab::ToolSpec::action(a))?;
    }
    for o in objects {
        v.register(crate::vocab::ToolSpec::object(o))?;
    }
    v.register_end_marker()?;
    Ok(v)
}

/// The room listing first, then the goal and instruction right before the
/// plan.
pub fn plan_prompt(scenario: &Scenario) -> String {
    format!(
        "Objects:\n{}\nGoal: {}\nInstruction: {}\nPlan:\n",
        scenario.describe(),
        scenario.goal,
        scenario.instruction
    )
}

/// Rendered plan text with one call span per action, object and `[END]`.
/// Spans cover the bracketed names; the separating space and newline are
/// ordinary word targets.
pub fn plan_trace(prompt: &str, plan: &PlanSequence, vocab: &ToolkenVocab) -> Result<AnnotatedTrace> {
    let mut text = prompt.to_string();
    let mut calls = Vec::with_capacity(plan.plan.len());
    for &id in &plan.plan {
        let spec = match vocab.classify(id)? {
            TokenClass::Toolken { spec, .. } => spec,
            TokenClass::Word(w) => return Err(Error::InvalidTrace(format!("plan item {w} is a word"))),
        };
        let rendered = spec.render();
        let core = rendered.trim_end();
        let start = text.len();
        calls.push(TraceCall {
            start,
            end: start + core.len(),
            tool: spec.name.clone(),
            args: String::new(),
        });
        text.push_str(&rendered);
    }
    Ok(AnnotatedTrace { text, calls })
}

/// A demonstration script: a scenario plus its gold plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanScript {
    pub scenario: Scenario,
    pub steps: Vec<PlanStep>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationStats {
    pub input: usize,
    pub not_executable: usize,
    pub no_state_change: usize,
    pub duplicate: usize,
    pub repeated_object_name: usize,
    pub kept: usize,
}

/// Drops scripts that violate a rule, leave the state unchanged, repeat an
/// earlier (goal, instruction) pair, or whose scenario names two objects the
/// same.
pub fn curate_scripts(scripts: Vec<PlanScript>, rules: &Arc<RuleTable>) -> (Vec<PlanScript>, CurationStats) {
    let mut stats = CurationStats {
        input: scripts.len(),
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for script in scripts {
        let names: Vec<&str> = script.scenario.objects.iter().map(|o| o.name.as_str()).collect();
        let unique: BTreeSet<&str> = names.iter().copied().collect();
        if unique.len() != names.len() {
            stats.repeated_object_name += 1;
            continue;
        }
        let mut env = MiniHome::new(rules.clone(), Arc::new(script.scenario.clone()));
        let mut ok = true;
        for s in &script.steps {
            if env.apply_step(&s.action, &s.object).is_err() {
                ok = false;
                break;
            }
        }
        if !ok {
            stats.not_executable += 1;
            continue;
        }
        if env.state() == &script.scenario.initial_state {
            stats.no_state_change += 1;
            continue;
        }
        let key = (script.scenario.goal.clone(), script.scenario.instruction.clone());
        if !seen.insert(key) {
            stats.duplicate += 1;
            continue;
        }
        kept.push(script);
    }
    stats.kept = kept.len();
    (kept, stats)
}
