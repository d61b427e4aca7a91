//! Rule-based mini household environment for checking plans.
//!
//! Actions are defined by a data-driven rule table: each action lists
//! precondition and effect keywords evaluated against the acted-on object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RULES: &str = include_str!("../../data/home/rules.json");
pub const DEFAULT_OBJECTS: &str = include_str!("../../data/home/objects.json");

const HANDS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub preconditions: Vec<String>,
    pub effects: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleTable(pub BTreeMap<String, Rule>);

impl RuleTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let table: RuleTable = serde_json::from_str(text)?;
        for (action, rule) in &table.0 {
            for p in &rule.preconditions {
                Precondition::parse(p).map_err(|e| Error::Config(format!("{action}: {e}")))?;
            }
            for e in &rule.effects {
                Effect::parse(e).map_err(|err| Error::Config(format!("{action}: {err}")))?;
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_RULES).expect("built-in rule table parses")
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn get(&self, action: &str) -> Option<&Rule> {
        self.0.get(action)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDef {
    pub name: String,
    #[serde(default)]
    pub properties: BTreeSet<String>,
}

impl ObjectDef {
    pub fn has(&self, prop: &str) -> bool {
        self.properties.contains(prop)
    }

    pub fn is_room(&self) -> bool {
        self.has("room")
    }
}

/// The catalog of object kinds the environment knows about.
pub fn builtin_objects() -> Vec<ObjectDef> {
    serde_json::from_str(DEFAULT_OBJECTS).expect("built-in object catalog parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    /// Room holding the object; rooms name themselves.
    pub room: String,
    #[serde(default)]
    pub properties: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub location: Option<String>,
    #[serde(default)]
    pub near: Option<String>,
    #[serde(default)]
    pub holding: Vec<String>,
    #[serde(default)]
    pub sitting: Option<String>,
    #[serde(default)]
    pub lying: Option<String>,
    #[serde(default)]
    pub open: BTreeSet<String>,
    #[serde(default)]
    pub on: BTreeSet<String>,
    /// `flag:object` markers such as `read:novel`.
    #[serde(default)]
    pub flags: BTreeSet<String>,
    /// Objects moved away from their scenario room.
    #[serde(default)]
    pub moved: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub id: String,
    pub goal: String,
    pub instruction: String,
    pub rooms: Vec<String>,
    pub objects: Vec<SceneObject>,
    pub initial_state: AgentState,
    pub goal_assertions: Vec<String>,
}

impl Scenario {
    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Natural-language environment description used in plan prompts.
    pub fn describe(&self) -> String {
        let mut by_room: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for o in &self.objects {
            if !o.properties.contains("room") {
                by_room.entry(o.room.as_str()).or_default().push(o.name.as_str());
            }
        }
        self.rooms
            .iter()
            .map(|r| {
                let items = by_room.get(r.as_str()).map(|v| v.join(", ")).unwrap_or_default();
                format!("{r}: {items}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(&o.name) {
                return Err(Error::InvalidTrace(format!(
                    "scenario {}: duplicate object `{}`",
                    self.id, o.name
                )));
            }
            if !self.rooms.contains(&o.room) {
                return Err(Error::InvalidTrace(format!(
                    "scenario {}: object `{}` in unknown room `{}`",
                    self.id, o.name, o.room
                )));
            }
        }
        for a in &self.goal_assertions {
            Assertion::parse(a).map_err(Error::InvalidTrace)?;
        }
        Ok(())
    }
}

/// A broken precondition; the message names the rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub action: String,
    pub object: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] <{}>: {}", self.action, self.object, self.rule)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Precondition {
    Exists,
    Property(String),
    NotRoom,
    InRoom,
    Near,
    NotSitting,
    NotLying,
    Holding,
    NotHolding,
    HandFree,
    OpenContainerNear,
    Open,
    Closed,
    On,
    Off,
    SittingOn,
    LyingOn,
}

impl Precondition {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if let Some(p) = s.strip_prefix("property:") {
            return Ok(Precondition::Property(p.to_string()));
        }
        Ok(match s {
            "exists" => Precondition::Exists,
            "not_room" => Precondition::NotRoom,
            "in_room" => Precondition::InRoom,
            "near" => Precondition::Near,
            "not_sitting" => Precondition::NotSitting,
            "not_lying" => Precondition::NotLying,
            "holding" => Precondition::Holding,
            "not_holding" => Precondition::NotHolding,
            "hand_free" => Precondition::HandFree,
            "open_container_near" => Precondition::OpenContainerNear,
            "open" => Precondition::Open,
            "closed" => Precondition::Closed,
            "on" => Precondition::On,
            "off" => Precondition::Off,
            "sitting_on" => Precondition::SittingOn,
            "lying_on" => Precondition::LyingOn,
            _ => return Err(format!("unknown precondition `{s}`")),
        })
    }

    fn message(&self) -> String {
        match self {
            Precondition::Exists => "no such object".into(),
            Precondition::Property(p) => format!("not {p}"),
            Precondition::NotRoom => "is a room".into(),
            Precondition::InRoom => "not in the same room".into(),
            Precondition::Near => "not near".into(),
            Precondition::NotSitting => "agent is sitting".into(),
            Precondition::NotLying => "agent is lying down".into(),
            Precondition::Holding => "not holding".into(),
            Precondition::NotHolding => "already holding".into(),
            Precondition::HandFree => "hands full".into(),
            Precondition::OpenContainerNear => "no open container nearby".into(),
            Precondition::Open => "not open".into(),
            Precondition::Closed => "already open".into(),
            Precondition::On => "not switched on".into(),
            Precondition::Off => "already switched on".into(),
            Precondition::SittingOn => "not sitting on it".into(),
            Precondition::LyingOn => "not lying on it".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Effect {
    Goto,
    Hold,
    Release,
    Open,
    Close,
    SwitchOn,
    SwitchOff,
    Sit,
    Lie,
    Stand,
    Set(String),
}

impl Effect {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if let Some(f) = s.strip_prefix("set:") {
            return Ok(Effect::Set(f.to_string()));
        }
        Ok(match s {
            "goto" => Effect::Goto,
            "hold" => Effect::Hold,
            "release" => Effect::Release,
            "open" => Effect::Open,
            "close" => Effect::Close,
            "switch_on" => Effect::SwitchOn,
            "switch_off" => Effect::SwitchOff,
            "sit" => Effect::Sit,
            "lie" => Effect::Lie,
            "stand" => Effect::Stand,
            _ => return Err(format!("unknown effect `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Assertion {
    At(String),
    Near(String),
    Holding(String),
    Sitting(String),
    Lying(String),
    Open(String),
    Closed(String),
    On(String),
    Off(String),
    Flag(String, String),
}

impl Assertion {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let (pred, obj) = s
            .split_once(':')
            .ok_or_else(|| format!("goal assertion `{s}` is not `predicate:object`"))?;
        let o = obj.to_string();
        Ok(match pred {
            "at" => Assertion::At(o),
            "near" => Assertion::Near(o),
            "holding" => Assertion::Holding(o),
            "sitting" => Assertion::Sitting(o),
            "lying" => Assertion::Lying(o),
            "open" => Assertion::Open(o),
            "closed" => Assertion::Closed(o),
            "on" => Assertion::On(o),
            "off" => Assertion::Off(o),
            flag if !flag.is_empty() => Assertion::Flag(flag.to_string(), o),
            _ => return Err(format!("empty predicate in `{s}`")),
        })
    }

    fn holds(&self, st: &AgentState) -> bool {
        match self {
            Assertion::At(r) => st.location.as_ref() == Some(r),
            Assertion::Near(o) => st.near.as_ref() == Some(o),
            Assertion::Holding(o) => st.holding.contains(o),
            Assertion::Sitting(o) => st.sitting.as_ref() == Some(o),
            Assertion::Lying(o) => st.lying.as_ref() == Some(o),
            Assertion::Open(o) => st.open.contains(o),
            Assertion::Closed(o) => !st.open.contains(o),
            Assertion::On(o) => st.on.contains(o),
            Assertion::Off(o) => !st.on.contains(o),
            Assertion::Flag(f, o) => st.flags.contains(&format!("{f}:{o}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: String,
    pub object: String,
}

impl PlanStep {
    pub fn new(action: &str, object: &str) -> Self {
        PlanStep {
            action: action.to_string(),
            object: object.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub grounded: bool,
    pub executable: bool,
    pub success: bool,
    pub success_relaxed: bool,
}

/// One scenario instance with mutable agent state.
#[derive(Clone, Debug)]
pub struct MiniHome {
    rules: Arc<RuleTable>,
    scenario: Arc<Scenario>,
    state: AgentState,
}

impl MiniHome {
    pub fn new(rules: Arc<RuleTable>, scenario: Arc<Scenario>) -> Self {
        let state = scenario.initial_state.clone();
        MiniHome { rules, scenario, state }
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn reset(&mut self) {
        self.state = self.scenario.initial_state.clone();
    }

    pub fn goal_reached(&self) -> bool {
        self.scenario
            .goal_assertions
            .iter()
            .filter_map(|a| Assertion::parse(a).ok())
            .all(|a| a.holds(&self.state))
    }

    fn room_of(&self, obj: &SceneObject) -> String {
        self.state
            .moved
            .get(&obj.name)
            .cloned()
            .unwrap_or_else(|| obj.room.clone())
    }

    fn check(&self, pre: &Precondition, obj: Option<&SceneObject>, name: &str) -> bool {
        let st = &self.state;
        let Some(o) = obj else {
            return false;
        };
        let held = st.holding.iter().any(|h| h == name);
        match pre {
            Precondition::Exists => true,
            Precondition::Property(p) => o.properties.contains(p),
            Precondition::NotRoom => !o.properties.contains("room"),
            Precondition::InRoom => held || st.location.as_deref() == Some(self.room_of(o).as_str()),
            Precondition::Near => held || st.near.as_deref() == Some(name),
            Precondition::NotSitting => st.sitting.is_none(),
            Precondition::NotLying => st.lying.is_none(),
            Precondition::Holding => held,
            Precondition::NotHolding => !held,
            Precondition::HandFree => st.holding.len() < HANDS,
            Precondition::OpenContainerNear => {
                st.near
                    .as_deref()
                    .and_then(|n| self.scenario.object(n))
                    .is_some_and(|c| {
                        c.properties.contains("container")
                            && (!c.properties.contains("openable") || st.open.contains(&c.name))
                    })
            }
            Precondition::Open => st.open.contains(name),
            Precondition::Closed => !st.open.contains(name),
            Precondition::On => st.on.contains(name),
            Precondition::Off => !st.on.contains(name),
            Precondition::SittingOn => st.sitting.as_deref() == Some(name),
            Precondition::LyingOn => st.lying.as_deref() == Some(name),
        }
    }

    /// Applies one step; on a violation the state is left unchanged.
    pub fn apply_step(&mut self, action: &str, object: &str) -> std::result::Result<(), Violation> {
        let violation = |rule: String| Violation {
            action: action.to_string(),
            object: object.to_string(),
            rule,
        };
        let rule = self
            .rules
            .get(action)
            .ok_or_else(|| violation("unknown action".into()))?
            .clone();
        let obj = self.scenario.object(object).cloned();
        for p in &rule.preconditions {
            let pre = Precondition::parse(p).map_err(violation)?;
            if !self.check(&pre, obj.as_ref(), object) {
                return Err(violation(pre.message()));
            }
        }
        let Some(obj) = obj else {
            return Err(violation(Precondition::Exists.message()));
        };
        let st = &mut self.state;
        for e in &rule.effects {
            match Effect::parse(e).map_err(violation)? {
                Effect::Goto => {
                    let room = if obj.properties.contains("room") {
                        obj.name.clone()
                    } else {
                        st.moved.get(&obj.name).cloned().unwrap_or_else(|| obj.room.clone())
                    };
                    for h in &st.holding {
                        st.moved.insert(h.clone(), room.clone());
                    }
                    st.location = Some(room);
                    st.near = Some(obj.name.clone());
                }
                Effect::Hold => st.holding.push(obj.name.clone()),
                Effect::Release => {
                    st.holding.retain(|h| h != &obj.name);
                    if let Some(loc) = &st.location {
                        st.moved.insert(obj.name.clone(), loc.clone());
                    }
                }
                Effect::Open => {
                    st.open.insert(obj.name.clone());
                }
                Effect::Close => {
                    st.open.remove(&obj.name);
                }
                Effect::SwitchOn => {
                    st.on.insert(obj.name.clone());
                }
                Effect::SwitchOff => {
                    st.on.remove(&obj.name);
                }
                Effect::Sit => st.sitting = Some(obj.name.clone()),
                Effect::Lie => st.lying = Some(obj.name.clone()),
                Effect::Stand => {
                    st.sitting = None;
                    st.lying = None;
                }
                Effect::Set(flag) => {
                    st.flags.insert(format!("{flag}:{}", obj.name));
                }
            }
        }
        Ok(())
    }

    /// Executes `steps` from the initial state. Execution stops at the first
    /// violation; relaxed success counts any state reached before it.
    pub fn run_plan(&self, steps: &[PlanStep]) -> PlanOutcome {
        let grounded = steps
            .iter()
            .all(|s| self.rules.get(&s.action).is_some() && self.scenario.object(&s.object).is_some());
        let mut env = self.clone();
        env.reset();
        let mut executable = true;
        let mut relaxed = false;
        for s in steps {
            if env.apply_step(&s.action, &s.object).is_err() {
                executable = false;
                break;
            }
            relaxed |= env.goal_reached();
        }
        let success = executable && env.goal_reached();
        PlanOutcome {
            grounded,
            executable,
            success,
            success_relaxed: relaxed || success,
        }
    }
}
