//! Mini-home scenarios: a goal library, random room layouts and gold plans.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{harvest_and_fit, Trained};
use crate::backend::{LmBackend, WordHead};
use crate::data::plan::{plan_prompt, plan_vocab, PlanScript};
use crate::data::{build_parallel, plan_trace, ParallelSequence, PlanSequence};
use crate::decode::{DecodeConfig, Decoder};
use crate::error::{Error, Result};
use crate::eval::{plan_record, score_plans, PlanScores, Report};
use crate::tools::home::{builtin_objects, AgentState, MiniHome, PlanStep, RuleTable, Scenario, SceneObject};
use crate::tools::Toolbox;
use crate::train::TrainConfig;
use crate::vocab::{ToolkenVocab, END_NAME};

/// Furniture each room may hold, besides seats.
const ROOM_ITEMS: [(&str, &[&str]); 5] = [
    (
        "office",
        &[
            "desk", "computer", "keyboard", "mouse", "lamp", "phone", "novel", "cabinet",
        ],
    ),
    (
        "living_room",
        &[
            "table",
            "television",
            "remote_control",
            "lamp",
            "newspaper",
            "window",
            "pillow",
        ],
    ),
    ("bedroom", &["desk", "lamp", "novel", "pillow", "window", "phone"]),
    (
        "kitchen",
        &["table", "cup", "fridge", "food", "sink", "plate", "faucet", "cabinet"],
    ),
    ("bathroom", &["sink", "towel", "toothbrush", "faucet", "cup"]),
];

/// Seats each room may hold.
const ROOM_SEATS: [(&str, &[&str]); 5] = [
    ("office", &["chair"]),
    ("living_room", &["sofa", "chair"]),
    ("bedroom", &["bed", "chair"]),
    ("kitchen", &["chair"]),
    ("bathroom", &[]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalKind {
    ReadBook,
    WatchTv,
    Sit,
    Work,
    Drink,
    Sleep,
    Light,
    Wipe,
}

impl GoalKind {
    pub const ALL: [GoalKind; 8] = [
        GoalKind::ReadBook,
        GoalKind::WatchTv,
        GoalKind::Sit,
        GoalKind::Work,
        GoalKind::Drink,
        GoalKind::Sleep,
        GoalKind::Light,
        GoalKind::Wipe,
    ];

    pub fn title(self) -> &'static str {
        match self {
            GoalKind::ReadBook => "Read book",
            GoalKind::WatchTv => "Watch TV",
            GoalKind::Sit => "Sit down",
            GoalKind::Work => "Work",
            GoalKind::Drink => "Drink",
            GoalKind::Sleep => "Go to sleep",
            GoalKind::Light => "Turn on light",
            GoalKind::Wipe => "Clean surface",
        }
    }
}

fn items(room: &str) -> &'static [&'static str] {
    ROOM_ITEMS.iter().find(|(r, _)| *r == room).map_or(&[], |(_, v)| v)
}

fn seats(room: &str) -> &'static [&'static str] {
    ROOM_SEATS.iter().find(|(r, _)| *r == room).map_or(&[], |(_, v)| v)
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty choice")
}

/// The target room, the objects that must be placed there, and the gold plan.
struct Plan {
    room: &'static str,
    required: Vec<&'static str>,
    instruction: String,
    steps: Vec<PlanStep>,
    assertions: Vec<String>,
}

fn plan_for(kind: GoalKind, rng: &mut ChaCha8Rng) -> Plan {
    let step = PlanStep::new;
    match kind {
        GoalKind::ReadBook => {
            let room = pick(rng, &["office", "bedroom", "living_room"]);
            let obj = if room == "living_room" { "newspaper" } else { "novel" };
            Plan {
                room,
                required: vec![obj],
                instruction: format!("read the {obj} in the {room}"),
                steps: vec![
                    step("WALK", room),
                    step("FIND", obj),
                    step("GRAB", obj),
                    step("READ", obj),
                ],
                assertions: vec![format!("read:{obj}")],
            }
        }
        GoalKind::WatchTv => {
            let (room, obj) = *[("living_room", "television"), ("office", "computer")]
                .choose(rng)
                .expect("non-empty");
            Plan {
                room,
                required: vec![obj],
                instruction: format!("watch the {obj}"),
                steps: vec![
                    step("WALK", room),
                    step("FIND", obj),
                    step("SWITCHON", obj),
                    step("WATCH", obj),
                ],
                assertions: vec![format!("watched:{obj}")],
            }
        }
        GoalKind::Sit => {
            let room = pick(rng, &["office", "living_room", "bedroom", "kitchen"]);
            let seat = pick(rng, seats(room));
            let distractor = if items(room).contains(&"desk") { "desk" } else { "table" };
            Plan {
                room,
                required: vec![seat, distractor],
                instruction: format!("sit down in the {room}"),
                steps: vec![step("WALK", room), step("FIND", seat), step("SIT", seat)],
                assertions: vec![format!("sitting:{seat}")],
            }
        }
        GoalKind::Work => Plan {
            room: "office",
            required: vec!["computer", "chair", "desk"],
            instruction: "work on the computer".into(),
            steps: vec![
                step("WALK", "office"),
                step("FIND", "computer"),
                step("SWITCHON", "computer"),
                step("FIND", "chair"),
                step("SIT", "chair"),
            ],
            assertions: vec!["on:computer".into(), "sitting:chair".into()],
        },
        GoalKind::Drink => Plan {
            room: "kitchen",
            required: vec!["cup"],
            instruction: "drink from the cup".into(),
            steps: vec![
                step("WALK", "kitchen"),
                step("FIND", "cup"),
                step("GRAB", "cup"),
                step("DRINK", "cup"),
            ],
            assertions: vec!["drunk:cup".into()],
        },
        GoalKind::Sleep => Plan {
            room: "bedroom",
            required: vec!["bed"],
            instruction: "go to bed".into(),
            steps: vec![step("WALK", "bedroom"), step("FIND", "bed"), step("LIE", "bed")],
            assertions: vec!["lying:bed".into()],
        },
        GoalKind::Light => {
            let room = pick(rng, &["office", "living_room", "bedroom"]);
            Plan {
                room,
                required: vec!["lamp"],
                instruction: format!("turn on the lamp in the {room}"),
                steps: vec![step("WALK", room), step("FIND", "lamp"), step("SWITCHON", "lamp")],
                assertions: vec!["on:lamp".into()],
            }
        }
        GoalKind::Wipe => {
            let room = pick(rng, &["office", "bedroom", "living_room", "kitchen"]);
            let obj = if items(room).contains(&"desk") { "desk" } else { "table" };
            Plan {
                room,
                required: vec![obj],
                instruction: format!("wipe the {obj}"),
                steps: vec![step("WALK", room), step("FIND", obj), step("WIPE", obj)],
                assertions: vec![format!("wiped:{obj}")],
            }
        }
    }
}

/// One scenario for `kind` with a gold plan that executes and reaches the
/// goal. For [`GoalKind::Sit`] the target room holds exactly one seat and a
/// desk or table.
pub fn script(kind: GoalKind, id: &str, rng: &mut ChaCha8Rng) -> PlanScript {
    let catalog = builtin_objects();
    let props = |name: &str| {
        catalog
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.properties.clone())
            .unwrap_or_default()
    };
    let plan = plan_for(kind, rng);
    let mut rooms = vec![plan.room];
    let mut others: Vec<&str> = ROOM_ITEMS.iter().map(|(r, _)| *r).filter(|r| *r != plan.room).collect();
    others.shuffle(rng);
    rooms.extend(others.into_iter().take(rng.random_range(1..=2)));
    rooms.shuffle(rng);

    let mut used: BTreeSet<&str> = plan.required.iter().copied().collect();
    let mut placed: Vec<(&str, &str)> = plan.required.iter().map(|&o| (o, plan.room)).collect();
    for &room in &rooms {
        let mut pool: Vec<&str> = items(room).to_vec();
        let seat_free = !(kind == GoalKind::Sit && room == plan.room);
        if seat_free {
            pool.extend(seats(room));
        }
        pool.shuffle(rng);
        for o in pool {
            if !used.contains(o) && rng.random_bool(0.5) {
                used.insert(o);
                placed.push((o, room));
            }
        }
    }
    placed.shuffle(rng);

    let mut objects: Vec<SceneObject> = rooms
        .iter()
        .map(|&r| SceneObject {
            name: r.into(),
            room: r.into(),
            properties: props(r),
        })
        .collect();
    objects.extend(placed.into_iter().map(|(o, r)| SceneObject {
        name: o.into(),
        room: r.into(),
        properties: props(o),
    }));
    let scenario = Scenario {
        id: id.to_string(),
        goal: kind.title().to_string(),
        instruction: plan.instruction,
        rooms: rooms.iter().map(|r| r.to_string()).collect(),
        objects,
        initial_state: AgentState {
            location: Some(rooms[0].to_string()),
            ..Default::default()
        },
        goal_assertions: plan.assertions,
    };
    PlanScript {
        scenario,
        steps: plan.steps,
    }
}

/// `n` scripts cycling through `kinds`.
pub fn scripts(kinds: &[GoalKind], n: usize, seed: u64) -> Vec<PlanScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            script(
                kind,
                &format!("{}-{i}", kind.title().to_lowercase().replace(' ', "_")),
                &mut rng,
            )
        })
        .collect()
}

/// Every action of `rules` and every catalog object, plus `[END]`.
pub fn vocab(base_vocab_size: u32, rules: &RuleTable) -> Result<ToolkenVocab> {
    let actions: Vec<String> = rules.actions().map(str::to_string).collect();
    let objects: Vec<String> = builtin_objects().into_iter().map(|o| o.name).collect();
    plan_vocab(base_vocab_size, &actions, &objects)
}

/// Toolkens a plan for `scenario` may use: all actions, the scenario's
/// objects and `[END]`.
pub fn enabled_tools(scenario: &Scenario, rules: &RuleTable) -> Vec<String> {
    rules
        .actions()
        .map(str::to_string)
        .chain(scenario.objects.iter().map(|o| o.name.clone()))
        .chain(std::iter::once(END_NAME.to_string()))
        .collect()
}

pub fn training_sequences(
    backend: &dyn LmBackend,
    vocab: &ToolkenVocab,
    scripts: &[PlanScript],
) -> Result<Vec<ParallelSequence>> {
    scripts
        .iter()
        .map(|s| {
            let prompt = plan_prompt(&s.scenario);
            let plan = PlanSequence::from_steps(&prompt, &s.steps, vocab)?;
            build_parallel(&plan_trace(&prompt, &plan, vocab)?, backend, vocab)
        })
        .collect()
}

/// Whether the object chosen right after the first `[SIT]` is sittable in
/// `scenario`; `false` when the plan never sits.
pub fn sits_on_sittable(plan: &PlanSequence, vocab: &ToolkenVocab, scenario: &Scenario) -> Result<bool> {
    Ok(plan
        .steps(vocab)?
        .iter()
        .find(|s| s.action == "SIT")
        .and_then(|s| scenario.object(&s.object))
        .is_some_and(|o| o.properties.contains("sittable")))
}

/// Checks that every gold plan executes and reaches its goal.
pub fn check_scripts(scripts: &[PlanScript], rules: &Arc<RuleTable>) -> Result<()> {
    for s in scripts {
        s.scenario.validate()?;
        let env = MiniHome::new(rules.clone(), Arc::new(s.scenario.clone()));
        let out = env.run_plan(&s.steps);
        if !out.success {
            return Err(Error::InvalidTrace(format!(
                "gold plan for {} does not reach its goal",
                s.scenario.id
            )));
        }
    }
    Ok(())
}

/// Training scripts, plan-evaluation scripts and held-out sitting scripts.
pub const TRAIN_SCRIPTS: usize = 400;
pub const EVAL_PLANS: usize = 50;
pub const SIT_SCENARIOS: usize = 40;

pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        epochs: 300,
        patience: 0,
        class_balance: true,
        ..Default::default()
    }
}

/// Decoding restricted to the scenario's objects.
pub fn decode_config(scenario: &Scenario, rules: &RuleTable) -> DecodeConfig {
    DecodeConfig {
        enabled_tools: Some(enabled_tools(scenario, rules)),
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct HomeRun {
    pub trained: Trained,
    /// Plans for mixed goals, scored in the environment.
    pub plans: Report,
    pub scores: PlanScores,
    /// Share of held-out sitting scenarios whose plan sits on a sittable object.
    pub sittable_rate: f64,
    pub sit_plans: Vec<PlanSequence>,
}

/// Trains plan-mode toolkens on generated scripts, then decodes
/// [`EVAL_PLANS`] fresh plans and [`SIT_SCENARIOS`] sitting scenarios.
pub fn desk_run<B: LmBackend + WordHead>(backend: &B, dir: &Path, seed: u64) -> Result<HomeRun> {
    let rules = Arc::new(RuleTable::builtin());
    let vocab = vocab(LmBackend::vocab_size(backend) as u32, &rules)?;
    let train = scripts(&GoalKind::ALL, TRAIN_SCRIPTS, seed);
    check_scripts(&train, &rules)?;
    let seqs = training_sequences(backend, &vocab, &train)?;
    let trained = harvest_and_fit(backend, &vocab, &seqs, None, &dir.join("home.dump"), &train_config())?;
    let tools = Toolbox::new();
    let decode = |s: &Scenario| -> Result<PlanSequence> {
        Decoder::new(backend, &vocab, &trained.embeddings, &tools, decode_config(s, &rules))?
            .generate_plan(&plan_prompt(s))
    };
    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    for s in scripts(&GoalKind::ALL, EVAL_PLANS, seed.wrapping_add(1)) {
        let plan = decode(&s.scenario)?;
        let env = MiniHome::new(rules.clone(), Arc::new(s.scenario.clone()));
        let outcome = env.run_plan(&plan.steps(&vocab)?);
        outcomes.push(outcome);
        records.push(plan_record(&s.scenario.id, &plan, &s.scenario.goal_assertions, outcome));
    }
    let mut sit_plans = Vec::new();
    let mut sat = 0;
    for s in scripts(&[GoalKind::Sit], SIT_SCENARIOS, seed.wrapping_add(2)) {
        let plan = decode(&s.scenario)?;
        sat += sits_on_sittable(&plan, &vocab, &s.scenario)? as usize;
        sit_plans.push(plan);
    }
    Ok(HomeRun {
        trained,
        plans: Report::new("home", records),
        scores: score_plans(&outcomes),
        sittable_rate: sat as f64 / SIT_SCENARIOS as f64,
        sit_plans,
    })
}
