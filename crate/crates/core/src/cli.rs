//! Command-line front end: synth, preprocess, harvest, train, generate, eval
//! and inspect. Each command echoes its resolved configuration to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backend::{LmBackend, ToyLm};
use crate::config::{DecodeMode, RunConfig};
use crate::data::{
    build_parallel_aligned, jsonl_lines, read_jsonl, write_jsonl, AnnotatedTrace, ParallelSequence, PlanSequence,
};
use crate::decode::{Decoder, Transcript};
use crate::dump::{harvest, read_dump, HarvestOptions};
use crate::error::{Error, Result};
use crate::eval::{extract_text, plan_record, score_transcript, EvalRecord, Gold, GoldCall, Report};
use crate::tasks::{funcqa, home, kbworld};
use crate::tools::home::{MiniHome, RuleTable, Scenario};
use crate::tools::{ArithOp, Toolbox, TripleStore};
use crate::train::{fit, ToolkenEmbeddings};
use crate::vocab::ToolkenVocab;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "toolken",
    version,
    about = "Train and use toolken embeddings on a frozen language model"
)]
pub struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `threads`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Funcqa,
    Kb,
    Home,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic dataset, its vocabulary and a matching config file.
    Synth {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Converts annotated traces (JSONL) into paired sequences (JSONL).
    Preprocess {
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop lines that fail to convert instead of failing.
        #[arg(long)]
        skip_bad: bool,
    },
    /// Runs the frozen backend over paired sequences and writes a hidden-state dump.
    Harvest {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fits toolken embeddings on a dump and writes a checkpoint.
    Train {
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decodes every prompt line and writes one transcript or plan per line.
    Generate {
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Knowledge-base directory whose relations become executable tools.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scores transcripts or plans against gold lines.
    Eval {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Needed to score plans.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Adds the `honest` metric for knowledge-base answers.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Full report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints a checkpoint's shape, row norms and nearest rows.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// One prompt to decode. `enabled_tools` overrides the configured set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptLine {
    pub id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled_tools: Option<Vec<String>>,
}

/// Gold answer for one id. Plans carry their scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldLine {
    pub id: String,
    pub gold: Gold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<GoldCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Output {
    Transcript { id: String, transcript: Transcript },
    Plan { id: String, plan: PlanSequence },
}

impl Output {
    fn id(&self) -> &str {
        match self {
            Output::Transcript { id, .. } | Output::Plan { id, .. } => id,
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::DuplicateTool(_)
        | Error::InvalidToolName { .. }
        | Error::InvalidToolSpec { .. }
        | Error::UnknownTool(_)
        | Error::FingerprintMismatch { .. } => EXIT_USAGE,
        Error::TokenOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::NonFiniteLoss { .. }
        | Error::NothingAllowed(_)
        | Error::ScriptMiss(_) => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli, std::env::vars()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolves configuration from the file, `TK_*` variables and flags.
pub fn resolve_config<V: IntoIterator<Item = (String, String)>>(cli: &Cli, vars: V) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(vars)?;
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    cfg.threads()?;
    cfg.seed()?;
    cfg.backend_seed()?;
    cfg.strict_fingerprint()?;
    cfg.train_config()?.validate()?;
    cfg.decode_mode()?;
    cfg.decode_config()?.validate()?;
    cfg.numeric_mode()?;
    cfg.synth_counts()?;
    cfg.synth_ops()?;
    Ok(cfg)
}

pub fn execute<V: IntoIterator<Item = (String, String)>>(cli: &Cli, vars: V) -> Result<()> {
    let cfg = resolve_config(cli, vars)?;
    for line in cfg.render().lines() {
        eprintln!("# {line}");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads()?)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn need(flag: &Option<PathBuf>, cfg: &RunConfig, key: &str, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.path(key))
        .ok_or_else(|| Error::Config(format!("--{name} is required (or set `{key}`)")))
}

fn backend(cfg: &RunConfig) -> Result<ToyLm> {
    Ok(ToyLm::from_seed(cfg.backend_seed()?))
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<()> {
    match cmd {
        Command::Synth { task, out } => synth(*task, out, cfg),
        Command::Preprocess {
            traces,
            vocab,
            out,
            skip_bad,
        } => {
            let n = preprocess(
                &need(traces, cfg, "paths.traces", "traces")?,
                &need(vocab, cfg, "paths.vocab", "vocab")?,
                &need(out, cfg, "paths.pairs", "out")?,
                *skip_bad,
                cfg,
            )?;
            eprintln!("wrote {} pairs ({} skipped)", n.0, n.1);
            Ok(())
        }
        Command::Harvest { pairs, vocab, out } => {
            let lm = backend(cfg)?;
            let vocab = ToolkenVocab::load(&need(vocab, cfg, "paths.vocab", "vocab")?)?;
            let seqs: Vec<ParallelSequence> = read_jsonl(&need(pairs, cfg, "paths.pairs", "pairs")?)?;
            let opts = HarvestOptions {
                context_prefix: cfg.context_prefix(),
                ..Default::default()
            };
            let stats = harvest(&lm, &vocab, &seqs, &need(out, cfg, "paths.dump", "out")?, &opts)?;
            println!("{}", serde_json::to_string(&stats)?);
            Ok(())
        }
        Command::Train {
            dump,
            vocab,
            out,
            report,
        } => {
            let lm = backend(cfg)?;
            let vocab = ToolkenVocab::load(&need(vocab, cfg, "paths.vocab", "vocab")?)?;
            let (header, records) = read_dump(&need(dump, cfg, "paths.dump", "dump")?)?;
            let fp = lm.fingerprint();
            if header.fingerprint != fp {
                if cfg.strict_fingerprint()? {
                    return Err(Error::FingerprintMismatch {
                        expected: header.fingerprint.hex(),
                        found: fp.hex(),
                    });
                }
                log::warn!(
                    "dump was harvested from backend {}, training against {}",
                    header.fingerprint.hex(),
                    fp.hex()
                );
            }
            let (emb, rep) = fit(&header, &records, &vocab, &lm, &cfg.train_config()?)?;
            emb.save(&need(out, cfg, "paths.checkpoint", "out")?)?;
            let json = rep.to_json()?;
            match report {
                Some(p) => std::fs::write(p, &json).map_err(|e| Error::io(p, e))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Generate {
            prompts,
            vocab,
            checkpoint,
            kb,
            out,
        } => generate(
            &need(prompts, cfg, "paths.prompts", "prompts")?,
            &need(vocab, cfg, "paths.vocab", "vocab")?,
            &need(checkpoint, cfg, "paths.checkpoint", "checkpoint")?,
            kb.clone().or_else(|| cfg.path("paths.kb")).as_deref(),
            &need(out, cfg, "paths.transcripts", "out")?,
            cfg,
        ),
        Command::Eval {
            transcripts,
            gold,
            vocab,
            kb,
            out,
        } => {
            let vocab = vocab
                .clone()
                .or_else(|| cfg.path("paths.vocab"))
                .map(|p| ToolkenVocab::load(&p))
                .transpose()?;
            let store = kb
                .clone()
                .or_else(|| cfg.path("paths.kb"))
                .map(|d| kbworld::KbWorld::load(&d))
                .transpose()?;
            let report = evaluate(
                &need(transcripts, cfg, "paths.transcripts", "transcripts")?,
                &need(gold, cfg, "paths.gold", "gold")?,
                vocab.as_ref(),
                store.as_ref().map(|w| &w.store),
                cfg,
            )?;
            println!("{}", report.summary_table());
            if let Some(p) = out {
                std::fs::write(p, report.to_json()?).map_err(|e| Error::io(p, e))?;
            }
            Ok(())
        }
        Command::Inspect { checkpoint } => {
            let emb = ToolkenEmbeddings::load(&need(checkpoint, cfg, "paths.checkpoint", "checkpoint")?)?;
            print!("{}", inspect(&emb));
            Ok(())
        }
    }
}

fn write_conf(path: &Path, lines: &[(&str, String)]) -> Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in lines {
        cfg.set(k, &v.replace('\\', "\\\\").replace('\n', "\\n"))?;
    }
    std::fs::write(path, cfg.render()).map_err(|e| Error::io(path, e))
}

fn path_str(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Writes a dataset for `task` into `out` together with `run.conf`, which
/// points every command at the files and carries the task's settings.
pub fn synth(task: Task, out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let lm = backend(cfg)?;
    let base = LmBackend::vocab_size(&lm) as u32;
    let seed = cfg.seed()?;
    let common = |extra: Vec<(&'static str, String)>| -> Vec<(&'static str, String)> {
        let mut v = vec![
            ("seed", seed.to_string()),
            ("backend.seed", cfg.get("backend.seed").to_string()),
            ("paths.vocab", path_str(out, "vocab.json")),
            ("paths.pairs", path_str(out, "pairs.jsonl")),
            ("paths.dump", path_str(out, "hidden.dump")),
            ("paths.checkpoint", path_str(out, "toolkens.ckpt")),
            ("paths.transcripts", path_str(out, "transcripts.jsonl")),
        ];
        v.extend(extra);
        v
    };
    match task {
        Task::Funcqa => {
            let templates = funcqa::builtin_templates();
            let ops = cfg.synth_ops()?;
            let (n_train, n_held) = cfg.synth_counts()?;
            let vocab = funcqa::vocab(base, &ops, &templates, seed)?;
            let split = funcqa::split(&ops, &templates, n_train, n_held, seed)?;
            vocab.save(&out.join("vocab.json"))?;
            write_jsonl(&out.join("train.jsonl"), &split.train)?;
            let prompts: Vec<PromptLine> = split
                .held_out
                .iter()
                .map(|i| PromptLine {
                    id: i.id.clone(),
                    prompt: format!("{}{}", funcqa::REASONING_PREFIX, i.prompt),
                    enabled_tools: None,
                })
                .collect();
            let gold: Vec<GoldLine> = split
                .held_out
                .iter()
                .map(|i| GoldLine {
                    id: i.id.clone(),
                    gold: i.gold.clone(),
                    call: Some(i.call.clone()),
                    scenario: None,
                })
                .collect();
            write_jsonl(&out.join("prompts.jsonl"), &prompts)?;
            write_jsonl(&out.join("gold.jsonl"), &gold)?;
            let t = funcqa::train_config();
            write_conf(
                &out.join("run.conf"),
                &common(vec![
                    ("paths.traces", path_str(out, "train.jsonl")),
                    ("paths.prompts", path_str(out, "prompts.jsonl")),
                    ("paths.gold", path_str(out, "gold.jsonl")),
                    ("harvest.context_prefix", funcqa::REASONING_PREFIX.to_string()),
                    ("train.learning_rate", t.learning_rate.to_string()),
                    ("train.epochs", t.epochs.to_string()),
                    ("train.patience", t.patience.to_string()),
                ]),
            )?;
            eprintln!(
                "{} training traces, {} held-out questions",
                split.train.len(),
                split.held_out.len()
            );
        }
        Task::Kb => {
            let kb_dir = out.join("kb");
            std::fs::create_dir_all(&kb_dir).map_err(|e| Error::io(&kb_dir, e))?;
            let world = kbworld::KbWorld::generate(
                kbworld::relation_names().len(),
                kbworld::TRAIN_FACTS,
                kbworld::TEST_FACTS,
                seed,
            )?;
            world.write(&kb_dir)?;
            let vocab = world.vocab(base, kbworld::DEMOS)?;
            vocab.save(&out.join("vocab.json"))?;
            write_jsonl(&out.join("pairs.jsonl"), &world.training_sequences(&lm, &vocab)?)?;
            let subsets = crate::data::sample_kb_subsets(
                &world.test_questions()?,
                &crate::data::kbqa::SUBSET_RELATION_COUNTS,
                crate::data::kbqa::SUBSET_SIZE,
                seed,
                true,
            )?;
            for s in &subsets {
                let n = s.relations.len();
                let enabled = kbworld::decode_config(&s.relations).enabled_tools;
                let mut prompts = Vec::new();
                let mut gold = Vec::new();
                for (i, q) in s.questions.iter().enumerate() {
                    let id = format!("kb{n}-{i}");
                    prompts.push(PromptLine {
                        id: id.clone(),
                        prompt: q.prompt(),
                        enabled_tools: enabled.clone(),
                    });
                    gold.push(GoldLine {
                        id,
                        gold: Gold::Text(q.object.clone()),
                        call: Some(GoldCall {
                            tool: q.relation.clone(),
                            args: Some(vec![crate::call::ArgValue::Entity(q.subject.clone())]),
                        }),
                        scenario: None,
                    });
                }
                write_jsonl(&out.join(format!("prompts-{n}.jsonl")), &prompts)?;
                write_jsonl(&out.join(format!("gold-{n}.jsonl")), &gold)?;
            }
            let t = kbworld::train_config();
            let d = kbworld::decode_config(&[]);
            write_conf(
                &out.join("run.conf"),
                &common(vec![
                    ("paths.kb", kb_dir.display().to_string()),
                    ("paths.prompts", path_str(out, "prompts-30.jsonl")),
                    ("paths.gold", path_str(out, "gold-30.jsonl")),
                    ("train.learning_rate", t.learning_rate.to_string()),
                    ("train.epochs", t.epochs.to_string()),
                    ("train.batch_size", t.batch_size.to_string()),
                    ("train.patience", t.patience.to_string()),
                    ("train.class_balance", t.class_balance.to_string()),
                    ("train.word_fraction", t.word_fraction.to_string()),
                    ("decode.max_tool_calls", d.max_tool_calls.to_string()),
                    ("decode.toolken_bias", d.toolken_bias.to_string()),
                    ("decode.on_tool_error", "abort".into()),
                ]),
            )?;
            eprintln!(
                "{} relations, {} training facts, {} test facts",
                world.store.relation_count(),
                world.train.len(),
                world.test.len()
            );
        }
        Task::Home => {
            let rules = RuleTable::builtin();
            let vocab = home::vocab(base, &rules)?;
            vocab.save(&out.join("vocab.json"))?;
            let train = home::scripts(&home::GoalKind::ALL, home::TRAIN_SCRIPTS, seed);
            let traces = train
                .iter()
                .map(|s| {
                    let prompt = crate::data::plan::plan_prompt(&s.scenario);
                    crate::data::plan_trace(&prompt, &PlanSequence::from_steps(&prompt, &s.steps, &vocab)?, &vocab)
                })
                .collect::<Result<Vec<AnnotatedTrace>>>()?;
            write_jsonl(&out.join("train.jsonl"), &traces)?;
            let eval = home::scripts(&home::GoalKind::ALL, home::EVAL_PLANS, seed.wrapping_add(1));
            let prompts: Vec<PromptLine> = eval
                .iter()
                .map(|s| PromptLine {
                    id: s.scenario.id.clone(),
                    prompt: crate::data::plan::plan_prompt(&s.scenario),
                    enabled_tools: Some(home::enabled_tools(&s.scenario, &rules)),
                })
                .collect();
            let gold: Vec<GoldLine> = eval
                .iter()
                .map(|s| GoldLine {
                    id: s.scenario.id.clone(),
                    gold: Gold::Plan {
                        goal_assertions: s.scenario.goal_assertions.clone(),
                    },
                    call: None,
                    scenario: Some(s.scenario.clone()),
                })
                .collect();
            write_jsonl(&out.join("prompts.jsonl"), &prompts)?;
            write_jsonl(&out.join("gold.jsonl"), &gold)?;
            let t = home::train_config();
            write_conf(
                &out.join("run.conf"),
                &common(vec![
                    ("paths.traces", path_str(out, "train.jsonl")),
                    ("paths.prompts", path_str(out, "prompts.jsonl")),
                    ("paths.gold", path_str(out, "gold.jsonl")),
                    ("train.learning_rate", t.learning_rate.to_string()),
                    ("train.epochs", t.epochs.to_string()),
                    ("train.patience", t.patience.to_string()),
                    ("train.class_balance", t.class_balance.to_string()),
                    ("decode.mode", "plan".into()),
                ]),
            )?;
            eprintln!("{} training plans, {} evaluation scenarios", traces.len(), eval.len());
        }
    }
    Ok(())
}

/// Converts traces to pairs, streaming. Returns (written, skipped).
pub fn preprocess(traces: &Path, vocab: &Path, out: &Path, skip_bad: bool, cfg: &RunConfig) -> Result<(usize, usize)> {
    let lm = backend(cfg)?;
    let vocab = ToolkenVocab::load(vocab)?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    let (mut written, mut skipped) = (0, 0);
    for (line, parsed) in jsonl_lines::<AnnotatedTrace>(traces)? {
        let converted = parsed.and_then(|t| build_parallel_aligned(&t, &lm, &vocab).map(|(seq, _)| seq));
        match converted {
            Ok(seq) => {
                serde_json::to_writer(&mut w, &seq)?;
                w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
                written += 1;
            }
            Err(e) if skip_bad => {
                log::warn!("{}:{line}: skipped: {e}", traces.display());
                eprintln!("warning: {}:{line}: {e}", traces.display());
                skipped += 1;
            }
            Err(e) => {
                return Err(match e {
                    Error::Data { .. } => e,
                    other => Error::Data {
                        path: traces.to_path_buf(),
                        line,
                        reason: other.to_string(),
                    },
                })
            }
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    if skipped > 0 {
        eprintln!("warning: {skipped} line(s) skipped");
    }
    Ok((written, skipped))
}

/// Executors for every tool in `vocab`: arithmetic operators by name, and the
/// relations of the knowledge base in `kb` when given.
pub fn toolbox_for(vocab: &ToolkenVocab, kb: Option<&Path>) -> Result<Toolbox> {
    let ops: Vec<ArithOp> = vocab.names().filter_map(|n| n.parse().ok()).collect();
    let mut tb = Toolbox::arithmetic(&ops);
    if let Some(dir) = kb {
        let store = Arc::new(kbworld::KbWorld::load(dir)?.store);
        for r in store.relations() {
            if vocab.lookup(r).is_some() {
                tb.bind(r, store.clone());
            }
        }
    }
    Ok(tb)
}

pub fn generate(
    prompts: &Path,
    vocab: &Path,
    checkpoint: &Path,
    kb: Option<&Path>,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let lm = backend(cfg)?;
    let vocab = ToolkenVocab::load(vocab)?;
    let emb = ToolkenEmbeddings::load(checkpoint)?;
    emb.check_fingerprint(&lm.fingerprint(), cfg.strict_fingerprint()?)?;
    let tools = toolbox_for(&vocab, kb)?;
    let base = cfg.decode_config()?;
    let mode = cfg.decode_mode()?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    for (_, line) in jsonl_lines::<PromptLine>(prompts)? {
        let line = line?;
        let mut config = base.clone();
        if line.enabled_tools.is_some() {
            config.enabled_tools = line.enabled_tools.clone();
        }
        let decoder = Decoder::new(&lm, &vocab, &emb, &tools, config)?;
        let item = match mode {
            DecodeMode::Reason => Output::Transcript {
                id: line.id,
                transcript: decoder.generate(&line.prompt)?,
            },
            DecodeMode::Plan => Output::Plan {
                id: line.id,
                plan: decoder.generate_plan(&line.prompt)?,
            },
        };
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

pub fn evaluate(
    transcripts: &Path,
    gold: &Path,
    vocab: Option<&ToolkenVocab>,
    kb: Option<&TripleStore>,
    cfg: &RunConfig,
) -> Result<Report> {
    let mode = cfg.numeric_mode()?;
    let golds: Vec<GoldLine> = read_jsonl(gold)?;
    let by_id: std::collections::BTreeMap<&str, &GoldLine> = golds.iter().map(|g| (g.id.as_str(), g)).collect();
    let rules = Arc::new(RuleTable::builtin());
    let mut records: Vec<EvalRecord> = Vec::new();
    for (line, out) in jsonl_lines::<Output>(transcripts)? {
        let out = out?;
        let g = by_id.get(out.id()).ok_or_else(|| Error::Data {
            path: transcripts.to_path_buf(),
            line,
            reason: format!("no gold line for id `{}`", out.id()),
        })?;
        let rec = match out {
            Output::Transcript { id, transcript } => {
                let mut rec = score_transcript(&id, &transcript, &g.gold, g.call.as_ref(), mode);
                if let Some(store) = kb {
                    let ok = transcript.calls().find(|c| c.is_ok());
                    if let (Some(call), Some(answer)) = (ok, extract_text(&transcript.final_text)) {
                        rec.metrics
                            .insert("honest".into(), store.is_stored_object(&call.tool, &answer));
                    }
                }
                rec
            }
            Output::Plan { id, plan } => {
                let vocab = vocab.ok_or_else(|| Error::Config("scoring plans needs --vocab".into()))?;
                let scenario = g.scenario.clone().ok_or_else(|| Error::Data {
                    path: gold.to_path_buf(),
                    line: 0,
                    reason: format!("gold for `{id}` has no scenario"),
                })?;
                let env = MiniHome::new(rules.clone(), Arc::new(scenario.clone()));
                let outcome = env.run_plan(&plan.steps(vocab)?);
                plan_record(&id, &plan, &scenario.goal_assertions, outcome)
            }
        };
        records.push(rec);
    }
    let name = transcripts
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    Ok(Report::new(&name, records))
}

/// Dimension, rows in registration order with L2 norms, and each row's
/// nearest other row by cosine similarity.
pub fn inspect(emb: &ToolkenEmbeddings) -> String {
    let mut s = String::new();
    let rows: Vec<&[f32]> = (0..emb.len()).map(|j| emb.row(j)).collect();
    let norm = |r: &[f32]| r.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let norms: Vec<f64> = rows.iter().map(|r| norm(r)).collect();
    s.push_str(&format!(
        "dim {}\ntools {}\nfingerprint {}\n",
        emb.dim,
        emb.len(),
        emb.fingerprint.hex()
    ));
    s.push_str(&format!(
        "{:>4}  {:<24} {:>10}  nearest (cosine)\n",
        "row", "tool", "norm"
    ));
    for (j, name) in emb.names.iter().enumerate() {
        let nearest = (0..rows.len())
            .filter(|&k| k != j && norms[k] > 0.0 && norms[j] > 0.0)
            .map(|k| {
                let dot: f64 = rows[j].iter().zip(rows[k]).map(|(&a, &b)| a as f64 * b as f64).sum();
                (k, dot / (norms[j] * norms[k]))
            })
            .fold(
                None,
                |best: Option<(usize, f64)>, c| if best.is_none_or(|b| c.1 > b.1) { Some(c) } else { best },
            );
        let near = match nearest {
            Some((k, c)) => format!("{} ({c:.4})", emb.names[k]),
            None => "-".into(),
        };
        s.push_str(&format!("{j:>4}  {name:<24} {:>10.4}  {near}\n", norms[j]));
    }
    s
}
