//! Plain-text run configuration.
//!
//! One `key = value` per line; `#` starts a comment; a `[section]` line
//! prefixes the keys below it with `section.`. Environment variables named
//! `TK_<KEY>` override file values, where `<KEY>` is the key upper-cased with
//! `.` written as `__` (so `train.epochs` is `TK_TRAIN__EPOCHS`). Unknown keys
//! from either source are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decode::{DecodeConfig, OnToolError, Strategy};
use crate::error::{Error, Result};
use crate::eval::NumericMode;
use crate::train::{Init, Optimizer, TrainConfig};

pub const ENV_PREFIX: &str = "TK_";

/// Every accepted key with its default value.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "1"),
    ("backend.seed", "7"),
    ("paths.vocab", ""),
    ("paths.traces", ""),
    ("paths.pairs", ""),
    ("paths.dump", ""),
    ("paths.checkpoint", ""),
    ("paths.prompts", ""),
    ("paths.transcripts", ""),
    ("paths.gold", ""),
    ("paths.kb", ""),
    ("paths.templates", ""),
    ("harvest.context_prefix", ""),
    ("train.learning_rate", "0.01"),
    ("train.optimizer", "adam"),
    ("train.batch_size", "0"),
    ("train.epochs", "50"),
    ("train.init", "gaussian"),
    ("train.init_sigma", ""),
    ("train.patience", "5"),
    ("train.class_balance", "false"),
    ("train.word_fraction", "0.1"),
    ("train.validation_fraction", "0.2"),
    ("train.strict_fingerprint", "true"),
    ("decode.mode", "reason"),
    ("decode.strategy", "greedy"),
    ("decode.temperature", "1"),
    ("decode.max_new_tokens", "64"),
    ("decode.max_tool_calls", "4"),
    ("decode.toolken_bias", "0"),
    ("decode.tool_mode_demos", "4"),
    ("decode.max_arg_tokens", "32"),
    ("decode.on_tool_error", "resample-excluding"),
    ("decode.stop", "\\n\\n"),
    ("decode.enabled_tools", ""),
    ("eval.numeric_mode", "exact"),
    ("synth.ops", "all"),
    ("synth.train_per_op", "47"),
    ("synth.held_out_per_op", "3"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Reason,
    Plan,
}

/// Resolved key/value settings with typed accessors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), unescape(v))).collect(),
        }
    }
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t")
}

impl RunConfig {
    /// Parses configuration text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: String| Error::Config(format!("line {}: {why}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            cfg.set(&key, v.trim()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets a known key; `value` may use `\n`, `\t` and `\\` escapes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = unescape(value);
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    /// Applies `TK_*` overrides from `vars`.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, value) in vars {
            let key = env_key(&name);
            self.set(&key, &value)
                .map_err(|_| Error::Config(format!("{name} does not name a configuration key")))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("known configuration key")
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse {v:?}")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(Error::Config(format!("`{key}`: expected true or false, got {v:?}"))),
        }
    }

    /// A path setting, or `None` when empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn threads(&self) -> Result<usize> {
        let n: usize = self.parsed("threads")?;
        if n == 0 {
            return Err(Error::Config("`threads` must be at least 1".into()));
        }
        Ok(n)
    }

    pub fn backend_seed(&self) -> Result<u64> {
        self.parsed("backend.seed")
    }

    pub fn strict_fingerprint(&self) -> Result<bool> {
        self.flag("train.strict_fingerprint")
    }

    pub fn context_prefix(&self) -> Option<String> {
        let v = self.get("harvest.context_prefix");
        (!v.is_empty()).then(|| v.to_string())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let optimizer = match self.get("train.optimizer") {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            v => {
                return Err(Error::Config(format!(
                    "`train.optimizer`: expected adam or sgd, got {v:?}"
                )))
            }
        };
        let init = match self.get("train.init") {
            "gaussian" => {
                let s = self.get("train.init_sigma");
                let sigma = if s.is_empty() {
                    None
                } else {
                    Some(self.parsed("train.init_sigma")?)
                };
                Init::Gaussian { sigma }
            }
            "hidden-mean" => Init::HiddenMean,
            v => {
                return Err(Error::Config(format!(
                    "`train.init`: expected gaussian or hidden-mean, got {v:?}"
                )))
            }
        };
        let cfg = TrainConfig {
            learning_rate: self.parsed("train.learning_rate")?,
            optimizer,
            batch_size: self.parsed("train.batch_size")?,
            epochs: self.parsed("train.epochs")?,
            seed: self.seed()?,
            init,
            patience: self.parsed("train.patience")?,
            class_balance: self.flag("train.class_balance")?,
            word_fraction: self.parsed("train.word_fraction")?,
            validation_fraction: self.parsed("train.validation_fraction")?,
            threads: self.threads()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn decode_mode(&self) -> Result<DecodeMode> {
        match self.get("decode.mode") {
            "reason" => Ok(DecodeMode::Reason),
            "plan" => Ok(DecodeMode::Plan),
            v => Err(Error::Config(format!(
                "`decode.mode`: expected reason or plan, got {v:?}"
            ))),
        }
    }

    pub fn decode_config(&self) -> Result<DecodeConfig> {
        let strategy = match self.get("decode.strategy") {
            "greedy" => Strategy::Greedy,
            "sample" => Strategy::Sample {
                temperature: self.parsed("decode.temperature")?,
                seed: self.seed()?,
            },
            v => {
                return Err(Error::Config(format!(
                    "`decode.strategy`: expected greedy or sample, got {v:?}"
                )))
            }
        };
        let on_tool_error = match self.get("decode.on_tool_error") {
            "resample-excluding" => OnToolError::ResampleExcluding,
            "abort" => OnToolError::Abort,
            v => {
                return Err(Error::Config(format!(
                    "`decode.on_tool_error`: expected resample-excluding or abort, got {v:?}"
                )))
            }
        };
        let list = |key: &str| -> Vec<String> {
            self.get(key)
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        let enabled = list("decode.enabled_tools");
        let stop = self.get("decode.stop");
        let cfg = DecodeConfig {
            strategy,
            max_new_tokens: self.parsed("decode.max_new_tokens")?,
            max_tool_calls: self.parsed("decode.max_tool_calls")?,
            toolken_bias: self.parsed("decode.toolken_bias")?,
            tool_mode_demos: self.parsed("decode.tool_mode_demos")?,
            max_arg_tokens: self.parsed("decode.max_arg_tokens")?,
            on_tool_error,
            stop: if stop.is_empty() {
                Vec::new()
            } else {
                vec![stop.to_string()]
            },
            enabled_tools: (!enabled.is_empty()).then_some(enabled),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn numeric_mode(&self) -> Result<NumericMode> {
        match self.get("eval.numeric_mode") {
            "exact" => Ok(NumericMode::Exact),
            "tolerance" => Ok(NumericMode::Tolerance),
            v => Err(Error::Config(format!(
                "`eval.numeric_mode`: expected exact or tolerance, got {v:?}"
            ))),
        }
    }

    pub fn synth_counts(&self) -> Result<(usize, usize)> {
        Ok((
            self.parsed("synth.train_per_op")?,
            self.parsed("synth.held_out_per_op")?,
        ))
    }

    pub fn synth_ops(&self) -> Result<Vec<crate::tools::ArithOp>> {
        let v = self.get("synth.ops");
        if v == "all" {
            return Ok(crate::tools::ArithOp::ALL.to_vec());
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e: String| Error::Config(format!("`synth.ops`: {e}")))
            })
            .collect()
    }

    /// `key = value` lines for every key, sorted, with escapes applied.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {}", escape(v));
        }
        out
    }
}

/// `TK_TRAIN__EPOCHS` → `train.epochs`.
pub fn env_key(name: &str) -> String {
    name.trim_start_matches(ENV_PREFIX)
        .to_ascii_lowercase()
        .replace("__", ".")
}
