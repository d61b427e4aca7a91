//! Tool executors: arithmetic, knowledge-base relations and the mini-home.

pub mod arith;
pub mod home;
pub mod kb;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::call::{ArgValue, ToolResult};
use crate::vocab::ToolSpec;

pub use arith::ArithOp;
pub use home::{MiniHome, PlanOutcome, PlanStep, RuleTable, Scenario, Violation};
pub use kb::{Fact, KbError, TripleStore};

/// Executes a parsed call. Errors are plain messages; the decoder records
/// them on the call rather than failing.
pub trait Executor: Send + Sync {
    fn execute(&self, tool: &ToolSpec, args: &[ArgValue]) -> Result<ToolResult, String>;
}

/// Executes the thirteen arithmetic operators by tool name.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArithTools;

impl Executor for ArithTools {
    fn execute(&self, tool: &ToolSpec, args: &[ArgValue]) -> Result<ToolResult, String> {
        let op: ArithOp = tool.name.parse()?;
        let nums: Vec<f64> = args
            .iter()
            .map(|a| a.as_number().ok_or_else(|| format!("{op} takes numeric arguments")))
            .collect::<Result<_, _>>()?;
        op.apply(&nums)
    }
}

impl Executor for TripleStore {
    fn execute(&self, tool: &ToolSpec, args: &[ArgValue]) -> Result<ToolResult, String> {
        let subject = match args {
            [ArgValue::Entity(s)] => s.clone(),
            [ArgValue::Number(x)] => crate::call::format_number(*x),
            _ => return Err(format!("{} takes one subject", tool.name)),
        };
        self.lookup(&tool.name, &subject)
            .map(ToolResult::text)
            .map_err(|e| e.to_string())
    }
}

/// Routes each tool name to its executor.
#[derive(Clone, Default)]
pub struct Toolbox {
    routes: BTreeMap<String, Arc<dyn Executor>>,
}

impl Toolbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, tool: &str, exec: Arc<dyn Executor>) {
        self.routes.insert(tool.to_string(), exec);
    }

    pub fn arithmetic(ops: &[ArithOp]) -> Self {
        let mut tb = Toolbox::new();
        let exec: Arc<dyn Executor> = Arc::new(ArithTools);
        for op in ops {
            tb.bind(op.name(), exec.clone());
        }
        tb
    }

    pub fn knowledge_base(store: Arc<TripleStore>) -> Self {
        let mut tb = Toolbox::new();
        let exec: Arc<dyn Executor> = store.clone();
        for r in store.relations() {
            tb.bind(r, exec.clone());
        }
        tb
    }

    pub fn is_bound(&self, tool: &str) -> bool {
        self.routes.contains_key(tool)
    }
}

impl Executor for Toolbox {
    fn execute(&self, tool: &ToolSpec, args: &[ArgValue]) -> Result<ToolResult, String> {
        self.routes
            .get(&tool.name)
            .ok_or_else(|| format!("no executor bound for `{}`", tool.name))?
            .execute(tool, args)
    }
}
