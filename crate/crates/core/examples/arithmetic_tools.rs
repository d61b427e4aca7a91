//! Tool execution: parse calls out of annotated text and run them through the
//! arithmetic executors.

use toolken::call::{find_calls, parse_args};
use toolken::tools::{ArithOp, Executor, Toolbox};

fn main() -> toolken::Result<()> {
    let text = "A crate holds [choose](30, 4)=27405 mixes, and [sqrt](2)=1.41 is close enough. \
                Then [gcd](84, 36)=12 and [divide](1, 0)=oops.";
    let tools = Toolbox::arithmetic(&ArithOp::ALL);
    for m in find_calls(text) {
        let op: ArithOp = m.tool.parse().map_err(toolken::Error::Config)?;
        let spec = op.spec();
        let args = parse_args(&spec, &m.raw_args)?;
        match tools.execute(&spec, &args) {
            Ok(r) => println!("{:<8} ({}) = {:<10} annotated {}", m.tool, m.raw_args, r.text, m.result),
            Err(e) => println!("{:<8} ({}) failed: {e}", m.tool, m.raw_args),
        }
    }
    println!();
    for op in ArithOp::ALL {
        println!("{:<10} arity {}  {}", op.name(), op.arity(), op.description());
    }
    Ok(())
}
