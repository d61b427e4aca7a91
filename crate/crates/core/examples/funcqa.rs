//! One-hop arithmetic: train thirteen operator toolkens and answer held-out
//! word problems through executed tool calls.

use std::time::Instant;

use toolken::backend::ToyLm;
use toolken::eval::Prediction;
use toolken::tasks::funcqa;

fn main() -> toolken::Result<()> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir()?;
    let lm = ToyLm::from_seed(7);
    let run = funcqa::desk_run(&lm, dir.path(), 1)?;
    println!("toolken positions: {}", run.trained.report.toolken_positions);
    for rec in &run.report.per_record {
        if let Prediction::Transcript(t) = &rec.prediction {
            let answer = t.final_text.lines().last().unwrap_or("");
            println!(
                "{:<14} {:<5} {answer}",
                rec.id,
                if rec.metrics["answer_correct"] { "ok" } else { "miss" }
            );
        }
    }
    println!("{}", run.report.summary_table());
    println!("injection failures: {}", run.injection_failures.len());
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
