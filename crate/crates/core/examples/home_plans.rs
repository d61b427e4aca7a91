//! Embodied planning: train action and object toolkens on household scripts,
//! then decode grounded plans and execute them in the mini home.

use std::time::Instant;

use toolken::backend::ToyLm;
use toolken::tasks::home;
use toolken::tools::home::RuleTable;

fn main() -> toolken::Result<()> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir()?;
    let lm = ToyLm::from_seed(7);
    let run = home::desk_run(&lm, dir.path(), 1)?;
    println!("toolken positions: {}", run.trained.report.toolken_positions);
    println!("{}", run.plans.summary_table());
    let s = &run.scores;
    println!(
        "n {}  grounding {:.3}  executable {:.3}  success {:.3}",
        s.n, s.grounding, s.executable, s.success
    );
    println!("sittable after [SIT]: {:.3}", run.sittable_rate);
    let vocab = home::vocab(lm.tokenizer().vocab_size() as u32, &RuleTable::builtin())?;
    for p in run.sit_plans.iter().take(3) {
        let steps: Vec<String> = p
            .steps(&vocab)?
            .iter()
            .map(|st| format!("[{}] <{}>", st.action, st.object))
            .collect();
        println!("{}", steps.join(" "));
    }
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
