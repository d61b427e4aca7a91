//! Knowledge-base question answering: one toolken per relation over a
//! synthetic world of 234 relations, scored on four relation subsets.

use std::time::Instant;

use toolken::backend::ToyLm;
use toolken::tasks::kbworld::{self, KbWorld};

fn main() -> toolken::Result<()> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir()?;
    let world = KbWorld::generate(234, kbworld::TRAIN_FACTS, kbworld::TEST_FACTS, 3)?;
    world.write(dir.path())?;
    println!(
        "wrote {} training and {} test facts to {}",
        world.train.len(),
        world.test.len(),
        dir.path().display()
    );

    let lm = ToyLm::from_seed(7);
    let run = kbworld::desk_run(&lm, dir.path(), 11)?;
    let last = run.trained.report.epochs.last().expect("at least one epoch");
    println!(
        "trained {} toolkens, validation accuracy {:.3}",
        run.trained.embeddings.len(),
        last.validation_accuracy
    );
    for (n, report) in &run.subsets {
        println!(
            "{n:>3} relations: relation selection {:.3}, answer accuracy {:.3}, honest {:.3}",
            report.metric("tool_correct").unwrap_or(0.0),
            report.metric("answer_correct").unwrap_or(0.0),
            report.metric("honest").unwrap_or(0.0),
        );
    }
    if let Some(rec) = run.subsets[0].1.per_record.first() {
        if let toolken::eval::Prediction::Transcript(t) = &rec.prediction {
            println!("example transcript: {}", t.to_json()?);
        }
    }
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
