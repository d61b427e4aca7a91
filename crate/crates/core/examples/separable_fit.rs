//! Toolken head training in isolation: fit three toolkens on well separated
//! hidden states, save the checkpoint, reload it and inspect it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use toolken::backend::{DenseHead, Fingerprint};
use toolken::dump::{DumpHeader, DumpRecord};
use toolken::train::{fit, ToolkenEmbeddings, TrainConfig};
use toolken::vocab::{ToolSpec, ToolkenVocab};

fn main() -> toolken::Result<()> {
    let d = 32;
    let base = 4;
    let names = ["alpha", "beta", "gamma"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.3).expect("valid sigma");
    let centers: Vec<Vec<f32>> = (0..3)
        .map(|c| (0..d).map(|i| if i % 3 == c { 1.0 } else { -0.2 }).collect())
        .collect();
    let head = DenseHead::new(
        base,
        d,
        (0..base * d).map(|_| noise.sample(&mut rng) as f32 * 0.1).collect(),
    )?;
    let mut vocab = ToolkenVocab::new(base as u32);
    for n in names {
        vocab.register(ToolSpec::object(n))?;
    }
    let records: Vec<DumpRecord> = (0..300)
        .map(|i| DumpRecord {
            targets: vec![base as u32 + (i % 3) as u32],
            hidden: centers[i % 3]
                .iter()
                .map(|&x| x + noise.sample(&mut rng) as f32)
                .collect(),
        })
        .collect();
    let header = DumpHeader {
        dim: d,
        base_vocab_size: base as u32,
        fingerprint: Fingerprint([1; 32]),
        tools: names.iter().map(|s| s.to_string()).collect(),
    };
    let config = TrainConfig {
        batch_size: 32,
        seed: 4,
        ..Default::default()
    };
    let (emb, report) = fit(&header, &records, &vocab, &head, &config)?;
    for e in &report.epochs {
        println!(
            "epoch {:>2}  train {:.4}  validation {:.4}  accuracy {:.3}",
            e.epoch, e.train_loss, e.validation_loss, e.validation_accuracy
        );
    }
    println!("selected epoch {}", report.selected_epoch);
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("toolkens.ckpt");
    emb.save(&path)?;
    let back = ToolkenEmbeddings::load(&path)?;
    assert_eq!(back, emb);
    print!("{}", toolken::cli::inspect(&back));
    Ok(())
}
