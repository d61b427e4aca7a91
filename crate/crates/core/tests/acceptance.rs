//! Acceptance suite. Runs every criterion in turn, prints one `PASS` or
//! `FAIL` line for each with its measured values and runtime, and exits
//! non-zero when any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use toolken::backend::{DenseHead, Fingerprint, LmBackend, ToyLm, WordHead};
use toolken::data::{ParallelSequence, NA_TARGET};
use toolken::dump::{harvest, read_dump, DumpHeader, DumpRecord, HarvestOptions};
use toolken::eval::{extract_text, round_cents, score_numeric, score_plans, NumericMode, Prediction};
use toolken::tasks::{funcqa, home, kbworld, pair_traces};
use toolken::tools::home::{MiniHome, PlanOutcome, PlanStep, RuleTable};
use toolken::tools::ArithOp;
use toolken::train::{
    fit, fused_logits, loss, loss_and_grad, positions_from_records, Matrix, Position, ToolkenEmbeddings, TrainConfig,
};
use toolken::vocab::{ToolSpec, ToolkenVocab};

fn report(n: usize, name: &str, ok: bool, detail: &str, elapsed: Duration, limit: Duration) -> bool {
    let pass = ok && elapsed < limit;
    println!(
        "{} criterion {n:>2} {name}: {detail}; {:.2}s (limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn random_positions(rng: &mut ChaCha8Rng, n: usize, d: usize, v: usize, t: usize, na_share: f64) -> Vec<Position> {
    (0..n)
        .map(|_| {
            let h: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let words: Vec<f32> = (0..v).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let target = if rng.random_bool(na_share) {
                NA_TARGET
            } else {
                rng.random_range(0..(v + t) as u32)
            };
            Position::new(&h, &words, target)
        })
        .collect()
}

fn c01_gradient_matches_finite_differences() -> bool {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let step = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=16);
        let t = rng.random_range(1..=5);
        let v = rng.random_range(1..=50);
        let n = rng.random_range(1..=8);
        let mut ps = random_positions(&mut rng, n, d, v, t, 0.2);
        // at least one supervised position per instance
        ps[0].target = rng.random_range(0..(v + t) as u32);
        let h0 = ps[0].hidden.clone();
        ps[0] = Position::new(
            &h0,
            &(0..v).map(|_| rng.random_range(-2.0f32..2.0)).collect::<Vec<_>>(),
            ps[0].target,
        );
        let w = Matrix {
            rows: t,
            cols: d,
            data: (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (_, grad) = loss_and_grad(&ps, &w, v as u32).unwrap();
        for i in 0..w.data.len() {
            let (mut a, mut b) = (w.clone(), w.clone());
            a.data[i] += step;
            b.data[i] -= step;
            let fd = (loss(&ps, &a, v as u32).unwrap() - loss(&ps, &b, v as u32).unwrap()) / (2.0 * step);
            let denom = fd.abs().max(grad.data[i].abs()).max(1e-6);
            worst = worst.max((fd - grad.data[i]).abs() / denom);
        }
    }
    let ok = report(
        1,
        "gradient vs central differences",
        worst < 1e-4,
        &format!("max relative error {worst:.2e} over 50 instances"),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    ok
}

fn c02_sentinel_positions_are_masked() -> bool {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, v, t) = (12, 40, 4);
    let mut ok = true;
    for _ in 0..20 {
        let base = random_positions(&mut rng, 64, d, v, t, 0.4);
        let w = Matrix {
            rows: t,
            cols: d,
            data: (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (l0, g0) = loss_and_grad(&base, &w, v as u32).unwrap();
        let mut junk = base.clone();
        for p in junk.iter_mut().filter(|p| p.target == NA_TARGET) {
            let h: Vec<f32> = (0..d).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let words: Vec<f32> = (0..v).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            *p = Position::new(&h, &words, NA_TARGET);
        }
        let (l1, g1) = loss_and_grad(&junk, &w, v as u32).unwrap();
        ok &= l0.to_bits() == l1.to_bits() && g0.data.iter().zip(&g1.data).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    // the same through dump records: sentinel entries never reach the loss
    let head = DenseHead::new(v, d, (0..v * d).map(|_| rng.random_range(-0.5f32..0.5)).collect()).unwrap();
    let mk = |rng: &mut ChaCha8Rng, targets: &[u32]| DumpRecord {
        targets: targets.to_vec(),
        hidden: (0..targets.len() * d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    };
    let targets = [3, NA_TARGET, 41, NA_TARGET, NA_TARGET, 7, 42];
    let a = mk(&mut rng, &targets);
    let mut b = a.clone();
    for (k, &tg) in targets.iter().enumerate() {
        if tg == NA_TARGET {
            b.hidden[k * d..(k + 1) * d]
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-1e3f32..1e3));
        }
    }
    let w = Matrix {
        rows: t,
        cols: d,
        data: (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let pa = positions_from_records(&[&a], d, &head, &mut |_| true).unwrap();
    let pb = positions_from_records(&[&b], d, &head, &mut |_| true).unwrap();
    let (la, ga) = loss_and_grad(&pa, &w, v as u32).unwrap();
    let (lb, gb) = loss_and_grad(&pb, &w, v as u32).unwrap();
    ok &= pa.len() == 4 && la.to_bits() == lb.to_bits() && ga == gb;

    report(
        2,
        "sentinel masking",
        ok,
        "loss and gradient bit-identical under randomised sentinel positions",
        t0.elapsed(),
        Duration::from_secs(1),
    )
}

fn c03_vocabulary_expansion_invariance() -> bool {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = true;
    for i in 0..100 {
        let d = rng.random_range(1..=32);
        let v = rng.random_range(1..=60);
        let t = rng.random_range(0..=6);
        let h: Vec<f32> = (0..d).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let words: Vec<f32> = (0..v).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let names: Vec<String> = (0..t).map(|j| format!("tool{j}")).collect();
        let mut emb = ToolkenEmbeddings::zeros(names, d, Fingerprint::default());
        for j in 0..t {
            emb.row_mut(j)
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-2.0f32..2.0));
        }
        let before = fused_logits(&h, &words, &emb).unwrap();
        let extra: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        emb.push_row(&format!("added{i}"), &extra).unwrap();
        let after = fused_logits(&h, &words, &emb).unwrap();
        let same =
            after.len() == before.len() + 1 && before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
        let argmax = |z: &[f32]| (0..z.len()).fold(0, |m, k| if z[k] > z[m] { k } else { m });
        ok &= same && argmax(&before) == argmax(&after[..before.len()]);
    }

    report(
        3,
        "vocabulary expansion",
        ok,
        "100 pairs keep existing fused logits and restricted argmax",
        t0.elapsed(),
        Duration::from_secs(1),
    )
}

fn sha(path: &std::path::Path) -> [u8; 32] {
    Sha256::digest(std::fs::read(path).unwrap()).into()
}

fn small_funcqa(lm: &ToyLm) -> (ToolkenVocab, Vec<ParallelSequence>) {
    let templates = funcqa::builtin_templates();
    let vocab = funcqa::vocab(LmBackend::vocab_size(lm) as u32, &ArithOp::ALL, &templates, 0).unwrap();
    let split = funcqa::split(&ArithOp::ALL, &templates, 6, 0, 5).unwrap();
    let seqs = pair_traces(lm, &vocab, &split.train).unwrap();
    (vocab, seqs)
}

fn c04_backbone_stays_frozen() -> bool {
    let t0 = Instant::now();
    let lm = ToyLm::from_seed(7);
    let (vocab, seqs) = small_funcqa(&lm);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frozen.dump");
    harvest(&lm, &vocab, &seqs, &path, &HarvestOptions::default()).unwrap();
    let fp_before = lm.fingerprint();
    let dump_before = sha(&path);
    let probe = lm.forward(&seqs[0].s).unwrap();
    let (header, records) = read_dump(&path).unwrap();
    let config = TrainConfig {
        epochs: 40,
        patience: 0,
        ..funcqa::train_config()
    };
    let (emb, rep) = fit(&header, &records, &vocab, &lm, &config).unwrap();
    let fp_after = lm.fingerprint();
    let dump_after = sha(&path);
    let probe_after = lm.forward(&seqs[0].s).unwrap();
    let fresh = ToyLm::from_seed(7).fingerprint();
    let ok = fp_before == fp_after
        && fp_after == fresh
        && dump_before == dump_after
        && probe == probe_after
        && emb.fingerprint == fp_before
        && rep.epochs.len() == 40;
    let ok = report(
        4,
        "frozen backbone",
        ok,
        &format!(
            "{} sequences, {} epochs; dump sha256 and model fingerprint unchanged",
            seqs.len(),
            rep.epochs.len()
        ),
        t0.elapsed(),
        Duration::from_secs(10),
    );
    ok
}

fn c05_separable_fit() -> bool {
    let t0 = Instant::now();
    let (d, base) = (32usize, 4usize);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let centers: Vec<Vec<f32>> = (0..3)
        .map(|c| (0..d).map(|i| if i % 3 == c { 1.0 } else { -0.2 }).collect())
        .collect();
    let head = DenseHead::new(
        base,
        d,
        (0..base * d).map(|_| noise.sample(&mut rng) as f32 * 0.1).collect(),
    )
    .unwrap();
    let mut vocab = ToolkenVocab::new(base as u32);
    let names = ["t0", "t1", "t2"];
    for n in names {
        vocab.register(ToolSpec::object(n)).unwrap();
    }
    let records: Vec<DumpRecord> = (0..300)
        .map(|i| DumpRecord {
            targets: vec![(base + i % 3) as u32],
            hidden: centers[i % 3]
                .iter()
                .map(|&x| x + noise.sample(&mut rng) as f32)
                .collect(),
        })
        .collect();
    let header = DumpHeader {
        dim: d,
        base_vocab_size: base as u32,
        fingerprint: Fingerprint([9; 32]),
        tools: names.iter().map(|s| s.to_string()).collect(),
    };
    let config = TrainConfig {
        batch_size: 32,
        seed: 4,
        epochs: 50,
        validation_fraction: 0.2,
        ..Default::default()
    };
    let (emb, rep) = fit(&header, &records, &vocab, &head, &config).unwrap();
    let val_acc = rep.epochs[rep.selected_epoch - 1].validation_accuracy;

    // nearest-centroid oracle on every record, and agreement with the fitted head
    let mut cent = vec![vec![0f64; d]; 3];
    for r in &records {
        let c = r.targets[0] as usize - base;
        cent[c]
            .iter_mut()
            .zip(&r.hidden)
            .for_each(|(a, &x)| *a += x as f64 / 100.0);
    }
    let nearest = |h: &[f32]| {
        let dist = |c: &Vec<f64>| c.iter().zip(h).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
        (0..3)
            .min_by(|&a, &b| dist(&cent[a]).total_cmp(&dist(&cent[b])))
            .unwrap()
    };
    let oracle_acc = records
        .iter()
        .filter(|r| nearest(&r.hidden) + base == r.targets[0] as usize)
        .count() as f64
        / 300.0;
    let agree = records
        .iter()
        .filter(|r| {
            let z = fused_logits(&r.hidden, &head.word_logits(&r.hidden), &emb).unwrap();
            let best = (0..z.len()).fold(0, |m, k| if z[k] > z[m] { k } else { m });
            best == nearest(&r.hidden) + base
        })
        .count() as f64
        / 300.0;
    let ok = val_acc >= 0.99
        && rep.selected_epoch <= 50
        && rep.validation_positions == 60
        && oracle_acc >= 0.99
        && agree >= 0.99;
    let ok = report(
        5,
        "separable fit",
        ok,
        &format!(
            "held-out accuracy {val_acc:.3} at epoch {}, centroid oracle {oracle_acc:.3}, agreement {agree:.3}",
            rep.selected_epoch
        ),
        t0.elapsed(),
        Duration::from_secs(10),
    );
    ok
}

fn c06_funcqa_desk_run() -> bool {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let lm = ToyLm::from_seed(7);
    let run = funcqa::desk_run(&lm, dir.path(), 1).unwrap();
    let tool = run.report.metric("tool_correct").unwrap_or(0.0);
    let answer = run.report.metric("answer_correct").unwrap_or(0.0);
    let n = run.report.per_record.len();
    let via_calls = run.report.per_record.iter().all(|r| match &r.prediction {
        Prediction::Transcript(t) => !r.metrics["answer_correct"] || t.calls().any(|c| c.is_ok()),
        _ => false,
    });
    let ok = run.trained.harvest.sequences == 611
        && n == 39
        && tool >= 0.95
        && answer >= 0.90
        && via_calls
        && run.injection_failures.is_empty();
    let ok = report(
        6,
        "FuncQA desk run",
        ok,
        &format!(
            "{} train / {n} held out, tool selection {tool:.3}, answer {answer:.3}, injection failures {}",
            run.trained.harvest.sequences,
            run.injection_failures.len()
        ),
        t0.elapsed(),
        Duration::from_secs(120),
    );
    ok
}

fn c07_kb_desk_run() -> bool {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let world = kbworld::KbWorld::generate(234, kbworld::TRAIN_FACTS, kbworld::TEST_FACTS, 3).unwrap();
    world.write(dir.path()).unwrap();
    let loaded = kbworld::KbWorld::load(dir.path()).unwrap();
    let objects: BTreeSet<String> = loaded.store.facts().map(|f| f.object).collect();
    let min_facts = loaded
        .store
        .relations()
        .map(|r| loaded.store.facts().filter(|f| f.relation == r).count())
        .min()
        .unwrap_or(0);
    let lm = ToyLm::from_seed(7);
    let run = kbworld::desk_run(&lm, dir.path(), 11).unwrap();
    let mut lines = Vec::new();
    let mut answered = 0;
    let mut honest = 0;
    for (n, rep) in &run.subsets {
        lines.push(format!("{n}: {:.3}", rep.metric("tool_correct").unwrap_or(0.0)));
        for r in &rep.per_record {
            if let Prediction::Transcript(t) = &r.prediction {
                if let Some(a) = extract_text(&t.final_text) {
                    answered += 1;
                    honest += objects.contains(&a) as usize;
                }
            }
        }
    }
    let acc = |n: usize| {
        run.subsets
            .iter()
            .find(|s| s.0 == n)
            .and_then(|s| s.1.metric("tool_correct"))
            .unwrap_or(0.0)
    };
    let sizes_ok = run.subsets.iter().map(|s| s.0).collect::<Vec<_>>() == [30, 60, 100, 234]
        && run.subsets.iter().all(|s| s.1.per_record.len() == 500);
    let ok = loaded.store.relation_count() >= 234
        && min_facts >= 20
        && sizes_ok
        && acc(30) >= 0.90
        && acc(234) >= 0.75
        && answered > 0
        && honest == answered;
    let ok = report(
        7,
        "KB desk run",
        ok,
        &format!(
            "{} relations x >= {min_facts} facts; relation selection {}; honest {honest}/{answered}",
            loaded.store.relation_count(),
            lines.join(", ")
        ),
        t0.elapsed(),
        Duration::from_secs(300),
    );
    ok
}

/// Independent integer oracle in 128-bit arithmetic.
fn int_oracle(op: ArithOp, a: i128, b: i128) -> i128 {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    match op {
        ArithOp::Add => a + b,
        ArithOp::Subtract => a - b,
        ArithOp::Multiply => a * b,
        ArithOp::Power => (0..b).fold(1i128, |acc, _| acc * a),
        ArithOp::Gcd => gcd(a, b),
        ArithOp::Lcm => {
            if a == 0 || b == 0 {
                0
            } else {
                a / gcd(a, b) * b
            }
        }
        ArithOp::Remainder => a % b,
        ArithOp::Choose => {
            // Pascal's triangle
            let (n, k) = (a as usize, b as usize);
            let mut row = vec![1i128];
            for _ in 0..n {
                let mut next = vec![1i128; row.len() + 1];
                for j in 1..row.len() {
                    next[j] = row[j - 1] + row[j];
                }
                row = next;
            }
            row[k]
        }
        ArithOp::Permutate => ((a - b + 1)..=a).product(),
        _ => unreachable!(),
    }
}

fn float_oracle(op: ArithOp, a: f64, b: f64) -> f64 {
    match op {
        ArithOp::Divide => a / b,
        ArithOp::Sqrt => a.sqrt(),
        ArithOp::Log => a.ln() / std::f64::consts::LN_10,
        ArithOp::Ln => a.ln(),
        ArithOp::Multiply => a * b,
        _ => unreachable!(),
    }
}

fn c08_arithmetic_matches_oracle() -> bool {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_rel: f64 = 0.0;
    let mut mismatches = Vec::new();
    for op in ArithOp::ALL {
        for i in 0..1000 {
            let wide = i % 2 == 1;
            let args: Vec<f64> = if !wide {
                op.sample_operands(&mut rng)
            } else {
                let int = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| rng.random_range(lo..=hi) as f64;
                match op {
                    ArithOp::Add | ArithOp::Subtract => {
                        vec![int(&mut rng, -1 << 52, 1 << 52), int(&mut rng, -1 << 52, 1 << 52)]
                    }
                    ArithOp::Multiply => vec![int(&mut rng, -1 << 40, 1 << 40), int(&mut rng, -1 << 40, 1 << 40)],
                    ArithOp::Power => vec![int(&mut rng, -99, 99), int(&mut rng, 0, 15)],
                    ArithOp::Gcd | ArithOp::Lcm => vec![int(&mut rng, 0, 1 << 30), int(&mut rng, 0, 1 << 30)],
                    ArithOp::Remainder => vec![int(&mut rng, -1 << 40, 1 << 40), int(&mut rng, 1, 1 << 20)],
                    ArithOp::Choose => {
                        let n = int(&mut rng, 0, 120);
                        vec![n, int(&mut rng, 0, n as i64)]
                    }
                    ArithOp::Permutate => {
                        let n = int(&mut rng, 0, 30);
                        vec![n, int(&mut rng, 0, n as i64)]
                    }
                    ArithOp::Divide => vec![rng.random_range(-1e6..1e6), rng.random_range(0.001..1e4)],
                    ArithOp::Sqrt => vec![rng.random_range(0.0..1e12)],
                    ArithOp::Log | ArithOp::Ln => vec![rng.random_range(1e-9..1e12)],
                }
            };
            let got = op.apply(&args);
            let exact = !matches!(op, ArithOp::Divide | ArithOp::Sqrt | ArithOp::Log | ArithOp::Ln)
                && args.iter().all(|x| x.fract() == 0.0);
            let pass = match &got {
                Err(e) => {
                    mismatches.push(format!("{op}{args:?}: {e}"));
                    false
                }
                Ok(r) if exact => {
                    let want = int_oracle(op, args[0] as i128, *args.get(1).unwrap_or(&0.0) as i128);
                    r.text == want.to_string()
                }
                Ok(r) => {
                    let want = float_oracle(op, args[0], *args.get(1).unwrap_or(&0.0));
                    let got = r.value.unwrap_or(f64::NAN);
                    let rel = if want == 0.0 {
                        got.abs()
                    } else {
                        ((got - want) / want).abs()
                    };
                    worst_rel = worst_rel.max(rel);
                    rel <= 1e-12
                }
            };
            if !pass && mismatches.len() < 5 {
                mismatches.push(format!("{op}{args:?} -> {got:?}"));
            }
        }
    }
    let ok = report(
        8,
        "arithmetic oracle",
        mismatches.is_empty(),
        &format!(
            "13 x 1000 inputs, worst float relative error {worst_rel:.1e}, mismatches {:?}",
            mismatches
        ),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    ok
}

fn c09_plan_mode_guarantees() -> bool {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let lm = ToyLm::from_seed(7);
    let seed = 1;
    let run = home::desk_run(&lm, dir.path(), seed).unwrap();
    let rules = RuleTable::builtin();
    let vocab = home::vocab(LmBackend::vocab_size(&lm) as u32, &rules).unwrap();

    // every decoded object is registered in its own scenario
    let eval = home::scripts(&home::GoalKind::ALL, home::EVAL_PLANS, seed + 1);
    let mut grounded = 0;
    for (rec, script) in run.plans.per_record.iter().zip(&eval) {
        let Prediction::Plan(p) = &rec.prediction else { continue };
        let sc = &script.scenario;
        let steps = p.steps(&vocab).unwrap();
        grounded += steps
            .iter()
            .all(|s| sc.object(&s.object).is_some() || sc.rooms.contains(&s.object)) as usize;
    }

    // the object chosen after [SIT] carries the sittable property
    let sits = home::scripts(&[home::GoalKind::Sit], home::SIT_SCENARIOS, seed + 2);
    let mut sat = 0;
    let mut distractors = 0;
    for (plan, script) in run.sit_plans.iter().zip(&sits) {
        let sc = &script.scenario;
        let room_has_surface = sc.objects.iter().any(|o| o.name == "desk" || o.name == "table");
        distractors += room_has_surface as usize;
        let steps = plan.steps(&vocab).unwrap();
        if let Some(pos) = steps.iter().position(|s| s.action == "SIT") {
            sat += sc
                .object(&steps[pos].object)
                .is_some_and(|o| o.properties.contains("sittable")) as usize;
        }
    }
    let n_sit = run.sit_plans.len();
    let sittable = sat as f64 / n_sit.max(1) as f64;
    let ok = run.plans.per_record.len() == 50
        && grounded == 50
        && run.scores.grounding == 1.0
        && n_sit == sits.len()
        && distractors == n_sit
        && sittable >= 0.95;
    let ok = report(
        9,
        "plan-mode guarantees",
        ok,
        &format!(
            "grounded {grounded}/50, success {:.3}; sittable after [SIT] {sat}/{n_sit} with a desk or table in every room",
            run.scores.success
        ),
        t0.elapsed(),
        Duration::from_secs(120),
    );
    ok
}

fn c10_scoring_rules() -> bool {
    let t0 = Instant::now();
    use NumericMode::{Exact, Tolerance};
    let table: [(f64, f64, NumericMode, bool); 20] = [
        (4.56789, 4.57, Exact, true),
        (4.565, 4.57, Exact, true),
        (4.564999, 4.56, Exact, true),
        (2.675, 2.68, Exact, true),
        (1.005, 1.01, Exact, true),
        (-2.345, -2.35, Exact, true),
        (0.004, 0.0, Exact, true),
        (0.005, 0.01, Exact, true),
        (159.999, 160.0, Exact, true),
        (7.0, 7.01, Exact, false),
        (12.344, 12.35, Exact, false),
        (1e15 + 0.5, 1e15, Exact, false),
        (1000.9, 1000.0, Tolerance, true),
        (1001.0, 1000.0, Tolerance, true),
        (1001.1, 1000.0, Tolerance, false),
        (998.95, 1000.0, Tolerance, false),
        (999.05, 1000.0, Tolerance, true),
        (-500.4, -500.0, Tolerance, true),
        (-500.6, -500.0, Tolerance, false),
        (0.0, 0.0, Tolerance, true),
    ];
    let mut wrong: Vec<String> = Vec::new();
    for (p, g, m, want) in table {
        if score_numeric(p, g, m) != want {
            wrong.push(format!("{p} vs {g} {m:?}"));
        }
    }
    if round_cents(2.675) != Some(268) || round_cents(f64::INFINITY).is_some() {
        wrong.push("round_cents".into());
    }

    // real plans fuzzed through the environment
    let rules = Arc::new(RuleTable::builtin());
    let actions: Vec<String> = rules.actions().map(str::to_string).collect();
    let scripts = home::scripts(&home::GoalKind::ALL, 40, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut bounds_ok = true;
    for round in 0..25 {
        let outcomes: Vec<PlanOutcome> = scripts
            .iter()
            .map(|s| {
                let env = MiniHome::new(rules.clone(), Arc::new(s.scenario.clone()));
                let mut steps = s.steps.clone();
                let names: Vec<String> = s
                    .scenario
                    .objects
                    .iter()
                    .map(|o| o.name.clone())
                    .chain(s.scenario.rooms.clone())
                    .collect();
                for _ in 0..rng.random_range(0..=round % 4) {
                    let k = rng.random_range(0..=steps.len());
                    let obj = if rng.random_bool(0.9) {
                        names[rng.random_range(0..names.len())].clone()
                    } else {
                        "ghost".into()
                    };
                    steps.insert(k, PlanStep::new(&actions[rng.random_range(0..actions.len())], &obj));
                }
                if rng.random_bool(0.3) && !steps.is_empty() {
                    steps.truncate(rng.random_range(0..steps.len()));
                }
                env.run_plan(&steps)
            })
            .collect();
        for o in &outcomes {
            bounds_ok &=
                (!o.success || o.success_relaxed) && (!o.success || o.executable) && (!o.executable || o.grounded);
        }
        let s = score_plans(&outcomes);
        bounds_ok &= s.success <= s.success_relaxed && s.success <= s.executable && s.executable <= s.grounding;
        bounds_ok &= [s.grounding, s.executable, s.success, s.success_relaxed]
            .iter()
            .all(|x| (0.0..=1.0).contains(x));
    }
    let ok = report(
        10,
        "scoring rules",
        wrong.is_empty() && bounds_ok,
        &format!(
            "20-case numeric table, {} mismatches; plan score bounds hold on 1000 fuzzed plans: {bounds_ok}",
            wrong.len()
        ),
        t0.elapsed(),
        Duration::from_secs(1),
    );
    if !wrong.is_empty() {
        println!("     mismatched cases: {wrong:?}");
    }
    ok
}

fn c11_round_trips() -> bool {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // checkpoints: save, load, save again
    let names: Vec<String> = (0..7).map(|j| format!("tool_{j}")).collect();
    let mut emb = ToolkenEmbeddings::zeros(names, 128, Fingerprint([0xab; 32]));
    for j in 0..emb.len() {
        emb.row_mut(j)
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0f32..1.0));
    }
    emb.row_mut(0)[0] = -0.0;
    emb.row_mut(0)[1] = f32::MIN_POSITIVE / 2.0;
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    emb.save(&p1).unwrap();
    let back = ToolkenEmbeddings::load(&p1).unwrap();
    back.save(&p2).unwrap();
    let bits = |e: &ToolkenEmbeddings| {
        (0..e.len())
            .flat_map(|j| e.row(j).iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let ckpt_ok = back.names == emb.names
        && back.fingerprint == emb.fingerprint
        && bits(&back) == bits(&emb)
        && std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    // dumps: cross-entropy from read-back states equals cross-entropy from a fresh forward pass
    let lm = ToyLm::from_seed(7);
    let (vocab, seqs) = small_funcqa(&lm);
    let path = dir.path().join("rt.dump");
    harvest(&lm, &vocab, &seqs, &path, &HarvestOptions::default()).unwrap();
    let (header, records) = read_dump(&path).unwrap();
    let base = vocab.base_vocab_size();
    let t = vocab.len();
    let w = Matrix {
        rows: t,
        cols: header.dim,
        data: (0..t * header.dim).map(|_| rng.random_range(-0.1..0.1)).collect(),
    };
    let refs: Vec<&DumpRecord> = records.iter().collect();
    let from_dump = loss(
        &positions_from_records(&refs, header.dim, &lm, &mut |_| true).unwrap(),
        &w,
        base,
    )
    .unwrap();
    let mut fresh = Vec::new();
    for seq in &seqs {
        let outs = lm.forward(&seq.s).unwrap();
        for (out, &target) in outs.iter().zip(&seq.s_prime[1..]) {
            if target != NA_TARGET {
                fresh.push(Position::new(out.hidden.values(), &out.logits, target));
            }
        }
    }
    let from_forward = loss(&fresh, &w, base).unwrap();
    let dump_ok = records.len() == seqs.len() && (from_dump - from_forward).abs() <= 1e-12 * from_forward.abs();
    let ok = report(
        11,
        "checkpoint and dump round trips",
        ckpt_ok && dump_ok,
        &format!(
            "checkpoint bit-identical {ckpt_ok}; cross-entropy dump {from_dump:.12} vs forward {from_forward:.12}"
        ),
        t0.elapsed(),
        Duration::from_secs(5),
    );
    ok
}

fn main() {
    let criteria: [(usize, fn() -> bool); 11] = [
        (1, c01_gradient_matches_finite_differences),
        (2, c02_sentinel_positions_are_masked),
        (3, c03_vocabulary_expansion_invariance),
        (4, c04_backbone_stays_frozen),
        (5, c05_separable_fit),
        (6, c06_funcqa_desk_run),
        (7, c07_kb_desk_run),
        (8, c08_arithmetic_matches_oracle),
        (9, c09_plan_mode_guarantees),
        (10, c10_scoring_rules),
        (11, c11_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, run) in criteria {
        let name = format!("c{n:02}");
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(true) => {}
            Ok(false) => failed.push(n),
            Err(_) => {
                println!("FAIL criterion {n:>2}: panicked");
                failed.push(n);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
