//! A synthetic knowledge base: relations named `<adjective>_<noun>` over
//! made-up entity names, with one question template per relation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{harvest_and_fit, Trained};
use crate::backend::{LmBackend, WordHead};
use crate::call::ArgValue;
use crate::data::kbqa::{question_for, sample_kb_subsets, KbQuestion, SUBSET_RELATION_COUNTS, SUBSET_SIZE};
use crate::data::{build_parallel, kb_to_qa, ParallelSequence};
use crate::decode::Transcript;
use crate::decode::{DecodeConfig, Decoder, OnToolError};
use crate::error::{Error, Result};
use crate::eval::{extract_text, score_transcript, EvalRecord, Gold, GoldCall, NumericMode, Report};
use crate::tools::kb::{write_tsv, SUBJECT_SLOT};
use crate::tools::{Fact, Toolbox, TripleStore};
use crate::train::TrainConfig;
use crate::vocab::{ToolkenVocab, END_NAME};

pub const ADJECTIVES: [&str; 18] = [
    "red", "blue", "green", "black", "white", "golden", "silver", "northern", "southern", "eastern", "western",
    "central", "ancient", "royal", "grand", "little", "major", "minor",
];
pub const NOUNS: [&str; 13] = [
    "capital", "language", "currency", "founder", "leader", "author", "anthem", "motto", "mascot", "emblem", "symbol",
    "rival", "partner",
];

/// Facts per relation used for training and held out for testing.
pub const TRAIN_FACTS: usize = 40;
pub const TEST_FACTS: usize = 20;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ru", "zen", "tor", "vex", "pla", "dri", "sul", "quo", "bem", "nar", "fis", "gol", "hup", "yin",
    "wex", "jor", "kel", "mab", "tiv", "osk", "urn",
];

pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const TEMPLATE_FILE: &str = "templates.tsv";

/// All `ADJECTIVES × NOUNS` relation names, adjective-major.
pub fn relation_names() -> Vec<String> {
    ADJECTIVES
        .iter()
        .flat_map(|a| NOUNS.iter().map(move |n| format!("{a}_{n}")))
        .collect()
}

pub fn template_for(relation: &str) -> Option<String> {
    let (adj, noun) = relation.split_once('_')?;
    Some(format!("For {SUBJECT_SLOT}, which {adj} {noun}?"))
}

fn entity_name(rng: &mut ChaCha8Rng) -> String {
    let mut s: String = (0..2).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    s[..1].make_ascii_uppercase();
    s
}

#[derive(Clone, Debug)]
pub struct KbWorld {
    pub store: TripleStore,
    pub train: Vec<Fact>,
    pub test: Vec<Fact>,
}

impl KbWorld {
    /// `relations` relations with `train + test` facts each. Subjects are
    /// distinct within a relation; objects are arbitrary names.
    pub fn generate(relations: usize, train: usize, test: usize, seed: u64) -> Result<Self> {
        let names = relation_names();
        if relations > names.len() {
            return Err(Error::Config(format!(
                "at most {} relations, {relations} requested",
                names.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = TripleStore::new();
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for rel in &names[..relations] {
            store.set_template(rel, &template_for(rel).expect("generated names split"))?;
            let mut subjects = BTreeSet::new();
            while subjects.len() < train + test {
                subjects.insert(entity_name(&mut rng));
            }
            let mut subjects: Vec<String> = subjects.into_iter().collect();
            subjects.shuffle(&mut rng);
            for (i, s) in subjects.into_iter().enumerate() {
                let fact = Fact::new(rel, &s, &entity_name(&mut rng));
                store.insert(&fact)?;
                if i < train {
                    tr.push(fact)
                } else {
                    te.push(fact)
                }
            }
        }
        Ok(KbWorld {
            store,
            train: tr,
            test: te,
        })
    }

    /// Writes the fact tables and templates as tab-separated files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let put = |name: &str, text: String| fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
        put(TRAIN_FILE, write_tsv(&self.train))?;
        put(TEST_FILE, write_tsv(&self.test))?;
        put(
            TEMPLATE_FILE,
            self.store
                .templates()
                .iter()
                .map(|(r, t)| format!("{r}\t{t}\n"))
                .collect(),
        )
    }

    /// Reads a world written by [`KbWorld::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Fact>> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            TripleStore::parse_tsv(&text, &path)
        };
        let (train, test) = (read(TRAIN_FILE)?, read(TEST_FILE)?);
        let mut store = TripleStore::new();
        store.load_templates(&dir.join(TEMPLATE_FILE))?;
        for f in train.iter().chain(&test) {
            store.insert(f)?;
        }
        Ok(KbWorld { store, train, test })
    }

    /// Relation toolkens with `demos` tool-mode demonstrations each, drawn
    /// from the training facts, followed by the end marker.
    pub fn vocab(&self, base_vocab_size: u32, demos: usize) -> Result<ToolkenVocab> {
        let mut by_rel: BTreeMap<&str, Vec<&Fact>> = BTreeMap::new();
        for f in &self.train {
            by_rel.entry(f.relation.as_str()).or_default().push(f);
        }
        let mut v = ToolkenVocab::new(base_vocab_size);
        for rel in self.store.relations() {
            let mut texts = Vec::new();
            for f in by_rel.get(rel).into_iter().flatten().take(demos) {
                let q = question_for(f, self.store.templates())?;
                texts.push(format!("{}[{rel}]({})={}.", q.prompt(), f.subject, f.object));
            }
            v.register(self.store.relation_spec(rel).with_demos(texts))?;
        }
        v.register_end_marker()?;
        Ok(v)
    }

    pub fn test_questions(&self) -> Result<Vec<KbQuestion>> {
        self.test
            .iter()
            .map(|f| question_for(f, self.store.templates()))
            .collect()
    }

    /// Paired sequences for the training facts. The token after each answer
    /// targets the end marker, so decoding stops once the object is injected.
    pub fn training_sequences(&self, backend: &dyn LmBackend, vocab: &ToolkenVocab) -> Result<Vec<ParallelSequence>> {
        let end = vocab
            .lookup(END_NAME)
            .ok_or_else(|| Error::UnknownTool(END_NAME.into()))?;
        self.train
            .iter()
            .map(|f| {
                let trace = kb_to_qa(f, self.store.templates())?;
                let mut seq = build_parallel(&trace, backend, vocab)?;
                let stop = trace.calls[0].end;
                let k = backend
                    .tokenize_with_offsets(&trace.text)
                    .iter()
                    .position(|t| t.start == stop)
                    .ok_or_else(|| Error::InvalidTrace(format!("no token after the answer in {:?}", trace.text)))?;
                seq.s_prime[k] = end.0;
                Ok(seq)
            })
            .collect()
    }
}

/// Scores a transcript for a question. Besides the answer metrics, the record
/// carries `honest`: the extracted answer is an object stored under the
/// relation of the first ok call (only when such a call and an answer exist).
pub fn score(store: &TripleStore, q: &KbQuestion, id: &str, transcript: &Transcript) -> EvalRecord {
    let gold_call = GoldCall {
        tool: q.relation.clone(),
        args: Some(vec![ArgValue::Entity(q.subject.clone())]),
    };
    let mut rec = score_transcript(
        id,
        transcript,
        &Gold::Text(q.object.clone()),
        Some(&gold_call),
        NumericMode::Exact,
    );
    let ok_call = transcript.calls().find(|c| c.is_ok());
    if let (Some(call), Some(answer)) = (ok_call, extract_text(&transcript.final_text)) {
        rec.metrics
            .insert("honest".into(), store.is_stored_object(&call.tool, &answer));
    }
    rec
}

/// Demonstrations per relation shown in tool mode.
pub const DEMOS: usize = 4;

pub fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 50,
        batch_size: 512,
        word_fraction: 0.03,
        patience: 0,
        class_balance: true,
        ..Default::default()
    }
}

/// One call at most, only the subset's relations (plus the end marker), and
/// a bias that lets the end marker win right after an injected answer. A
/// failed lookup ends the transcript without an answer.
pub fn decode_config(relations: &[String]) -> DecodeConfig {
    let mut enabled = relations.to_vec();
    enabled.push(END_NAME.to_string());
    DecodeConfig {
        max_tool_calls: 1,
        toolken_bias: 6.0,
        on_tool_error: OnToolError::Abort,
        enabled_tools: Some(enabled),
        ..Default::default()
    }
}

#[derive(Clone, Debug)]
pub struct KbRun {
    pub trained: Trained,
    /// One report per subset, in [`SUBSET_RELATION_COUNTS`] order.
    pub subsets: Vec<(usize, Report)>,
}

/// Loads the world in `dir`, trains one toolken per relation on the training
/// facts and answers the four evaluation subsets of [`SUBSET_SIZE`] questions.
pub fn desk_run<B: LmBackend + WordHead>(backend: &B, dir: &Path, seed: u64) -> Result<KbRun> {
    let world = KbWorld::load(dir)?;
    let vocab = world.vocab(LmBackend::vocab_size(backend) as u32, DEMOS)?;
    let seqs = world.training_sequences(backend, &vocab)?;
    let config = TrainConfig { seed, ..train_config() };
    let trained = harvest_and_fit(backend, &vocab, &seqs, None, &dir.join("kb.dump"), &config)?;
    let tools = Toolbox::knowledge_base(Arc::new(world.store.clone()));
    let subsets = sample_kb_subsets(
        &world.test_questions()?,
        &SUBSET_RELATION_COUNTS,
        SUBSET_SIZE,
        seed,
        true,
    )?;
    let mut out = Vec::new();
    for subset in &subsets {
        let decoder = Decoder::new(
            backend,
            &vocab,
            &trained.embeddings,
            &tools,
            decode_config(&subset.relations),
        )?;
        let records = subset
            .questions
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                Ok(score(
                    &world.store,
                    q,
                    &format!("{}-{i}", q.relation),
                    &decoder.generate(&q.prompt())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = subset.relations.len();
        out.push((n, Report::new(&format!("kb-{n}"), records)));
    }
    Ok(KbRun { trained, subsets: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyLm;

    #[test]
    fn world_shape_and_round_trip() {
        let w = KbWorld::generate(12, 4, 3, 5).unwrap();
        assert_eq!(w.store.relation_count(), 12);
        assert_eq!(w.train.len(), 48);
        assert_eq!(w.test.len(), 36);
        let dir = tempfile::tempdir().unwrap();
        w.write(dir.path()).unwrap();
        let back = KbWorld::load(dir.path()).unwrap();
        assert_eq!(back.train, w.train);
        assert_eq!(back.test, w.test);
        assert_eq!(back.store.templates(), w.store.templates());
        for f in &w.test {
            assert_eq!(back.store.lookup(&f.relation, &f.subject).unwrap(), f.object);
        }
    }

    #[test]
    fn full_relation_set() {
        let names = relation_names();
        assert_eq!(names.len(), 234);
        assert_eq!(names.iter().collect::<BTreeSet<_>>().len(), 234);
    }

    #[test]
    fn end_marker_follows_answer() {
        let lm = ToyLm::from_seed(7);
        let w = KbWorld::generate(3, 2, 1, 0).unwrap();
        let v = w.vocab(lm.tokenizer().vocab_size() as u32, 4).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.tools()[0].demonstrations.len(), 2);
        let end = v.lookup(END_NAME).unwrap().0;
        for seq in w.training_sequences(&lm, &v).unwrap() {
            let k = seq.s_prime.iter().position(|&t| t == end).unwrap();
            assert_eq!(lm.tokenizer().piece(seq.s[k]), Some("."));
            assert_eq!(seq.toolken_targets(v.base_vocab_size()), 2);
        }
    }
}
