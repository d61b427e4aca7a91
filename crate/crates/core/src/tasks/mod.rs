//! Desk-scale task families and the harvest → fit pipeline they share.

pub mod funcqa;
pub mod home;
pub mod kbworld;

use std::path::Path;
use std::time::Instant;

use crate::backend::{LmBackend, WordHead};
use crate::data::{build_parallel, AnnotatedTrace, ParallelSequence};
use crate::dump::{harvest, read_dump, HarvestOptions, HarvestStats};
use crate::error::Result;
use crate::train::{fit, ToolkenEmbeddings, TrainConfig, TrainReport};
use crate::vocab::ToolkenVocab;

/// What one pass of the training pipeline produced.
#[derive(Clone, Debug)]
pub struct Trained {
    pub embeddings: ToolkenEmbeddings,
    pub report: TrainReport,
    pub harvest: HarvestStats,
}

/// Builds paired sequences for every trace.
pub fn pair_traces(
    backend: &dyn LmBackend,
    vocab: &ToolkenVocab,
    traces: &[AnnotatedTrace],
) -> Result<Vec<ParallelSequence>> {
    traces.iter().map(|t| build_parallel(t, backend, vocab)).collect()
}

/// Harvests hidden states for `seqs` into `dump` (each sequence preceded by
/// `prefix`) and fits toolken embeddings on the dump.
pub fn harvest_and_fit<B: LmBackend + WordHead>(
    backend: &B,
    vocab: &ToolkenVocab,
    seqs: &[ParallelSequence],
    prefix: Option<&str>,
    dump: &Path,
    config: &TrainConfig,
) -> Result<Trained> {
    let opts = HarvestOptions {
        context_prefix: prefix.map(str::to_string),
        ..Default::default()
    };
    let t0 = Instant::now();
    let stats = harvest(backend, vocab, seqs, dump, &opts)?;
    log::info!("harvested {} sequences in {:.1?}", seqs.len(), t0.elapsed());
    let (header, records) = read_dump(dump)?;
    let t1 = Instant::now();
    let (embeddings, report) = fit(&header, &records, vocab, backend, config)?;
    log::info!("fitted {} toolkens in {:.1?}", vocab.len(), t1.elapsed());
    Ok(Trained {
        embeddings,
        report,
        harvest: stats,
    })
}
