//! Hidden-state dumps: the boundary between a frozen backend and the trainer.
//!
//! Layout (little-endian): magic `TKHD`, version u32, d u32, base vocab size
//! u32, backend fingerprint (32 bytes), tool count u32, tool names (u16 length
//! then UTF-8); then per record a u32 length followed by that many
//! `{u32 fused target (0xFFFFFFFF = ignored), d × f32 hidden}` entries.
//!
//! Entry `k` of a record pairs the target for one token with the hidden state
//! at the position before it. Without a context prefix the first token of a
//! sequence has no preceding state, so a sequence of `n` tokens yields `n − 1`
//! entries; with a prefix it yields `n`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Fingerprint, LmBackend, LmSession};
use crate::binio::{self, Reader};
use crate::data::{ParallelSequence, NA_TARGET};
use crate::error::{Error, Result};
use crate::vocab::ToolkenVocab;

pub const DUMP_MAGIC: &[u8; 4] = b"TKHD";
pub const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub dim: usize,
    pub base_vocab_size: u32,
    pub fingerprint: Fingerprint,
    pub tools: Vec<String>,
}

impl DumpHeader {
    pub fn for_backend(backend: &dyn LmBackend, vocab: &ToolkenVocab) -> Self {
        DumpHeader {
            dim: backend.hidden_dim(),
            base_vocab_size: vocab.base_vocab_size(),
            fingerprint: backend.fingerprint(),
            tools: vocab.names().map(str::to_string).collect(),
        }
    }

    pub fn fused_size(&self) -> u32 {
        self.base_vocab_size + self.tools.len() as u32
    }

    /// Tool names, base vocabulary and dimension all agree with `vocab`.
    pub fn check_vocab(&self, vocab: &ToolkenVocab) -> Result<()> {
        if self.base_vocab_size != vocab.base_vocab_size() {
            return Err(Error::DimensionMismatch {
                what: "dump base vocabulary",
                expected: vocab.base_vocab_size() as usize,
                got: self.base_vocab_size as usize,
            });
        }
        let names: Vec<&str> = vocab.names().collect();
        if self.tools.iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(Error::Config(format!(
                "dump tools {:?} differ from vocabulary {:?}",
                self.tools, names
            )));
        }
        Ok(())
    }

    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        binio::write_u32(w, DUMP_VERSION)?;
        binio::write_u32(w, self.dim as u32)?;
        binio::write_u32(w, self.base_vocab_size)?;
        w.write_all(&self.fingerprint.0)?;
        binio::write_u32(w, self.tools.len() as u32)?;
        binio::write_names(w, &self.tools)
    }

    fn read<R: std::io::Read>(r: &mut Reader<R>) -> Result<Self> {
        r.magic(DUMP_MAGIC)?;
        let version = r.u32("version")?;
        if version != DUMP_VERSION {
            return Err(Error::VersionMismatch {
                path: r.path().to_path_buf(),
                found: version,
                expected: DUMP_VERSION,
            });
        }
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(r.corrupt("zero hidden dimension"));
        }
        let base_vocab_size = r.u32("base vocabulary size")?;
        let mut fp = [0u8; 32];
        r.exact(&mut fp, "fingerprint")?;
        let n = r.u32("tool count")? as usize;
        let tools = r.names(n)?;
        Ok(DumpHeader {
            dim,
            base_vocab_size,
            fingerprint: Fingerprint(fp),
            tools,
        })
    }
}

/// One sequence's entries: `targets[k]` with hidden state
/// `hidden[k * d..(k + 1) * d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpRecord {
    pub targets: Vec<u32>,
    pub hidden: Vec<f32>,
}

impl DumpRecord {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn hidden_at(&self, k: usize, d: usize) -> &[f32] {
        &self.hidden[k * d..(k + 1) * d]
    }
}

pub struct DumpWriter {
    w: BufWriter<File>,
    path: PathBuf,
    header: DumpHeader,
}

impl DumpWriter {
    pub fn create(path: &Path, header: DumpHeader) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        header.write(&mut w).map_err(|e| Error::io(path, e))?;
        Ok(DumpWriter {
            w,
            path: path.to_path_buf(),
            header,
        })
    }

    pub fn write_record(&mut self, rec: &DumpRecord) -> Result<()> {
        let d = self.header.dim;
        if rec.hidden.len() != rec.targets.len() * d {
            return Err(Error::DimensionMismatch {
                what: "dump record hidden states",
                expected: rec.targets.len() * d,
                got: rec.hidden.len(),
            });
        }
        let fused = self.header.fused_size();
        if let Some(&t) = rec.targets.iter().find(|&&t| t != NA_TARGET && t >= fused) {
            return Err(Error::TokenOutOfRange { id: t, size: fused });
        }
        let io = |e| Error::io(&self.path, e);
        binio::write_u32(&mut self.w, rec.targets.len() as u32).map_err(io)?;
        let mut buf = Vec::with_capacity(rec.targets.len() * (4 + 4 * d));
        for (k, t) in rec.targets.iter().enumerate() {
            buf.extend_from_slice(&t.to_le_bytes());
            for x in rec.hidden_at(k, d) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.w.write_all(&buf).map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub struct DumpReader {
    r: Reader<BufReader<File>>,
    header: DumpHeader,
}

impl DumpReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), path);
        let header = DumpHeader::read(&mut r)?;
        Ok(DumpReader { r, header })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn next_record(&mut self) -> Result<Option<DumpRecord>> {
        let mut len = [0u8; 4];
        if !self.r.fill(&mut len, "record length")? {
            return Ok(None);
        }
        let n = u32::from_le_bytes(len) as usize;
        let d = self.header.dim;
        let mut targets = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n * d);
        let mut buf = vec![0u8; 4 + 4 * d];
        for _ in 0..n {
            self.r.exact(&mut buf, "record entry")?;
            targets.push(u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]));
            hidden.extend(
                buf[4..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
        }
        Ok(Some(DumpRecord { targets, hidden }))
    }
}

impl Iterator for DumpReader {
    type Item = Result<DumpRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, Vec<DumpRecord>)> {
    let mut r = DumpReader::open(path)?;
    let header = r.header().clone();
    let mut records = Vec::new();
    while let Some(rec) = r.next_record()? {
        records.push(rec);
    }
    Ok((header, records))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestStats {
    pub sequences: usize,
    pub entries: usize,
    pub ignored: usize,
    pub word_targets: usize,
    pub toolken_targets: usize,
    /// Supervised positions per tool, in vocabulary order.
    pub per_tool: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default)]
pub struct HarvestOptions {
    /// Text run through the backend before every sequence; its positions are
    /// not recorded but provide the state preceding the first token.
    pub context_prefix: Option<String>,
    /// Sequences processed per parallel batch.
    pub batch: usize,
}

/// Runs every sequence through the backend and writes its dump record.
/// Records are written in corpus order regardless of parallelism.
pub fn harvest(
    backend: &dyn LmBackend,
    vocab: &ToolkenVocab,
    corpus: &[ParallelSequence],
    out: &Path,
    opts: &HarvestOptions,
) -> Result<HarvestStats> {
    let header = DumpHeader::for_backend(backend, vocab);
    let mut writer = DumpWriter::create(out, header)?;
    let prefix: Option<Vec<u32>> = opts.context_prefix.as_deref().map(|p| backend.tokenize(p));
    let mut base = backend.session();
    if let Some(p) = prefix.as_ref().filter(|p| !p.is_empty()) {
        base.push(p)?;
    }
    let use_prefix = prefix.as_ref().is_some_and(|p| !p.is_empty());
    let mut stats = HarvestStats {
        per_tool: vocab.names().map(|n| (n.to_string(), 0)).collect(),
        ..Default::default()
    };
    let base_vocab = vocab.base_vocab_size();
    let batch = opts.batch.max(1);
    for chunk in corpus.chunks(batch) {
        let forks: Vec<_> = chunk.iter().map(|_| use_prefix.then(|| base.fork())).collect();
        let records: Vec<Result<DumpRecord>> = chunk
            .par_iter()
            .zip(forks)
            .map(|(seq, fork)| {
                if seq.s.len() != seq.s_prime.len() {
                    return Err(Error::DimensionMismatch {
                        what: "s′ length",
                        expected: seq.s.len(),
                        got: seq.s_prime.len(),
                    });
                }
                match fork {
                    Some(s) => record_with_prefix(s, seq),
                    None => record_plain(backend, seq),
                }
            })
            .collect();
        for rec in records {
            let rec = rec?;
            stats.sequences += 1;
            stats.entries += rec.len();
            for &t in &rec.targets {
                if t == NA_TARGET {
                    stats.ignored += 1;
                } else if t < base_vocab {
                    stats.word_targets += 1;
                } else {
                    stats.toolken_targets += 1;
                    let name = &vocab.tools()[(t - base_vocab) as usize].name;
                    *stats.per_tool.get_mut(name).expect("tool listed") += 1;
                }
            }
            writer.write_record(&rec)?;
        }
    }
    writer.finish()?;
    Ok(stats)
}

fn record_plain(backend: &dyn LmBackend, seq: &ParallelSequence) -> Result<DumpRecord> {
    if seq.s.len() < 2 {
        return Ok(DumpRecord {
            targets: Vec::new(),
            hidden: Vec::new(),
        });
    }
    let hs = backend.forward_hidden(&seq.s[..seq.s.len() - 1])?;
    let mut hidden = Vec::with_capacity(hs.len() * backend.hidden_dim());
    for h in &hs {
        hidden.extend_from_slice(h.values());
    }
    Ok(DumpRecord {
        targets: seq.s_prime[1..].to_vec(),
        hidden,
    })
}

fn record_with_prefix(mut s: Box<dyn LmSession<'_> + '_>, seq: &ParallelSequence) -> Result<DumpRecord> {
    let mut hidden = Vec::new();
    for (k, &id) in seq.s.iter().enumerate() {
        hidden.extend_from_slice(s.hidden()?.values());
        if k + 1 < seq.s.len() {
            s.push(&[id])?;
        }
    }
    Ok(DumpRecord {
        targets: seq.s_prime.clone(),
        hidden,
    })
}
