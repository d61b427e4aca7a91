//! Fitting the toolken matrix against a frozen backend's hidden states.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Fingerprint, WordHead};
use crate::binio::{self, Reader};
use crate::data::NA_TARGET;
use crate::dump::{DumpHeader, DumpRecord};
use crate::error::{Error, Result};
use crate::vocab::ToolkenVocab;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TKEN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Positions per partial sum. Fixed so that reductions do not depend on the
/// number of worker threads.
const REDUCE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ToolkenEmbeddings {
    pub names: Vec<String>,
    pub dim: usize,
    /// Row-major `names.len() × dim`.
    pub matrix: Vec<f32>,
    pub fingerprint: Fingerprint,
}

impl ToolkenEmbeddings {
    pub fn zeros(names: Vec<String>, dim: usize, fingerprint: Fingerprint) -> Self {
        let matrix = vec![0.0; names.len() * dim];
        ToolkenEmbeddings {
            names,
            dim,
            matrix,
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.matrix[j * self.dim..(j + 1) * self.dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f32] {
        &mut self.matrix[j * self.dim..(j + 1) * self.dim]
    }

    pub fn push_row(&mut self, name: &str, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "toolken row",
                expected: self.dim,
                got: row.len(),
            });
        }
        self.names.push(name.to_string());
        self.matrix.extend_from_slice(row);
        Ok(())
    }

    /// `W_τ · h`, accumulated in f64.
    pub fn logits(&self, hidden: &[f32]) -> Result<Vec<f32>> {
        if hidden.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "hidden state",
                expected: self.dim,
                got: hidden.len(),
            });
        }
        Ok((0..self.len()).map(|j| dot64(self.row(j), hidden) as f32).collect())
    }

    /// Rows must line up with the vocabulary's tools, by name and order.
    pub fn check_vocab(&self, vocab: &ToolkenVocab) -> Result<()> {
        let names: Vec<&str> = vocab.names().collect();
        if self.names.iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(Error::Config(format!(
                "checkpoint tools {:?} differ from vocabulary {:?}",
                self.names, names
            )));
        }
        Ok(())
    }

    /// Compares the training fingerprint with a backend's. A mismatch is an
    /// error when `strict`, otherwise a logged warning.
    pub fn check_fingerprint(&self, backend: &Fingerprint, strict: bool) -> Result<()> {
        if &self.fingerprint == backend {
            return Ok(());
        }
        if strict {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.hex(),
                found: backend.hex(),
            });
        }
        log::warn!(
            "toolken embeddings were trained against backend {}, using them with {}",
            self.fingerprint.hex(),
            backend.hex()
        );
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        binio::write_u32(&mut w, CHECKPOINT_VERSION).map_err(io)?;
        binio::write_u32(&mut w, self.dim as u32).map_err(io)?;
        binio::write_u32(&mut w, self.len() as u32).map_err(io)?;
        w.write_all(&self.fingerprint.0).map_err(io)?;
        binio::write_names(&mut w, &self.names).map_err(io)?;
        binio::write_f32s(&mut w, &self.matrix).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(BufReader::new(file), path);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let dim = r.u32("dimension")? as usize;
        let n = r.u32("tool count")? as usize;
        if dim == 0 {
            return Err(r.corrupt("zero dimension"));
        }
        let mut fp = [0u8; 32];
        r.exact(&mut fp, "fingerprint")?;
        let names = r.names(n)?;
        let matrix = r.f32s(n * dim, "matrix")?;
        if !r.at_end()? {
            return Err(r.corrupt("trailing bytes after matrix"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(r.corrupt("non-finite matrix entry"));
        }
        Ok(ToolkenEmbeddings {
            names,
            dim,
            matrix,
            fingerprint: Fingerprint(fp),
        })
    }
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Word logits followed by `W_τ · h`.
pub fn fused_logits(hidden: &[f32], word_logits: &[f32], emb: &ToolkenEmbeddings) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(word_logits.len() + emb.len());
    out.extend_from_slice(word_logits);
    out.extend(emb.logits(hidden)?);
    Ok(out)
}

/// One supervised position, with the word-side quantities the loss needs
/// computed once up front.
#[derive(Clone, Debug, PartialEq)]
pub struct Position {
    pub hidden: Vec<f32>,
    /// Fused target id.
    pub target: u32,
    /// `log Σ exp` over word logits.
    pub word_lse: f64,
    pub max_word: f64,
    /// Logit of the target when it is a word, otherwise unused.
    pub target_word_logit: f64,
}

impl Position {
    pub fn new(hidden: &[f32], word_logits: &[f32], target: u32) -> Self {
        let max_word = word_logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let word_lse = max_word
            + word_logits
                .iter()
                .map(|&x| (x as f64 - max_word).exp())
                .sum::<f64>()
                .ln();
        let target_word_logit = word_logits.get(target as usize).map_or(0.0, |&x| x as f64);
        Position {
            hidden: hidden.to_vec(),
            target,
            word_lse,
            max_word,
            target_word_logit,
        }
    }
}

/// Dense f64 matrix used while fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Self {
        Matrix {
            rows,
            cols,
            data: data.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    fn logits(&self, h: &[f32], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(j), h);
        }
    }
}

/// Dot product with eight fixed partial sums, combined in a fixed order.
fn dot(w: &[f64], h: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (wc, hc) = (w.chunks_exact(8), h.chunks_exact(8));
    let tail: f64 = wc
        .remainder()
        .iter()
        .zip(hc.remainder())
        .map(|(&a, &b)| a * b as f64)
        .sum();
    for (a, b) in wc.zip(hc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k] as f64;
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Positions whose logits are computed together, so each row of `w` is read
/// once per block.
const BLOCK: usize = 16;

/// Returns (sum of losses, gradient sum) over `positions`, ignoring sentinel
/// targets.
fn partial(positions: &[Position], w: &Matrix, base: u32, with_grad: bool) -> Result<(f64, Vec<f64>, usize)> {
    let (t, d) = (w.rows, w.cols);
    let fused = base as usize + t;
    let mut grad = vec![0.0; if with_grad { t * d } else { 0 }];
    let mut loss = 0.0;
    let mut count = 0;
    let mut block: Vec<&Position> = Vec::with_capacity(BLOCK);
    let mut z = vec![0.0; BLOCK * t];
    let mut live = positions.iter().filter(|p| p.target != NA_TARGET).peekable();
    while live.peek().is_some() {
        block.clear();
        block.extend(live.by_ref().take(BLOCK));
        for p in &block {
            if p.target as usize >= fused {
                return Err(Error::TokenOutOfRange {
                    id: p.target,
                    size: fused as u32,
                });
            }
            if p.hidden.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "hidden state",
                    expected: d,
                    got: p.hidden.len(),
                });
            }
        }
        for j in 0..t {
            let row = w.row(j);
            for (b, p) in block.iter().enumerate() {
                z[b * t + j] = dot(row, &p.hidden);
            }
        }
        for (b, p) in block.iter().enumerate() {
            let zb = &mut z[b * t..(b + 1) * t];
            let m = zb.iter().fold(p.word_lse, |m, &x| m.max(x));
            let sum = (p.word_lse - m).exp() + zb.iter().map(|&x| (x - m).exp()).sum::<f64>();
            let lse = m + sum.ln();
            let target_logit = if p.target < base {
                p.target_word_logit
            } else {
                zb[(p.target - base) as usize]
            };
            loss += lse - target_logit;
            count += 1;
            if with_grad {
                zb.iter_mut().for_each(|x| *x = (*x - lse).exp());
                if p.target >= base {
                    zb[(p.target - base) as usize] -= 1.0;
                }
            }
        }
        if !with_grad {
            continue;
        }
        for j in 0..t {
            let gr = &mut grad[j * d..(j + 1) * d];
            for (b, p) in block.iter().enumerate() {
                let g = z[b * t + j];
                if g != 0.0 {
                    for (a, &x) in gr.iter_mut().zip(&p.hidden) {
                        *a += g * x as f64;
                    }
                }
            }
        }
    }
    Ok((loss, grad, count))
}

/// Mean masked cross-entropy over the fused vocabulary and its gradient with
/// respect to `w`. Fully masked batches give zero loss and zero gradient.
pub fn loss_and_grad(positions: &[Position], w: &Matrix, base_vocab_size: u32) -> Result<(f64, Matrix)> {
    let (loss, grad) = reduce(positions, w, base_vocab_size, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Mean masked cross-entropy without the gradient; equal to the loss
/// returned by [`loss_and_grad`].
pub fn loss(positions: &[Position], w: &Matrix, base_vocab_size: u32) -> Result<f64> {
    Ok(reduce(positions, w, base_vocab_size, false)?.0)
}

fn reduce(positions: &[Position], w: &Matrix, base_vocab_size: u32, with_grad: bool) -> Result<(f64, Option<Matrix>)> {
    let parts: Vec<Result<(f64, Vec<f64>, usize)>> = positions
        .par_chunks(REDUCE_CHUNK)
        .map(|c| partial(c, w, base_vocab_size, with_grad))
        .collect();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(w.rows, w.cols);
    let mut count = 0;
    for part in parts {
        let (l, g, n) = part?;
        loss += l;
        count += n;
        for (a, b) in grad.data.iter_mut().zip(g) {
            *a += b;
        }
    }
    if count == 0 {
        return Ok((0.0, with_grad.then_some(grad)));
    }
    let scale = 1.0 / count as f64;
    grad.data.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, with_grad.then_some(grad)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Gaussian {
        sigma: Option<f64>,
    },
    /// Row `j` starts at the mean hidden state of positions targeting tool `j`.
    HiddenMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Positions per step; 0 means the whole training set.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: Init,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Keep only toolken positions plus `word_fraction` of word positions.
    pub class_balance: bool,
    pub word_fraction: f64,
    /// Share of sequences held out for validation.
    pub validation_fraction: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            batch_size: 0,
            epochs: 50,
            seed: 0,
            init: Init::Gaussian { sigma: None },
            patience: 5,
            class_balance: false,
            word_fraction: 0.1,
            validation_fraction: 0.2,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.word_fraction) {
            return Err(Error::Config(format!(
                "word_fraction must lie in [0, 1], got {}",
                self.word_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if let Init::Gaussian { sigma: Some(s) } = self.init {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init sigma must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub selected_epoch: usize,
    pub stopped_early: bool,
    pub train_positions: usize,
    pub validation_positions: usize,
    pub toolken_positions: usize,
    /// Validation accuracy is measured on training positions when the held
    /// out split has no toolken targets.
    pub validated_on_train: bool,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Turns dump records into positions, computing word logits through `head`.
/// Non-sentinel positions are offered to `keep` in record order.
pub fn positions_from_records(
    records: &[&DumpRecord],
    dim: usize,
    head: &dyn WordHead,
    keep: &mut dyn FnMut(u32) -> bool,
) -> Result<Vec<Position>> {
    if head.hidden_dim() != dim {
        return Err(Error::DimensionMismatch {
            what: "word head dimension",
            expected: dim,
            got: head.hidden_dim(),
        });
    }
    let mut picked: Vec<(&[f32], u32)> = Vec::new();
    for rec in records {
        for (k, &t) in rec.targets.iter().enumerate() {
            if t != NA_TARGET && keep(t) {
                picked.push((rec.hidden_at(k, dim), t));
            }
        }
    }
    Ok(picked
        .par_iter()
        .map(|&(h, t)| Position::new(h, &head.word_logits(h), t))
        .collect())
}

/// Fraction of toolken-target positions whose fused argmax is the target.
/// Ties go to the lowest id.
pub fn toolken_accuracy(positions: &[Position], w: &Matrix, base: u32) -> Option<f64> {
    let mut z = vec![0.0; w.rows];
    let (mut hit, mut n) = (0usize, 0usize);
    for p in positions.iter().filter(|p| p.target != NA_TARGET && p.target >= base) {
        w.logits(&p.hidden, &mut z);
        let mut best = (p.max_word, None);
        for (j, &x) in z.iter().enumerate() {
            if x > best.0 {
                best = (x, Some(j));
            }
        }
        n += 1;
        if best.1 == Some((p.target - base) as usize) {
            hit += 1;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            w[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn initial_matrix(
    config: &TrainConfig,
    train: &[Position],
    t: usize,
    d: usize,
    base: u32,
    rng: &mut ChaCha8Rng,
) -> Matrix {
    let mut w = Matrix::zeros(t, d);
    match config.init {
        Init::Gaussian { sigma } => {
            let sigma = sigma.unwrap_or(1.0 / (d as f64).sqrt());
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                w.data.iter_mut().for_each(|x| *x = normal.sample(rng));
            }
        }
        Init::HiddenMean => {
            let mut counts = vec![0usize; t];
            for p in train.iter().filter(|p| p.target >= base && p.target != NA_TARGET) {
                let j = (p.target - base) as usize;
                counts[j] += 1;
                for (a, &x) in w.data[j * d..(j + 1) * d].iter_mut().zip(&p.hidden) {
                    *a += x as f64;
                }
            }
            for (j, &c) in counts.iter().enumerate() {
                if c > 0 {
                    w.data[j * d..(j + 1) * d].iter_mut().for_each(|a| *a /= c as f64);
                }
            }
        }
    }
    w
}

/// Fits `W_τ` on dump records. Only the returned matrix is trained; records
/// and backend are read, never written.
pub fn fit(
    header: &DumpHeader,
    records: &[DumpRecord],
    vocab: &ToolkenVocab,
    head: &dyn WordHead,
    config: &TrainConfig,
) -> Result<(ToolkenEmbeddings, TrainReport)> {
    config.validate()?;
    header.check_vocab(vocab)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| fit_inner(header, records, vocab, head, config))
}

fn fit_inner(
    header: &DumpHeader,
    records: &[DumpRecord],
    vocab: &ToolkenVocab,
    head: &dyn WordHead,
    config: &TrainConfig,
) -> Result<(ToolkenEmbeddings, TrainReport)> {
    let base = vocab.base_vocab_size();
    let (t, d) = (vocab.len(), header.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((records.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = if n_val >= records.len() { 0 } else { n_val };
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| &records[i]).collect::<Vec<_>>();

    let mut keep = |t: u32| t >= base || !config.class_balance || rng.random::<f64>() < config.word_fraction;
    let mut train = positions_from_records(&pick(&train_idx), d, head, &mut keep)?;
    let val = positions_from_records(&pick(&val_idx), d, head, &mut keep)?;
    let toolken_positions = train.iter().filter(|p| p.target >= base).count();
    log::debug!("{} training and {} validation positions", train.len(), val.len());
    if toolken_positions == 0 {
        return Err(Error::EmptySupervision);
    }
    let validated_on_train = toolken_accuracy(&val, &Matrix::zeros(t, d), base).is_none();

    let mut w = initial_matrix(config, &train, t, d, base, &mut rng);
    let mut adam = Adam {
        m: vec![0.0; t * d],
        v: vec![0.0; t * d],
        t: 0,
    };
    let batch = if config.batch_size == 0 {
        train.len()
    } else {
        config.batch_size
    };

    let mut epochs = Vec::new();
    let mut best = (w.clone(), f64::NEG_INFINITY, f64::INFINITY, 0usize);
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        if batch < train.len() {
            train.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut steps = 0;
        for (b, chunk) in train.chunks(batch).enumerate() {
            let (loss, grad) = loss_and_grad(chunk, &w, base)?;
            if !loss.is_finite() || grad.data.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            match config.optimizer {
                Optimizer::Sgd => w
                    .data
                    .iter_mut()
                    .zip(&grad.data)
                    .for_each(|(a, g)| *a -= config.learning_rate * g),
                Optimizer::Adam => adam.step(&mut w.data, &grad.data, config.learning_rate),
            }
            total += loss;
            steps += 1;
        }
        let eval_set = if validated_on_train { &train } else { &val };
        let val_loss = loss(eval_set, &w, base)?;
        let acc = toolken_accuracy(eval_set, &w, base).unwrap_or(0.0);
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: steps });
        }
        epochs.push(EpochStats {
            epoch,
            train_loss: total / steps.max(1) as f64,
            validation_loss: val_loss,
            validation_accuracy: acc,
        });
        log::debug!(
            "epoch {epoch}: train loss {:.5}, validation loss {val_loss:.5}, accuracy {acc:.4}",
            total / steps.max(1) as f64
        );
        if acc > best.1 || (acc == best.1 && val_loss < best.2) {
            best = (w.clone(), acc, val_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }

    let emb = ToolkenEmbeddings {
        names: vocab.names().map(str::to_string).collect(),
        dim: d,
        matrix: best.0.data.iter().map(|&x| x as f32).collect(),
        fingerprint: header.fingerprint,
    };
    let report = TrainReport {
        epochs,
        selected_epoch: best.3,
        stopped_early,
        train_positions: train.len(),
        validation_positions: val.len(),
        toolken_positions,
        validated_on_train,
    };
    Ok((emb, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::DenseHead;
    use proptest::prelude::*;
    use rand::Rng;

    fn pos(h: &[f32], words: &[f32], target: u32) -> Position {
        Position::new(h, words, target)
    }

    /// Direct evaluation of the mean loss from full fused logits.
    fn reference_loss(positions: &[Position], words: &[Vec<f32>], w: &Matrix) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for (p, wl) in positions.iter().zip(words) {
            if p.target == NA_TARGET {
                continue;
            }
            let mut z: Vec<f64> = wl.iter().map(|&x| x as f64).collect();
            for j in 0..w.rows {
                z.push(w.row(j).iter().zip(&p.hidden).map(|(&a, &b)| a * b as f64).sum());
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - z[p.target as usize];
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    #[test]
    fn fused_logit_layout() {
        let mut emb = ToolkenEmbeddings::zeros(vec!["a".into()], 2, Fingerprint::default());
        let words = [0.5f32, -1.0, 2.0];
        assert_eq!(
            fused_logits(&[1.0, 7.0], &words, &emb).unwrap(),
            vec![0.5, -1.0, 2.0, 0.0]
        );
        emb.row_mut(0).copy_from_slice(&[3.0, 5.0]);
        assert_eq!(fused_logits(&[1.0, 0.0], &words, &emb).unwrap()[3], 3.0);
        let before = fused_logits(&[0.3, -0.2], &words, &emb).unwrap();
        emb.push_row("b", &[1.0, 1.0]).unwrap();
        let after = fused_logits(&[0.3, -0.2], &words, &emb).unwrap();
        assert_eq!(&after[..4], &before[..]);
        assert!(fused_logits(&[1.0], &words, &emb).is_err());
    }

    #[test]
    fn fully_masked_is_zero() {
        let w = Matrix::from_f32(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let ps = vec![pos(&[1.0, 1.0], &[0.0, 1.0], NA_TARGET)];
        let (l, g) = loss_and_grad(&ps, &w, 2).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_target() {
        let w = Matrix::zeros(1, 2);
        let ps = vec![pos(&[1.0, 1.0], &[0.0, 1.0], 3)];
        assert!(matches!(
            loss_and_grad(&ps, &w, 2),
            Err(Error::TokenOutOfRange { id: 3, size: 3 })
        ));
    }

    fn finite_difference_error(ps: &[Position], w: &Matrix, base: u32) -> f64 {
        let (_, g) = loss_and_grad(ps, w, base).unwrap();
        let step = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..w.data.len() {
            let mut a = w.clone();
            let mut b = w.clone();
            a.data[i] += step;
            b.data[i] -= step;
            let fd = (loss_and_grad(ps, &a, base).unwrap().0 - loss_and_grad(ps, &b, base).unwrap().0) / (2.0 * step);
            let denom = fd.abs().max(g.data[i].abs()).max(1e-6);
            worst = worst.max((fd - g.data[i]).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let words = vec![0.2f32, -0.7, 1.1, 0.0];
        let ps = vec![pos(&[0.3, -1.2, 0.8], &words, 5)];
        let w = Matrix {
            rows: 3,
            cols: 3,
            data: vec![0.1, -0.4, 0.2, 0.5, 0.3, -0.1, -0.6, 0.2, 0.9],
        };
        assert!(finite_difference_error(&ps, &w, 4) < 1e-4);
        assert!((loss_and_grad(&ps, &w, 4).unwrap().0 - reference_loss(&ps, &[words], &w)).abs() < 1e-12);
    }

    #[test]
    fn saturating_row_drives_loss_to_zero() {
        let h = [0.6f32, 0.8];
        let ps = vec![pos(&h, &[1.0, 0.5], 3)];
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 2.0, 5.0, 10.0, 40.0] {
            let w = Matrix {
                rows: 2,
                cols: 2,
                data: vec![0.0, 0.0, 0.6 * s, 0.8 * s],
            };
            let l = loss_and_grad(&ps, &w, 2).unwrap().0;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    proptest! {
        #[test]
        fn analytic_gradient_is_correct(
            t in 1usize..4,
            d in 1usize..5,
            v in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || rng.random_range(-1.0f64..1.0);
            let w = Matrix { rows: t, cols: d, data: (0..t * d).map(|_| r()).collect() };
            let ps: Vec<Position> = (0..3)
                .map(|k| {
                    let h: Vec<f32> = (0..d).map(|_| r() as f32).collect();
                    let wl: Vec<f32> = (0..v).map(|_| r() as f32).collect();
                    let target = if k == 2 { NA_TARGET } else { (seed as usize + k) as u32 % (v + t) as u32 };
                    pos(&h, &wl, target)
                })
                .collect();
            prop_assert!(finite_difference_error(&ps, &w, v as u32) < 1e-4);
        }

        #[test]
        fn sentinel_hidden_states_are_ignored(junk in prop::collection::vec(-1e3f32..1e3, 3)) {
            let w = Matrix { rows: 2, cols: 3, data: vec![0.1, 0.2, 0.3, -0.3, 0.1, 0.0] };
            let a = vec![pos(&[0.5, 0.1, -0.2], &[0.3, 0.1], 2), pos(&[0.0, 0.0, 0.0], &[0.0, 0.0], NA_TARGET)];
            let mut b = a.clone();
            b[1].hidden = junk;
            let (la, ga) = loss_and_grad(&a, &w, 2).unwrap();
            let (lb, gb) = loss_and_grad(&b, &w, 2).unwrap();
            prop_assert_eq!(la, lb);
            prop_assert_eq!(ga, gb);
        }

        #[test]
        fn appending_rows_keeps_existing_logits(
            h in prop::collection::vec(-5f32..5.0, 4),
            words in prop::collection::vec(-5f32..5.0, 3),
            rows in prop::collection::vec(-2f32..2.0, 8),
            extra in prop::collection::vec(-2f32..2.0, 4),
        ) {
            let mut emb = ToolkenEmbeddings { names: vec!["a".into(), "b".into()], dim: 4, matrix: rows, fingerprint: Fingerprint::default() };
            let before = fused_logits(&h, &words, &emb).unwrap();
            emb.push_row("c", &extra).unwrap();
            let after = fused_logits(&h, &words, &emb).unwrap();
            prop_assert_eq!(&after[..before.len()], &before[..]);
        }
    }

    fn gaussian_task(seed: u64) -> (DumpHeader, Vec<DumpRecord>, ToolkenVocab, DenseHead) {
        let d = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers: Vec<Vec<f32>> = (0..3)
            .map(|c| (0..d).map(|i| if i % 3 == c { 1.0 } else { -0.2 }).collect())
            .collect();
        let head = DenseHead::new(4, d, (0..4 * d).map(|_| noise.sample(&mut rng) as f32 * 0.1).collect()).unwrap();
        let mut vocab = ToolkenVocab::new(4);
        for n in ["t0", "t1", "t2"] {
            vocab.register(crate::vocab::ToolSpec::object(n)).unwrap();
        }
        let records = (0..300)
            .map(|i| {
                let c = i % 3;
                let hidden = centers[c].iter().map(|&x| x + noise.sample(&mut rng) as f32).collect();
                DumpRecord {
                    targets: vec![4 + c as u32],
                    hidden,
                }
            })
            .collect();
        let header = DumpHeader {
            dim: d,
            base_vocab_size: 4,
            fingerprint: Fingerprint([3; 32]),
            tools: vec!["t0".into(), "t1".into(), "t2".into()],
        };
        (header, records, vocab, head)
    }

    #[test]
    fn separable_gaussians() {
        let (header, records, vocab, head) = gaussian_task(11);
        let config = TrainConfig {
            batch_size: 32,
            seed: 4,
            ..Default::default()
        };
        let (emb, report) = fit(&header, &records, &vocab, &head, &config).unwrap();
        let acc = report.epochs[report.selected_epoch - 1].validation_accuracy;
        assert!(acc >= 0.99, "accuracy {acc}");
        assert!(report.selected_epoch <= 50);
        assert_eq!(emb.fingerprint, header.fingerprint);

        // nearest-centroid oracle on the same held-out split
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let (val, train) = order.split_at(60);
        let mut cent = vec![vec![0f64; 32]; 3];
        let mut counts = [0usize; 3];
        for &i in train {
            let c = (records[i].targets[0] - 4) as usize;
            counts[c] += 1;
            for (a, &x) in cent[c].iter_mut().zip(&records[i].hidden) {
                *a += x as f64;
            }
        }
        for (c, n) in cent.iter_mut().zip(counts) {
            c.iter_mut().for_each(|a| *a /= n as f64);
        }
        let hits = val
            .iter()
            .filter(|&&i| {
                let dist = |c: &Vec<f64>| {
                    c.iter()
                        .zip(&records[i].hidden)
                        .map(|(a, &b)| (a - b as f64).powi(2))
                        .sum::<f64>()
                };
                let best = (0..3)
                    .min_by(|&a, &b| dist(&cent[a]).total_cmp(&dist(&cent[b])))
                    .unwrap();
                best as u32 + 4 == records[i].targets[0]
            })
            .count();
        assert!(hits as f64 / val.len() as f64 >= 0.99);
    }

    #[test]
    fn small_step_descent_is_monotone() {
        let (header, records, vocab, head) = gaussian_task(2);
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.05,
            batch_size: 0,
            epochs: 20,
            patience: 0,
            ..Default::default()
        };
        let (_, report) = fit(&header, &records, &vocab, &head, &config).unwrap();
        for pair in report.epochs.windows(2) {
            assert!(pair[1].train_loss <= pair[0].train_loss);
        }
    }

    #[test]
    fn deterministic_checkpoint() {
        let (header, records, vocab, head) = gaussian_task(5);
        let config = TrainConfig {
            batch_size: 16,
            epochs: 5,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (i, threads) in [1, 2].into_iter().enumerate() {
            let (emb, _) = fit(
                &header,
                &records,
                &vocab,
                &head,
                &TrainConfig {
                    threads,
                    ..config.clone()
                },
            )
            .unwrap();
            let p = dir.path().join(format!("{i}.tken"));
            emb.save(&p).unwrap();
            bytes.push(std::fs::read(&p).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn empty_supervision_and_bad_config() {
        let (header, mut records, vocab, head) = gaussian_task(1);
        for r in &mut records {
            r.targets[0] = 1;
        }
        assert!(matches!(
            fit(&header, &records, &vocab, &head, &TrainConfig::default()),
            Err(Error::EmptySupervision)
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            fit(&header, &records, &vocab, &head, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let names: Vec<String> = (0..13).map(|i| format!("tool_{i}")).collect();
        let emb = ToolkenEmbeddings {
            names,
            dim: 64,
            matrix: (0..13 * 64).map(|_| rng.random_range(-3.0f32..3.0)).collect(),
            fingerprint: Fingerprint([7; 32]),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.tken");
        emb.save(&p).unwrap();
        let back = ToolkenEmbeddings::load(&p).unwrap();
        assert_eq!(back, emb);
        assert!(back
            .matrix
            .iter()
            .zip(&emb.matrix)
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let bytes = std::fs::read(&p).unwrap();
        let bad = dir.path().join("bad");
        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"TKHD");
        std::fs::write(&bad, &wrong).unwrap();
        assert!(matches!(
            ToolkenEmbeddings::load(&bad),
            Err(Error::CorruptHeader { .. })
        ));
        std::fs::write(&bad, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(ToolkenEmbeddings::load(&bad), Err(Error::Truncated { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        std::fs::write(&bad, &v2).unwrap();
        assert!(matches!(
            ToolkenEmbeddings::load(&bad),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn fingerprint_policy() {
        use crate::backend::{LmBackend, ToyLm};
        let a = ToyLm::from_seed(7);
        let b = ToyLm::from_seed(8);
        let emb = ToolkenEmbeddings::zeros(vec!["x".into()], 128, a.fingerprint());
        emb.check_fingerprint(&a.fingerprint(), true).unwrap();
        emb.check_fingerprint(&b.fingerprint(), false).unwrap();
        assert!(matches!(
            emb.check_fingerprint(&b.fingerprint(), true),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
