//! Training loop: teacher-forced ELBO, RMSprop, KL annealing, metrics log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::kl_anneal_weight;
use super::vae::{Evaluation, MusicVae};
use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::nn::{Graph, RmsProp};
use crate::notes::IndexedSequence;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Steps over which β ramps linearly from 0 to 1.
    pub kl_ramp_steps: u64,
    pub epochs: u64,
    pub max_steps: Option<u64>,
    /// Stop once teacher-forced accuracy on the training set reaches this
    /// value for every attribute.
    pub early_stop_accuracy: Option<f64>,
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-4,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            kl_ramp_steps: 2000,
            epochs: 1,
            max_steps: None,
            early_stop_accuracy: None,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, epochs and eval_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_eps > 0.0) {
            return Err(Error::Config("learning_rate and rms_eps must be positive, rms_decay in [0, 1)".into()));
        }
        if let Some(a) = self.early_stop_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("early_stop_accuracy {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsProp {
        RmsProp { learning_rate: self.learning_rate, decay: self.rms_decay, eps: self.rms_eps }
    }
}

/// Position in the training schedule; enough to resume mid-epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u64,
    /// Batches of the current epoch already consumed.
    pub batch: u64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub beta: f64,
    /// Mean per-sequence reconstruction NLL.
    pub recon_nll: f64,
    /// Mean per-sequence KL; zero when there is no latent.
    pub kl: f64,
    pub total: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,beta,recon_nll,kl,total";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.beta, self.recon_nll, self.kl, self.total)
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Malformed(format!("metrics line {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(MetricsRow {
            step: f[0].parse().map_err(|_| bad())?,
            beta: num(f[1])?,
            recon_nll: num(f[2])?,
            kl: num(f[3])?,
            total: num(f[4])?,
        })
    }
}

/// Append-only CSV metrics file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates the file, or appends to it when it already has a header.
    pub fn open(path: &Path) -> Result<Self> {
        let exists = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter { path: path.to_path_buf(), out: BufWriter::new(file) };
        if !exists {
            writeln!(w.out, "{}", MetricsRow::HEADER).map_err(|e| Error::io(path, e))?;
        }
        Ok(w)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a metrics CSV written by [`MetricsWriter`].
pub fn read_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MetricsRow::HEADER) {
        return Err(Error::Malformed("metrics file lacks the expected header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::from_csv).collect()
}

/// Mixes a base seed with a counter (splitmix64 finalizer).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Callbacks invoked by [`Trainer::fit`].
pub trait TrainObserver<T> {
    fn on_step(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _trainer: &Trainer<T>) -> Result<()> {
        Ok(())
    }
}

impl<T> TrainObserver<T> for () {}

/// Why [`Trainer::fit`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Epochs,
    MaxSteps,
    Converged,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub stop: StopReason,
    /// Evaluation at the last check, when early stopping is enabled.
    pub last_evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: MusicVae<T>,
    pub config: TrainConfig,
    pub seed: u64,
    pub state: TrainState,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: MusicVae<T>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { model, config, seed, state: TrainState::default() })
    }

    /// The KL weight for the next step.
    pub fn beta(&self) -> f64 {
        if self.model.kind().optimizes_kl() {
            kl_anneal_weight(self.state.step, self.config.kl_ramp_steps)
        } else {
            0.0
        }
    }

    /// One optimizer update on `batch`.
    pub fn step(&mut self, batch: &Batch) -> Result<MetricsRow> {
        let step = self.state.step;
        let beta = self.beta();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, step));
        let mode = self.model.training_mode(batch.rows, &mut rng);
        let (row, grads) = {
            let mut g = Graph::new(self.model.params());
            let terms = self.model.elbo_graph(&mut g, batch, beta, &mode)?;
            let rows = batch.rows as f64;
            let recon = g.value(terms.recon).to_f64().iter().sum::<f64>() / rows;
            let kl = terms.kl.map(|k| g.value(k).to_f64().iter().sum::<f64>() / rows).unwrap_or(0.0);
            let total = g.value(terms.loss).item().as_f64();
            let row = MetricsRow { step, beta, recon_nll: recon, kl, total };
            if !total.is_finite() || !recon.is_finite() || !kl.is_finite() {
                return Err(self.non_finite(batch, format!("loss {total}, recon {recon}, kl {kl}")));
            }
            let grads = g.backward(terms.loss)?;
            (row, grads)
        };
        if !grads.is_finite() {
            return Err(self.non_finite(batch, "non-finite gradient".into()));
        }
        let params = self.model.params_mut();
        params.zero_grad();
        params.accumulate(&grads)?;
        self.config.optimizer().update(params)?;
        self.state.step += 1;
        Ok(row)
    }

    fn non_finite(&self, batch: &Batch, detail: String) -> Error {
        Error::NonFiniteLoss {
            step: self.state.step,
            batch: self.state.batch as usize,
            detail: format!("{detail}; sequence ids {:?}", batch.ids),
        }
    }

    /// Batch order of an epoch; a pure function of seed and epoch.
    pub fn epoch_order(&self, count: usize, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ SHUFFLE_STREAM, epoch)));
        order
    }

    /// Trains until `config.epochs` epochs, `config.max_steps` steps, or
    /// early-stop convergence. Resumes from `self.state`.
    pub fn fit(&mut self, data: &[IndexedSequence], observer: &mut dyn TrainObserver<T>) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        for s in data {
            s.check(self.model.config().vocab_sizes)?;
        }
        let mut rows = Vec::new();
        let mut last_evaluation = None;
        let bs = self.config.batch_size;
        let batches_per_epoch = data.len().div_ceil(bs) as u64;
        while self.state.epoch < self.config.epochs {
            let order = self.epoch_order(data.len(), self.state.epoch);
            while self.state.batch < batches_per_epoch {
                if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
                    return Ok(TrainReport { rows, stop: StopReason::MaxSteps, last_evaluation });
                }
                let start = self.state.batch as usize * bs;
                let ids = &order[start..(start + bs).min(data.len())];
                let mut batch = Batch::from_sequences(ids.iter().map(|&i| &data[i]))?;
                batch.ids = ids.to_vec();
                let row = self.step(&batch)?;
                self.state.batch += 1;
                observer.on_step(&row)?;
                rows.push(row);
                if let Some(target) = self.config.early_stop_accuracy {
                    if self.state.step % self.config.eval_every == 0 {
                        let eval = self.model.evaluate(data)?;
                        last_evaluation = Some(eval);
                        if eval.min_accuracy() >= target {
                            log::info!("converged at step {} (accuracy {:?})", self.state.step, eval.accuracy);
                            return Ok(TrainReport { rows, stop: StopReason::Converged, last_evaluation });
                        }
                    }
                }
            }
            self.state.epoch += 1;
            self.state.batch = 0;
            observer.on_epoch(self)?;
        }
        Ok(TrainReport { rows, stop: StopReason::Epochs, last_evaluation })
    }
}
