//! Modularized variational recurrent autoencoder over note events.
//!
//! Encoder: one GRU per attribute stream plus a context GRU fed by their
//! concatenated states; the four final states pass through an affine layer
//! into `μ` and `log σ²`.
//!
//! Decoder: three upper GRUs track the attribute streams, a context GRU
//! mixes them, and three lower GRUs (conditioned on `z`) feed one output head
//! each. With note unrolling a note is emitted in three sub-steps, `dT`, then
//! `T | dT`, then `P | dT, T`; each chosen attribute advances its upper GRU and
//! the context before the next sub-step. Without it, all three heads read the
//! same context.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, ModelKind};
use super::latent::LatentCode;
use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::nn::{init, Graph, GruCell, ParamId, ParamSet, Tensor, Var};
use crate::notes::{Attribute, IndexedSequence};
use crate::scalar::Scalar;

/// One embedding table per attribute, read by both encoder and decoder.
///
/// Each table has `V + 1` rows; row `V` is the decoder's start token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedEmbeddings {
    pub tables: [ParamId; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Affine {
            weight: params.add(format!("{name}.weight"), init::uniform(rng, &[output, input], bound))?,
            bias: params.add(format!("{name}.bias"), init::uniform(rng, &[output], bound))?,
        })
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        g.linear(w, b, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    /// `GRU_dT`, `GRU_T`, `GRU_P`.
    pub streams: [GruCell; 3],
    pub context: GruCell,
    /// `4H → H`.
    pub head: Affine,
    pub mu: Affine,
    pub log_var: Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderParams {
    pub upper: [GruCell; 3],
    pub context: GruCell,
    pub lower: [GruCell; 3],
    pub heads: [Affine; 3],
    /// Projects `z` to the initial states of all seven GRUs.
    pub init: Affine,
}

/// Symbolic encoder output inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub mu: Var,
    pub log_var: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Dt,
    Duration,
    Pitch,
}

/// Recurrent state of the decoder between sub-steps.
///
/// States are graph handles, so cloning a state branches the decode.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    upper: [Var; 3],
    context: Var,
    lower: [Var; 3],
    z: Var,
    rows: usize,
    started: bool,
    /// Embedded attribute values that their upper GRU has not consumed yet.
    pending: [Option<Var>; 3],
    /// `T` and `P` logits precomputed by the non-unrolled decoder.
    cached: [Option<Var>; 2],
    phase: Phase,
}

impl DecoderState {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn upper(&self) -> [Var; 3] {
        self.upper
    }

    pub fn context(&self) -> Var {
        self.context
    }

    pub fn lower(&self) -> [Var; 3] {
        self.lower
    }

    /// Copies the state's values into `to` as constants, so a long decode
    /// can drop the graph that produced them.
    fn carry_over<T: Scalar>(&self, from: &Graph<'_, T>, to: &mut Graph<'_, T>) -> DecoderState {
        let mut copy = |v: Var| to.input(from.value(v).clone());
        DecoderState {
            upper: self.upper.map(&mut copy),
            context: copy(self.context),
            lower: self.lower.map(&mut copy),
            z: copy(self.z),
            pending: self.pending.map(|p| p.map(&mut copy)),
            cached: self.cached.map(|c| c.map(&mut copy)),
            ..*self
        }
    }
}

/// How `z` is obtained during a teacher-forced pass.
#[derive(Debug, Clone)]
pub enum LatentMode<T> {
    /// `z = μ + σ ⊙ ε` with the given `[B × k]` noise.
    Sample(Tensor<T>),
    /// `z = μ`.
    Mean,
    /// `z = 0`; the encoder is not run.
    Zero,
}

#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    /// Scalar objective averaged over rows.
    pub loss: Var,
    /// Per-row reconstruction negative log-likelihood `[B × 1]`.
    pub recon: Var,
    /// Per-row KL `[B × 1]`, absent when the encoder is not run.
    pub kl: Option<Var>,
}

/// Decoding rule for generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

/// Teacher-forced diagnostics averaged over sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub recon: f64,
    pub kl: f64,
    /// Fraction of argmax predictions matching the target, per attribute.
    pub accuracy: [f64; 3],
}

impl Evaluation {
    pub fn min_accuracy(&self) -> f64 {
        self.accuracy.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct MusicVae<T> {
    config: ModelConfig,
    kind: ModelKind,
    params: ParamSet<T>,
    embeddings: SharedEmbeddings,
    encoder: EncoderParams,
    decoder: DecoderParams,
}

impl<T: Scalar> MusicVae<T> {
    /// Builds a freshly initialized model. The kind's architectural delta
    /// (note unrolling on or off) overrides the config flag.
    pub fn new(config: ModelConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        let config = kind.configure(config);
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = config.hidden;
        let k = config.latent;
        let embed = config.embed_dims();
        let names = ["dt", "duration", "pitch"];

        // A lookup is a linear map from a one-hot input, so its fan-in is 1.
        let mut tables = Vec::with_capacity(3);
        for a in 0..3 {
            tables.push(params.add(
                format!("emb.{}", names[a]),
                init::uniform(&mut rng, &[config.vocab_sizes[a] + 1, embed[a]], 1.0),
            )?);
        }
        let embeddings = SharedEmbeddings { tables: [tables[0], tables[1], tables[2]] };

        let mut cells = |params: &mut ParamSet<T>, prefix: &str, inputs: [usize; 3]| -> Result<[GruCell; 3]> {
            Ok([
                GruCell::new(params, &format!("{prefix}_dt"), inputs[0], h, &mut rng)?,
                GruCell::new(params, &format!("{prefix}_duration"), inputs[1], h, &mut rng)?,
                GruCell::new(params, &format!("{prefix}_pitch"), inputs[2], h, &mut rng)?,
            ])
        };
        let enc_streams = cells(&mut params, "enc.gru", embed)?;
        let upper = cells(&mut params, "dec.upper", embed)?;
        let lower = cells(&mut params, "dec.lower", [h + k; 3])?;

        let encoder = EncoderParams {
            streams: enc_streams,
            context: GruCell::new(&mut params, "enc.context", 3 * h, h, &mut rng)?,
            head: Affine::new(&mut params, "enc.head", 4 * h, h, &mut rng)?,
            mu: Affine::new(&mut params, "enc.mu", h, k, &mut rng)?,
            log_var: Affine::new(&mut params, "enc.log_var", h, k, &mut rng)?,
        };
        let decoder = DecoderParams {
            upper,
            context: GruCell::new(&mut params, "dec.context", 3 * h, h, &mut rng)?,
            lower,
            heads: [
                Affine::new(&mut params, "dec.out_dt", h, config.vocab_sizes[0], &mut rng)?,
                Affine::new(&mut params, "dec.out_duration", h, config.vocab_sizes[1], &mut rng)?,
                Affine::new(&mut params, "dec.out_pitch", h, config.vocab_sizes[2], &mut rng)?,
            ],
            init: Affine::new(&mut params, "dec.init", k, 7 * h, &mut rng)?,
        };
        Ok(MusicVae { config, kind, params, embeddings, encoder, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn embeddings(&self) -> SharedEmbeddings {
        self.embeddings
    }

    pub fn encoder_params(&self) -> EncoderParams {
        self.encoder
    }

    pub fn decoder_params(&self) -> DecoderParams {
        self.decoder
    }

    /// Same architecture and values in another scalar type.
    pub fn convert<U: Scalar>(&self) -> MusicVae<U> {
        MusicVae {
            config: self.config.clone(),
            kind: self.kind,
            params: self.params.convert(),
            embeddings: self.embeddings,
            encoder: self.encoder,
            decoder: self.decoder,
        }
    }

    fn zeros(&self, g: &mut Graph<'_, T>, rows: usize, cols: usize) -> Var {
        g.input(Tensor::zeros(&[rows, cols]))
    }

    fn embed(&self, g: &mut Graph<'_, T>, attribute: Attribute, indices: &[usize]) -> Result<Var> {
        let table = g.param(self.embeddings.tables[attribute.index()]);
        g.embed(table, indices)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        for a in Attribute::ALL {
            let size = self.config.vocab_sizes[a.index()];
            let m = match a {
                Attribute::Dt => &batch.dt,
                Attribute::Duration => &batch.duration,
                Attribute::Pitch => &batch.pitch,
            };
            if let Some(&index) = m.iter().find(|&&i| i >= size) {
                return Err(Error::IndexOutOfRange { attribute: a, index, size });
            }
        }
        Ok(())
    }

    /// Runs the modular encoder over a batch.
    pub fn encode_graph(&self, g: &mut Graph<'_, T>, batch: &Batch) -> Result<EncoderOutput> {
        self.check_batch(batch)?;
        let rows = batch.rows;
        let h = self.config.hidden;
        let mut states = [self.zeros(g, rows, h), self.zeros(g, rows, h), self.zeros(g, rows, h)];
        let mut context = self.zeros(g, rows, h);
        for t in 0..batch.length {
            for a in Attribute::ALL {
                let x = self.embed(g, a, &batch.column(a, t))?;
                states[a.index()] = self.encoder.streams[a.index()].step(g, states[a.index()], x)?;
            }
            let joined = g.concat(&states)?;
            context = self.encoder.context.step(g, context, joined)?;
        }
        let last = g.concat(&[states[0], states[1], states[2], context])?;
        let v = self.encoder.head.apply(g, last)?;
        let mu = self.encoder.mu.apply(g, v)?;
        let log_var = self.encoder.log_var.apply(g, v)?;
        Ok(EncoderOutput { mu, log_var })
    }

    /// Posterior `(μ, σ)` of one sequence.
    pub fn encode(&self, x: &IndexedSequence) -> Result<(Vec<T>, Vec<T>)> {
        if x.is_empty() {
            return Err(Error::EmptyInput("sequence"));
        }
        Ok(self.encode_many(std::slice::from_ref(x))?.remove(0))
    }

    /// Posterior `(μ, σ)` for many sequences, batching runs of equal length.
    pub fn encode_many(&self, xs: &[IndexedSequence]) -> Result<Vec<(Vec<T>, Vec<T>)>> {
        let half = T::from_f64_lossy(0.5);
        let mut out = Vec::with_capacity(xs.len());
        let mut i = 0;
        while i < xs.len() {
            let len = xs[i].len();
            let mut j = i;
            while j < xs.len() && xs[j].len() == len && j - i < 256 {
                j += 1;
            }
            let batch = Batch::from_sequences(&xs[i..j])?;
            let mut g = Graph::inference(&self.params);
            let enc = self.encode_graph(&mut g, &batch)?;
            let (mu, lv) = (g.value(enc.mu), g.value(enc.log_var));
            for r in 0..batch.rows {
                // Clamped so an extreme log-variance cannot underflow σ to zero.
                let sigma = lv.row(r).iter().map(|&s| (s * half).exp().max(T::min_positive_value())).collect();
                out.push((mu.row(r).to_vec(), sigma));
            }
            i = j;
        }
        Ok(out)
    }

    /// Initial decoder state: every GRU starts from a learned projection of `z`.
    pub fn init_decoder(&self, g: &mut Graph<'_, T>, z: Var) -> Result<DecoderState> {
        let zv = g.value(z);
        if zv.cols() != self.config.latent {
            return Err(Error::shape("init_decoder", format!("z has {} columns, expected {}", zv.cols(), self.config.latent)));
        }
        let rows = zv.rows();
        let h = self.config.hidden;
        let all = self.decoder.init.apply(g, z)?;
        let mut parts = [z; 7];
        for (i, p) in parts.iter_mut().enumerate() {
            *p = g.slice(all, i * h, h)?;
        }
        Ok(DecoderState {
            upper: [parts[0], parts[1], parts[2]],
            context: parts[3],
            lower: [parts[4], parts[5], parts[6]],
            z,
            rows,
            started: false,
            pending: [None; 3],
            cached: [None; 2],
            phase: Phase::Dt,
        })
    }

    fn expect_phase(st: &DecoderState, phase: Phase) -> Result<()> {
        if st.phase != phase {
            return Err(Error::Config(format!("decoder expected the {:?} sub-step, called for {phase:?}", st.phase)));
        }
        Ok(())
    }

    fn advance_context(&self, g: &mut Graph<'_, T>, st: &mut DecoderState) -> Result<()> {
        let joined = g.concat(&st.upper)?;
        st.context = self.decoder.context.step(g, st.context, joined)?;
        Ok(())
    }

    fn emit(&self, g: &mut Graph<'_, T>, st: &mut DecoderState, a: usize) -> Result<Var> {
        let input = g.concat(&[st.context, st.z])?;
        st.lower[a] = self.decoder.lower[a].step(g, st.lower[a], input)?;
        let skip = g.add(st.lower[a], st.upper[a])?;
        self.decoder.heads[a].apply(g, skip)
    }

    fn check_indices(&self, st: &DecoderState, a: Attribute, indices: &[usize]) -> Result<()> {
        if indices.len() != st.rows {
            return Err(Error::LengthMismatch(st.rows, indices.len()));
        }
        let size = self.config.vocab_sizes[a.index()];
        match indices.iter().find(|&&i| i >= size) {
            Some(&index) => Err(Error::IndexOutOfRange { attribute: a, index, size }),
            None => Ok(()),
        }
    }

    /// First sub-step of a note: logits over `dT`.
    pub fn dt_logits(&self, g: &mut Graph<'_, T>, st: &mut DecoderState) -> Result<Var> {
        Self::expect_phase(st, Phase::Dt)?;
        for a in Attribute::ALL {
            let i = a.index();
            let input = if !st.started {
                let start = vec![self.config.vocab_sizes[i]; st.rows];
                Some(self.embed(g, a, &start)?)
            } else {
                st.pending[i].take()
            };
            if let Some(x) = input {
                st.upper[i] = self.decoder.upper[i].step(g, st.upper[i], x)?;
            }
        }
        st.started = true;
        self.advance_context(g, st)?;
        let dt = self.emit(g, st, 0)?;
        if !self.config.note_unrolling {
            st.cached = [Some(self.emit(g, st, 1)?), Some(self.emit(g, st, 2)?)];
        }
        st.phase = Phase::Duration;
        Ok(dt)
    }

    /// Second sub-step: logits over `T` given the chosen `dT`.
    pub fn duration_logits(&self, g: &mut Graph<'_, T>, st: &mut DecoderState, dt: &[usize]) -> Result<Var> {
        Self::expect_phase(st, Phase::Duration)?;
        self.check_indices(st, Attribute::Dt, dt)?;
        let x = self.embed(g, Attribute::Dt, dt)?;
        st.phase = Phase::Pitch;
        if !self.config.note_unrolling {
            st.pending[0] = Some(x);
            return Ok(st.cached[0].expect("set by dt_logits"));
        }
        st.upper[0] = self.decoder.upper[0].step(g, st.upper[0], x)?;
        self.advance_context(g, st)?;
        self.emit(g, st, 1)
    }

    /// Third sub-step: logits over `P` given the chosen `dT` and `T`.
    pub fn pitch_logits(&self, g: &mut Graph<'_, T>, st: &mut DecoderState, duration: &[usize]) -> Result<Var> {
        Self::expect_phase(st, Phase::Pitch)?;
        self.check_indices(st, Attribute::Duration, duration)?;
        let x = self.embed(g, Attribute::Duration, duration)?;
        st.phase = Phase::Dt;
        if !self.config.note_unrolling {
            st.pending[1] = Some(x);
            return Ok(st.cached[1].expect("set by dt_logits"));
        }
        st.upper[1] = self.decoder.upper[1].step(g, st.upper[1], x)?;
        self.advance_context(g, st)?;
        self.emit(g, st, 2)
    }

    /// Records the chosen pitch; it reaches the upper pitch GRU at the next note.
    pub fn finish_note(&self, g: &mut Graph<'_, T>, st: &mut DecoderState, pitch: &[usize]) -> Result<()> {
        Self::expect_phase(st, Phase::Dt)?;
        self.check_indices(st, Attribute::Pitch, pitch)?;
        st.pending[2] = Some(self.embed(g, Attribute::Pitch, pitch)?);
        Ok(())
    }

    /// One full note: each attribute's logits followed by the `choose` callback's
    /// pick, which conditions the next sub-step.
    pub fn decode_step(
        &self,
        g: &mut Graph<'_, T>,
        st: &mut DecoderState,
        mut choose: impl FnMut(&Graph<'_, T>, Attribute, Var) -> Result<Vec<usize>>,
    ) -> Result<([Var; 3], [Vec<usize>; 3])> {
        let l_dt = self.dt_logits(g, st)?;
        let dt = choose(g, Attribute::Dt, l_dt)?;
        let l_dur = self.duration_logits(g, st, &dt)?;
        let dur = choose(g, Attribute::Duration, l_dur)?;
        let l_p = self.pitch_logits(g, st, &dur)?;
        let p = choose(g, Attribute::Pitch, l_p)?;
        self.finish_note(g, st, &p)?;
        Ok(([l_dt, l_dur, l_p], [dt, dur, p]))
    }

    /// Teacher-forced decode; returns per-row NLL `[B × 1]` and each step's logits.
    pub fn reconstruction_graph(&self, g: &mut Graph<'_, T>, batch: &Batch, z: Var) -> Result<(Var, Vec<[Var; 3]>)> {
        self.check_batch(batch)?;
        let mut st = self.init_decoder(g, z)?;
        let mut total: Option<Var> = None;
        let mut logits = Vec::with_capacity(batch.length);
        for t in 0..batch.length {
            let targets = [batch.column(Attribute::Dt, t), batch.column(Attribute::Duration, t), batch.column(Attribute::Pitch, t)];
            let (step_logits, _) = self.decode_step(g, &mut st, |_, a, _| Ok(targets[a.index()].clone()))?;
            for a in 0..3 {
                let ce = g.softmax_cross_entropy(step_logits[a], &targets[a])?;
                total = Some(match total {
                    Some(acc) => g.add(acc, ce)?,
                    None => ce,
                });
            }
            logits.push(step_logits);
        }
        Ok((total.expect("batch length is positive"), logits))
    }

    fn latent(&self, g: &mut Graph<'_, T>, batch: &Batch, mode: &LatentMode<T>) -> Result<(Var, Option<Var>)> {
        if let LatentMode::Zero = mode {
            return Ok((self.zeros(g, batch.rows, self.config.latent), None));
        }
        let enc = self.encode_graph(g, batch)?;
        let kl = g.kl_standard_normal(enc.mu, enc.log_var)?;
        let z = match mode {
            LatentMode::Sample(eps) => {
                if eps.rows() != batch.rows || eps.cols() != self.config.latent {
                    return Err(Error::shape("elbo", format!("noise {:?} for {} rows", eps.shape(), batch.rows)));
                }
                let half_lv = g.scale(enc.log_var, T::from_f64_lossy(0.5));
                let sigma = g.exp(half_lv);
                let eps = g.input(eps.clone());
                let noise = g.mul(sigma, eps)?;
                g.add(enc.mu, noise)?
            }
            _ => enc.mu,
        };
        Ok((z, Some(kl)))
    }

    /// `loss = mean_rows(recon + β·KL)`; with `β = 0` the KL is reported but
    /// not part of the objective.
    pub fn elbo_graph(&self, g: &mut Graph<'_, T>, batch: &Batch, beta: f64, mode: &LatentMode<T>) -> Result<ElboTerms> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("KL weight {beta} outside [0, 1]")));
        }
        let (z, kl) = self.latent(g, batch, mode)?;
        let (recon, _) = self.reconstruction_graph(g, batch, z)?;
        let mut total = g.sum(recon);
        if let (Some(kl), true) = (kl, beta > 0.0) {
            let kl_sum = g.sum(kl);
            let weighted = g.scale(kl_sum, T::from_f64_lossy(beta));
            total = g.add(total, weighted)?;
        }
        let loss = g.scale(total, T::one() / T::from_usize(batch.rows).expect("row count fits"));
        Ok(ElboTerms { loss, recon, kl })
    }

    /// The latent mode this model's kind trains with.
    pub fn training_mode(&self, rows: usize, rng: &mut impl Rng) -> LatentMode<T> {
        match self.kind {
            ModelKind::Proposed | ModelKind::NoUnrolling => LatentMode::Sample(standard_normal(rng, rows, self.config.latent)),
            ModelKind::Autoencoder => LatentMode::Mean,
            ModelKind::DecoderOnly => LatentMode::Zero,
        }
    }

    /// The latent mode used for deterministic evaluation.
    pub fn evaluation_mode(&self) -> LatentMode<T> {
        if self.kind.uses_encoder() {
            LatentMode::Mean
        } else {
            LatentMode::Zero
        }
    }

    /// Single-sequence `(loss, recon_nll, kl)` with explicit noise `eps`.
    pub fn elbo_loss(&self, x: &IndexedSequence, beta: f64, eps: &[T]) -> Result<(T, T, T)> {
        let batch = Batch::from_sequences([x])?;
        let noise = Tensor::from_vec(&[1, eps.len()], eps.to_vec())?;
        let mut g = Graph::inference(&self.params);
        let terms = self.elbo_graph(&mut g, &batch, beta, &LatentMode::Sample(noise))?;
        let kl = terms.kl.map(|k| g.value(k).item()).unwrap_or_else(T::zero);
        Ok((g.value(terms.loss).item(), g.value(terms.recon).item(), kl))
    }

    /// Teacher-forced reconstruction loss, KL and argmax accuracy, with `z = μ`.
    pub fn evaluate(&self, sequences: &[IndexedSequence]) -> Result<Evaluation> {
        let mut recon = 0.0;
        let mut kl = 0.0;
        let mut hits = [0usize; 3];
        let mut count = 0usize;
        let mode = self.evaluation_mode();
        for chunk in sequences.chunks(128) {
            let batch = Batch::from_sequences(chunk)?;
            let mut g = Graph::inference(&self.params);
            let (z, kl_var) = self.latent(&mut g, &batch, &mode)?;
            let (recon_var, logits) = self.reconstruction_graph(&mut g, &batch, z)?;
            recon += g.value(recon_var).to_f64().iter().sum::<f64>();
            if let Some(k) = kl_var {
                kl += g.value(k).to_f64().iter().sum::<f64>();
            }
            for (t, step) in logits.iter().enumerate() {
                for a in Attribute::ALL {
                    let predicted = argmax_rows(g.value(step[a.index()]));
                    hits[a.index()] += predicted.iter().zip(batch.column(a, t)).filter(|(p, t)| **p == *t).count();
                }
            }
            count += batch.rows * batch.length;
        }
        let n = sequences.len() as f64;
        Ok(Evaluation {
            recon: recon / n,
            kl: kl / n,
            accuracy: hits.map(|h| h as f64 / count as f64),
        })
    }

    /// Autoregressively decodes `length` notes for every row of `z` (`[B × k]`).
    pub fn generate_batch(&self, z: &Tensor<T>, length: usize, decoding: Decoding, rng: &mut impl Rng) -> Result<Vec<IndexedSequence>> {
        if length == 0 {
            return Err(Error::EmptyInput("generation length"));
        }
        if let Decoding::Sample { temperature } = decoding {
            if !(temperature > 0.0) {
                return Err(Error::Config(format!("temperature {temperature} must be positive")));
            }
        }
        let rows = z.rows();
        let mut g = Graph::inference(&self.params);
        let zv = g.input(Tensor::from_vec(&[rows, z.cols()], z.data().to_vec())?);
        let mut st = self.init_decoder(&mut g, zv)?;
        let mut out = vec![IndexedSequence::with_capacity(length); rows];
        for _ in 0..length {
            let (_, chosen) = self.decode_step(&mut g, &mut st, |g, _, logits| {
                let v = g.value(logits);
                Ok(match decoding {
                    Decoding::Greedy => argmax_rows(v),
                    Decoding::Sample { temperature } => sample_rows(v, temperature, rng),
                })
            })?;
            for (r, seq) in out.iter_mut().enumerate() {
                seq.push([chosen[0][r], chosen[1][r], chosen[2][r]]);
            }
            let mut fresh = Graph::inference(&self.params);
            st = st.carry_over(&g, &mut fresh);
            g = fresh;
        }
        Ok(out)
    }

    /// Generates one sequence from a latent code with its own seeded stream.
    pub fn generate(&self, code: &LatentCode<T>, length: usize, decoding: Decoding, seed: u64) -> Result<IndexedSequence> {
        let z = Tensor::from_vec(&[1, code.dim()], code.z.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.generate_batch(&z, length, decoding, &mut rng)?.remove(0))
    }
}

/// `[rows × k]` standard normal draws.
pub fn standard_normal<T: Scalar>(rng: &mut impl Rng, rows: usize, k: usize) -> Tensor<T> {
    let data = (0..rows * k)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(v)
        })
        .collect();
    Tensor::from_vec(&[rows, k], data).expect("shape and data agree")
}

/// Index of the largest entry per row; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn sample_rows<T: Scalar>(logits: &Tensor<T>, temperature: f64, rng: &mut impl Rng) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.as_f64() / temperature).collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (j, w) in weights.iter().enumerate() {
                if u < *w {
                    return j;
                }
                u -= w;
            }
            weights.len() - 1
        })
        .collect()
}
