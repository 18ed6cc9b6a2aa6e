//! Comparison systems built from the same model code: a decoder-only
//! sequence model, a deterministic autoencoder, and the VAE without note
//! unrolling.

use std::fmt;

use crate::error::Result;
use crate::model::{ModelConfig, ModelKind, MusicVae, TrainConfig, TrainObserver, TrainReport, Trainer};
use crate::notes::IndexedSequence;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    DecoderOnly,
    ModularizedAutoencoder,
    NoUnrollingVae,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] =
        [BaselineKind::DecoderOnly, BaselineKind::ModularizedAutoencoder, BaselineKind::NoUnrollingVae];

    pub fn model_kind(self) -> ModelKind {
        match self {
            BaselineKind::DecoderOnly => ModelKind::DecoderOnly,
            BaselineKind::ModularizedAutoencoder => ModelKind::Autoencoder,
            BaselineKind::NoUnrollingVae => ModelKind::NoUnrolling,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.model_kind().fmt(f)
    }
}

/// Builds and trains a model of the given kind from scratch.
pub fn train_kind<T: Scalar>(
    kind: ModelKind,
    data: &[IndexedSequence],
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(Trainer<T>, TrainReport)> {
    let model = MusicVae::new(model, kind, seed)?;
    let mut trainer = Trainer::new(model, train, seed)?;
    let report = trainer.fit(data, observer)?;
    Ok((trainer, report))
}

pub fn train_baseline<T: Scalar>(
    kind: BaselineKind,
    data: &[IndexedSequence],
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(Trainer<T>, TrainReport)> {
    train_kind(kind.model_kind(), data, model, train, seed, observer)
}

/// Autoregressive decoder with the latent pathway held at zero.
pub fn train_decoder_only<T: Scalar>(
    data: &[IndexedSequence],
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
) -> Result<(Trainer<T>, TrainReport)> {
    train_baseline(BaselineKind::DecoderOnly, data, model, train, seed, &mut ())
}

/// Encoder and decoder with `z = μ` and `β ≡ 0`.
pub fn train_autoencoder<T: Scalar>(
    data: &[IndexedSequence],
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
) -> Result<(Trainer<T>, TrainReport)> {
    train_baseline(BaselineKind::ModularizedAutoencoder, data, model, train, seed, &mut ())
}

/// The VAE with independent attribute heads.
pub fn run_ablation<T: Scalar>(
    data: &[IndexedSequence],
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
) -> Result<(Trainer<T>, TrainReport)> {
    train_baseline(BaselineKind::NoUnrollingVae, data, model, train, seed, &mut ())
}

/// Everything that differs between two models: configuration fields,
/// parameter names or shapes, and training behavior.
pub fn config_diff<T: Scalar>(a: &MusicVae<T>, b: &MusicVae<T>) -> Vec<String> {
    let mut diffs = Vec::new();
    let (ca, cb) = (a.config(), b.config());
    let fields: [(&str, String, String); 7] = [
        ("hidden", ca.hidden.to_string(), cb.hidden.to_string()),
        ("latent", ca.latent.to_string(), cb.latent.to_string()),
        ("embed", format!("{:?}", ca.embed_dims()), format!("{:?}", cb.embed_dims())),
        ("vocab_sizes", format!("{:?}", ca.vocab_sizes), format!("{:?}", cb.vocab_sizes)),
        ("note_unrolling", ca.note_unrolling.to_string(), cb.note_unrolling.to_string()),
        ("max_generation", ca.max_generation.to_string(), cb.max_generation.to_string()),
        ("kind", a.kind().to_string(), b.kind().to_string()),
    ];
    for (name, x, y) in fields {
        if x != y {
            diffs.push(format!("{name}: {x} -> {y}"));
        }
    }
    let shapes = |m: &MusicVae<T>| -> Vec<(String, Vec<usize>)> {
        m.params().iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect()
    };
    if shapes(a) != shapes(b) {
        diffs.push("parameters".into());
    }
    let (ka, kb) = (a.kind(), b.kind());
    if ka.uses_encoder() != kb.uses_encoder() {
        diffs.push(format!("latent pathway: {} -> {}", latent_desc(ka), latent_desc(kb)));
    } else if ka.optimizes_kl() != kb.optimizes_kl() {
        diffs.push(format!("objective: {} -> {}", objective_desc(ka), objective_desc(kb)));
    }
    diffs
}

fn latent_desc(kind: ModelKind) -> &'static str {
    if kind.uses_encoder() {
        "encoded"
    } else {
        "zero"
    }
}

fn objective_desc(kind: ModelKind) -> &'static str {
    if kind.optimizes_kl() {
        "annealed ELBO with sampled z"
    } else {
        "reconstruction with z = mean"
    }
}
