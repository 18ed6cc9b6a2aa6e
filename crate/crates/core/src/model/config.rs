use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub latent: usize,
    pub embed_dt: usize,
    pub embed_duration: usize,
    pub embed_pitch: usize,
    /// Vocabulary sizes `[dT, T, P]`, excluding the reserved start token.
    pub vocab_sizes: [usize; 3],
    pub note_unrolling: bool,
    pub max_generation: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 512,
            latent: 128,
            embed_dt: 64,
            embed_duration: 64,
            embed_pitch: 128,
            vocab_sizes: [1, 1, 1],
            note_unrolling: true,
            max_generation: 100,
        }
    }
}

impl ModelConfig {
    /// Laptop-sized configuration used by the scaled experiments.
    pub fn desk() -> Self {
        ModelConfig { hidden: 64, latent: 16, embed_dt: 32, embed_duration: 32, embed_pitch: 32, ..Self::default() }
    }

    pub fn with_vocab_sizes(mut self, sizes: [usize; 3]) -> Self {
        self.vocab_sizes = sizes;
        self
    }

    pub fn embed_dims(&self) -> [usize; 3] {
        [self.embed_dt, self.embed_duration, self.embed_pitch]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("embed_dt", self.embed_dt),
            ("embed_duration", self.embed_duration),
            ("embed_pitch", self.embed_pitch),
            ("max_generation", self.max_generation),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        if self.latent > 4 * self.hidden {
            return Err(Error::Config(format!(
                "latent dimension {} exceeds the 4×hidden head input {}",
                self.latent,
                4 * self.hidden
            )));
        }
        Ok(())
    }
}

/// Which member of the model family is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// VAE with note unrolling and KL annealing.
    Proposed,
    /// VAE whose decoder emits the three attributes independently.
    NoUnrolling,
    /// Autoregressive decoder alone; the latent pathway is held at zero.
    DecoderOnly,
    /// Encoder and decoder with `z = μ` and no KL term in the loss.
    Autoencoder,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Proposed, ModelKind::NoUnrolling, ModelKind::DecoderOnly, ModelKind::Autoencoder];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Proposed => "proposed",
            ModelKind::NoUnrolling => "no-unrolling",
            ModelKind::DecoderOnly => "decoder-only",
            ModelKind::Autoencoder => "autoencoder",
        }
    }

    pub fn note_unrolling(self) -> bool {
        !matches!(self, ModelKind::NoUnrolling)
    }

    pub fn uses_encoder(self) -> bool {
        !matches!(self, ModelKind::DecoderOnly)
    }

    /// Whether the KL term is optimized (with annealing).
    pub fn optimizes_kl(self) -> bool {
        matches!(self, ModelKind::Proposed | ModelKind::NoUnrolling)
    }

    /// Applies the kind's architectural delta to a config.
    pub fn configure(self, mut config: ModelConfig) -> ModelConfig {
        config.note_unrolling = self.note_unrolling();
        config
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

/// Linear KL weight ramp `β = min(1, step / ramp_steps)`.
pub fn kl_anneal_weight(step: u64, ramp_steps: u64) -> f64 {
    if ramp_steps == 0 {
        return 1.0;
    }
    (step as f64 / ramp_steps as f64).min(1.0)
}
