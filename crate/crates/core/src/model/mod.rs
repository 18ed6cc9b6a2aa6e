//! The variational model, its configuration, training and checkpoints.

mod checkpoint;
mod config;
mod latent;
mod train;
mod vae;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{kl_anneal_weight, ModelConfig, ModelKind};
pub use latent::{kl_to_standard_normal, sample_latent, LatentCode};
pub use train::{
    derive_seed, read_metrics, MetricsRow, MetricsWriter, StopReason, TrainConfig, TrainObserver, TrainReport,
    TrainState, Trainer,
};
pub use vae::{
    argmax_rows, standard_normal, Affine, DecoderParams, DecoderState, Decoding, ElboTerms, EncoderOutput,
    EncoderParams, Evaluation, LatentMode, MusicVae, SharedEmbeddings,
};
