//! Self-contained checkpoints: configuration, kind, vocabularies, training
//! position, parameters and optimizer accumulators.

use std::path::Path;

use super::config::{ModelConfig, ModelKind};
use super::train::{TrainConfig, TrainState};
use super::vae::MusicVae;
use crate::container::{Container, Payload};
use crate::error::{Error, Result};
use crate::notes::Vocabularies;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MLDCKPT\0";

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: MusicVae<T>,
    pub vocabs: Option<Vocabularies>,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub state: TrainState,
}

fn to_toml<S: serde::Serialize>(value: &S) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Container(format!("serializing settings: {e}")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(CHECKPOINT_MAGIC);
        c.push_text("model.kind", self.model.kind().name())?;
        c.push_text("model.config", to_toml(self.model.config())?)?;
        c.push_text("train.config", to_toml(&self.train_config)?)?;
        c.push("train.seed", vec![1], Payload::I64(vec![self.seed as i64]))?;
        let s = self.state;
        c.push("train.state", vec![3], Payload::I64(vec![s.step as i64, s.epoch as i64, s.batch as i64]))?;
        if let Some(v) = &self.vocabs {
            c.push_text("vocab", v.to_text())?;
        }
        for (_, p) in self.model.params().iter() {
            c.push_tensor(format!("param.{}", p.name), &p.value)?;
            c.push_tensor(format!("accum.{}", p.name), &p.accumulator)?;
        }
        Ok(c)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    /// Rebuilds the model from its stored configuration and checks every
    /// stored tensor against the expected shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(CHECKPOINT_MAGIC, bytes)?;
        let kind: ModelKind = c.require("model.kind")?.as_text()?.parse()?;
        let config: ModelConfig = toml::from_str(c.require("model.config")?.as_text()?)
            .map_err(|e| Error::CheckpointMismatch(format!("model config: {e}")))?;
        let train_config: TrainConfig = toml::from_str(c.require("train.config")?.as_text()?)
            .map_err(|e| Error::CheckpointMismatch(format!("train config: {e}")))?;
        let seed = match c.require("train.seed")?.as_i64()? {
            [s] => *s as u64,
            _ => return Err(Error::Container("train.seed must hold one value".into())),
        };
        let state = match c.require("train.state")?.as_i64()? {
            [step, epoch, batch] => TrainState { step: *step as u64, epoch: *epoch as u64, batch: *batch as u64 },
            _ => return Err(Error::Container("train.state must hold three values".into())),
        };
        let vocabs = c.get("vocab").map(|e| e.as_text().and_then(Vocabularies::from_text)).transpose()?;
        if let Some(v) = &vocabs {
            if v.sizes() != config.vocab_sizes {
                return Err(Error::CheckpointMismatch(format!(
                    "vocabulary sizes {:?} vs model {:?}",
                    v.sizes(),
                    config.vocab_sizes
                )));
            }
        }

        let mut model = MusicVae::<T>::new(config, kind, 0)?;
        let expected = model.params().len();
        for p in model.params_mut().iter_mut() {
            for (prefix, slot) in [("param", &mut p.value), ("accum", &mut p.accumulator)] {
                let name = format!("{prefix}.{}", p.name);
                let entry = c.get(&name).ok_or_else(|| Error::CheckpointMismatch(format!("missing {name}")))?;
                if entry.dims != slot.shape() {
                    return Err(Error::CheckpointMismatch(format!(
                        "{name} has shape {:?}, config expects {:?}",
                        entry.dims,
                        slot.shape()
                    )));
                }
                *slot = entry.to_tensor()?;
            }
        }
        let stored = c.entries.iter().filter(|e| e.name.starts_with("param.")).count();
        if stored != expected {
            return Err(Error::CheckpointMismatch(format!("{stored} stored parameters, model has {expected}")));
        }
        Ok(Checkpoint { model, vocabs, train_config, seed, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
