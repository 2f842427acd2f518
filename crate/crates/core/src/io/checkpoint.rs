use std::path::Path;

use crate::error::{Error, Result};
use crate::io::bundle::{read_file, write_file, MatrixBundle, CHECKPOINT_MAGIC};
use crate::io::config::{config_from_meta, parse_train_config, train_config_entries};
use crate::model::{ModelParams, PARAM_NAMES};
use crate::train::{OptimizerState, TrainConfig, EPOCH_STREAM_BASE};

/// Training state sufficient to resume bit-for-bit.
///
/// Stored as a `RICACP01` bundle: `param.<name>` and `opt.<name>` for every
/// parameter tensor, `loss_history`, and metadata `epoch`, `rng_seed`,
/// `rng_stream`, `rng_word_pos`, and `config.<key>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub history: Vec<f64>,
    pub config: TrainConfig,
}

impl Checkpoint {
    /// Errors unless the stored shapes fit `cfg`.
    pub fn check_compatible(&self, cfg: &TrainConfig) -> Result<()> {
        let p = &self.params;
        let pairs = [
            ("n_components", p.n_sources(), cfg.n_components),
            ("hidden_units", p.n_hidden(), cfg.hidden_units),
            ("mlp_hidden", p.n_mlp_hidden(), cfg.mlp_hidden),
        ];
        for (key, have, want) in pairs {
            if have != want {
                return Err(Error::ConfigMismatch(format!(
                    "{key} is {have} in checkpoint but {want} in config"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> Result<MatrixBundle> {
        let mut b = MatrixBundle::new();
        for (name, m) in self.params.tensors() {
            b.insert_matrix(format!("param.{name}"), m)?;
        }
        for (name, m) in self.optimizer.mean_square.tensors() {
            b.insert_matrix(format!("opt.{name}"), m)?;
        }
        b.insert_vector("loss_history", &self.history)?;
        let epoch = self.optimizer.epoch;
        b.set_meta("epoch", epoch.to_string());
        b.set_meta("rng_seed", self.optimizer.seed.to_string());
        b.set_meta("rng_stream", (EPOCH_STREAM_BASE + epoch as u64).to_string());
        b.set_meta("rng_word_pos", "0");
        for (k, v) in train_config_entries(&self.config) {
            b.set_meta(format!("config.{k}"), v);
        }
        Ok(b)
    }

    pub fn from_bundle(b: &MatrixBundle) -> Result<Self> {
        let config = parse_train_config(&config_from_meta(b.metadata.iter()))?;
        let mut params = ModelParams::zeros(config.n_components, config.hidden_units, config.mlp_hidden);
        let mut mean_square = params.clone();
        for name in PARAM_NAMES {
            for (prefix, target) in [("param", &mut params), ("opt", &mut mean_square)] {
                let key = format!("{prefix}.{name}");
                let m = b.matrix(&key)?;
                let slot = target.tensor_mut(name).expect("known parameter name");
                if m.shape() != slot.shape() {
                    return Err(Error::ConfigMismatch(format!(
                        "{key} is {:?} but config implies {:?}",
                        m.shape(),
                        slot.shape()
                    )));
                }
                *slot = m;
            }
        }
        let meta_num = |key: &str| -> Result<u64> {
            b.meta(key)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::Malformed(format!("checkpoint `{key}` is not an integer")))
        };
        let optimizer = OptimizerState {
            mean_square,
            epoch: meta_num("epoch")? as usize,
            seed: meta_num("rng_seed")?,
        };
        let history = b.vector("loss_history")?;
        Ok(Self {
            params,
            optimizer,
            history,
            config,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.to_bundle()?.encode(CHECKPOINT_MAGIC)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_bundle(&MatrixBundle::decode(bytes, CHECKPOINT_MAGIC)?)
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_file(path.as_ref(), &ckpt.encode()?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::decode(&read_file(path)?).map_err(|e| match e {
        Error::BadMagic(m) => Error::BadMagic(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes each checkpoint to a fixed path, replacing the previous one.
pub struct FileSink {
    pub path: std::path::PathBuf,
    pub saved: usize,
}

impl FileSink {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        Self {
            path: path.into(),
            saved: 0,
        }
    }
}

impl crate::train::CheckpointSink for FileSink {
    fn save(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        write_checkpoint(&self.path, checkpoint)?;
        self.saved += 1;
        Ok(())
    }
}
