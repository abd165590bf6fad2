//! On-disk model snapshots.
//!
//! A checkpoint is a directory:
//!
//! ```text
//! manifest.json    parameter names, shapes, byte offsets, dims, best-dev record
//! params.bin       every parameter as little-endian f64, concatenated in manifest order
//! config.toml      the training configuration
//! vocab.txt        one token per line
//! acts.txt         one label per line
//! sentiments.txt   one label per line
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Vocab};
use crate::error::{Error, Result};
use crate::model::{CoGat, ModelDims};
use crate::train::config::TrainConfig;
use crate::train::trainer::EpochRecord;

const FORMAT: &str = "cogat-checkpoint-1";
const DTYPE: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub data: String,
    pub dims: ModelDims,
    pub seed: u64,
    pub dev_protocol: String,
    pub best_dev: Option<EpochRecord>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: CoGat,
    pub vocab: Vocab,
    pub acts: LabelSet,
    pub sentiments: LabelSet,
    /// How the dev set was obtained.
    pub dev_protocol: String,
    pub best_dev: Option<EpochRecord>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut data = Vec::with_capacity(self.model.params().num_scalars() * 8);
        let mut tensors = Vec::new();
        for p in self.model.params().iter() {
            let offset = data.len();
            for v in p.tensor.values() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset,
                bytes: data.len() - offset,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            dtype: DTYPE.into(),
            data: "params.bin".into(),
            dims: self.model.dims(),
            seed: self.config.seed,
            dev_protocol: self.dev_protocol.clone(),
            best_dev: self.best_dev.clone(),
            tensors,
        };
        fs::write(dir.join("params.bin"), data)?;
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        fs::write(dir.join("config.toml"), self.config.to_toml_string())?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        self.acts.save(&dir.join("acts.txt"))?;
        self.sentiments.save(&dir.join("sentiments.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != FORMAT || manifest.dtype != DTYPE {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} / {}",
                manifest.format, manifest.dtype
            )));
        }
        let config = TrainConfig::from_toml_str(&fs::read_to_string(dir.join("config.toml"))?)?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let acts = LabelSet::load(&dir.join("acts.txt"))?;
        let sentiments = LabelSet::load(&dir.join("sentiments.txt"))?;
        let dims = manifest.dims;
        if dims.vocab != vocab.len()
            || dims.acts != acts.len()
            || dims.sentiments != sentiments.len()
        {
            return Err(Error::Checkpoint(
                "manifest dims disagree with vocabulary or label files".into(),
            ));
        }
        let data = fs::read(dir.join(&manifest.data))?;
        let mut model = CoGat::new(config.model_config(), dims, config.seed)?;
        let mut params = model.params().clone();
        if params.len() != manifest.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} tensors, model has {}",
                manifest.tensors.len(),
                params.len()
            )));
        }
        for (p, entry) in params.iter_mut().zip(&manifest.tensors) {
            if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model parameter {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.tensor.shape()
                )));
            }
            let end = entry.offset + entry.bytes;
            if entry.bytes != p.tensor.numel() * 8 || end > data.len() {
                return Err(Error::Checkpoint(format!(
                    "bad byte range for tensor {}",
                    entry.name
                )));
            }
            for (v, chunk) in p
                .tensor
                .values_mut()
                .iter_mut()
                .zip(data[entry.offset..end].chunks_exact(8))
            {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        model.load_params(params)?;
        Ok(Self {
            config,
            model,
            vocab,
            acts,
            sentiments,
            dev_protocol: manifest.dev_protocol,
            best_dev: manifest.best_dev,
        })
    }
}
