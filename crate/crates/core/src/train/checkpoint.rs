//! Binary checkpoint format: `b"TETC"`, a little-endian `u32` version, a
//! `u32`-length-prefixed JSON metadata block, then raw little-endian `f32`
//! parameter blobs in store order followed by the Adam first and second
//! moments in the same order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::CheckpointError;
use crate::kg::KnowledgeGraph;
use crate::model::TetModel;
use crate::nn::{Adam, AdamConfig, ParameterStore, Tensor};

pub const MAGIC: &[u8; 4] = b"TETC";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 digests of the label tables a model was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFingerprints {
    pub entities: String,
    pub relations: String,
    pub types: String,
    pub classes: String,
}

impl VocabFingerprints {
    pub fn of(kg: &KnowledgeGraph) -> Self {
        let v = kg.vocab();
        Self {
            entities: v.entities.fingerprint(),
            relations: v.relations.fingerprint(),
            types: v.types.fingerprint(),
            classes: v.classes.fingerprint(),
        }
    }

    pub fn check(&self, kg: &KnowledgeGraph) -> Result<(), CheckpointError> {
        let other = Self::of(kg);
        let pairs = [
            ("entity", &self.entities, &other.entities),
            ("relation", &self.relations, &other.relations),
            ("type", &self.types, &other.types),
            ("class", &self.classes, &other.classes),
        ];
        for (table, a, b) in pairs {
            if a != b {
                return Err(CheckpointError::FingerprintMismatch { table });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub fingerprints: VocabFingerprints,
    pub params: ParameterStore<f32>,
    pub optimizer: Adam<f32>,
    pub epochs_completed: usize,
    pub best_mrr: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: TrainConfig,
    fingerprints: VocabFingerprints,
    tensors: Vec<TensorMeta>,
    adam: AdamConfig,
    adam_steps: u64,
    epochs_completed: usize,
    best_mrr: Option<f64>,
    best_epoch: Option<usize>,
}

impl Checkpoint {
    /// Rebuilds the model described by the stored configuration on `kg` and
    /// checks that every parameter name and shape matches.
    pub fn restore(&self, kg: &KnowledgeGraph) -> Result<TetModel, CheckpointError> {
        self.fingerprints.check(kg)?;
        let mut scratch = ParameterStore::<f32>::new();
        let model = TetModel::new(kg, self.config.model_config(), &mut scratch, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(CheckpointError::Metadata)?;
        let expected: Vec<(&str, &[usize])> = scratch.iter().map(|(_, n, t)| (n, t.shape())).collect();
        let found: Vec<(&str, &[usize])> = self.params.iter().map(|(_, n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(CheckpointError::Metadata(
                "parameter layout does not match the stored configuration".into(),
            ));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            config: self.config.clone(),
            fingerprints: self.fingerprints.clone(),
            tensors: self
                .params
                .iter()
                .map(|(_, name, t)| TensorMeta {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            adam: self.optimizer.config(),
            adam_steps: self.optimizer.t(),
            epochs_completed: self.epochs_completed,
            best_mrr: self.best_mrr,
            best_epoch: self.best_epoch,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serialises");
        let mut out = Vec::with_capacity(12 + json.len() + 12 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let blobs = self
            .params
            .iter()
            .map(|(_, _, t)| t.data())
            .chain(self.optimizer.first_moments().iter().map(Vec::as_slice))
            .chain(self.optimizer.second_moments().iter().map(Vec::as_slice));
        for blob in blobs {
            for x in blob {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::NotACheckpoint);
        }
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = cur.u32("metadata length")? as usize;
        let meta: Metadata = serde_json::from_slice(cur.take(len, "metadata")?)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

        let mut params = ParameterStore::new();
        for t in &meta.tensors {
            let n: usize = t.shape.iter().product();
            let data = cur.f32s(n, &t.name)?;
            params.insert(t.name.clone(), Tensor::new(t.shape.clone(), data));
        }
        let sizes: Vec<usize> = meta.tensors.iter().map(|t| t.shape.iter().product()).collect();
        let m = sizes
            .iter()
            .map(|&n| cur.f32s(n, "first moments"))
            .collect::<Result<Vec<_>, _>>()?;
        let v = sizes
            .iter()
            .map(|&n| cur.f32s(n, "second moments"))
            .collect::<Result<Vec<_>, _>>()?;
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Metadata(format!(
                "{} trailing bytes after the last blob",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            config: meta.config,
            fingerprints: meta.fingerprints,
            params,
            optimizer: Adam::from_state(meta.adam, meta.adam_steps, m, v),
            epochs_completed: meta.epochs_completed,
            best_mrr: meta.best_mrr,
            best_epoch: meta.best_epoch,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated(format!("file ends inside {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, CheckpointError> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ck.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

/// Reads a checkpoint without checking it against a dataset.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Reads a checkpoint and refuses it unless it was trained on `kg`'s
/// vocabularies.
pub fn load_checkpoint(path: &Path, kg: &KnowledgeGraph) -> Result<Checkpoint, CheckpointError> {
    let ck = read_checkpoint(path)?;
    ck.fingerprints.check(kg)?;
    Ok(ck)
}
