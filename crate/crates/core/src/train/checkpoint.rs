//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DBND"                      magic
//! u32                         format version
//! u64 + bytes                 metadata, UTF-8 JSON
//! u64                         tensor count
//! per tensor:
//!   u64 + bytes               name
//!   u64                       rank
//!   u64 × rank                extents
//!   f64 × numel               values
//! ```
//!
//! Model parameters come first in name order, followed by the Adam moments
//! as `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dualbind_autodiff::TensorData;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};

pub const MAGIC: [u8; 4] = *b"DBND";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position, as a decimal string (it is 128 bits wide).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |m: &str| Error::CorruptCheckpoint(format!("rng state: {m}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed is not 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(
            self.word_pos
                .parse()
                .map_err(|_| bad("bad word position"))?,
        );
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    model_config: ModelConfig,
    train_config: Option<TrainConfig>,
    epoch: usize,
    adam_step: u64,
    adam_skipped: u64,
    has_moments: bool,
    rng: Option<RngState>,
    val_rmse: Option<f64>,
    created_unix_secs: u64,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: Option<TrainConfig>,
    /// Completed epochs.
    pub epoch: usize,
    pub adam: Option<AdamState>,
    pub rng: Option<RngState>,
    pub val_rmse: Option<f64>,
    pub created_unix_secs: u64,
    pub config_hash: String,
}

/// SHA-256 over the JSON of both configurations.
pub fn config_hash(model: &ModelConfig, train: Option<&TrainConfig>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model).expect("model config serializes"));
    if let Some(t) = train {
        h.update(serde_json::to_vec(t).expect("train config serializes"));
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    /// A checkpoint of bare weights, with no optimizer or generator state.
    pub fn from_model(model: Model) -> Self {
        let config_hash = config_hash(&model.config, None);
        Checkpoint {
            model,
            train_config: None,
            epoch: 0,
            adam: None,
            rng: None,
            val_rmse: None,
            created_unix_secs: now_secs(),
            config_hash,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            model_config: self.model.config.clone(),
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            adam_step: self.adam.as_ref().map_or(0, |a| a.step),
            adam_skipped: self.adam.as_ref().map_or(0, |a| a.skipped),
            has_moments: self.adam.is_some(),
            rng: self.rng.clone(),
            val_rmse: self.val_rmse,
            created_unix_secs: self.created_unix_secs,
            config_hash: self.config_hash.clone(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut tensors: Vec<(String, &[usize], &[f64])> = Vec::new();
        for (name, t) in &self.model.params.tensors {
            tensors.push((name.clone(), &t.shape, &t.data));
        }
        if let Some(adam) = &self.adam {
            for (prefix, moments) in [("adam.m/", &adam.m), ("adam.v/", &adam.v)] {
                for ((name, t), data) in self.model.params.tensors.iter().zip(moments) {
                    tensors.push((format!("{prefix}{name}"), &t.shape, data));
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::BadVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta_len = r.len_field("metadata length")?;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        let shapes = meta.model_config.param_shapes();
        let expected = shapes.len() * if meta.has_moments { 3 } else { 1 };
        let count = r.u64("tensor count")? as usize;
        if count != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "{count} tensors stored, metadata implies {expected}"
            )));
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.len_field("tensor name length")?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.len_field("tensor rank")?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("tensor extent")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: extents overflow")))?;
            let raw = r.take(numel, "tensor data")?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors
                .insert(name.clone(), TensorData::new(shape, data)?)
                .is_some()
            {
                return Err(Error::CorruptCheckpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let mut params = BTreeMap::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for name in shapes.keys() {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
            if meta.has_moments {
                for (prefix, dst) in [("adam.m/", &mut m), ("adam.v/", &mut v)] {
                    let key = format!("{prefix}{name}");
                    let mt = tensors
                        .remove(&key)
                        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {key}")))?;
                    if mt.shape != t.shape {
                        return Err(Error::CorruptCheckpoint(format!(
                            "{key} has the wrong shape"
                        )));
                    }
                    dst.push(mt.data);
                }
            }
            params.insert(name.clone(), t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::CorruptCheckpoint(format!(
                "unexpected tensor {extra}"
            )));
        }
        let model = Model::from_parts(meta.model_config, ModelParams { tensors: params })?;
        Ok(Checkpoint {
            model,
            train_config: meta.train_config,
            epoch: meta.epoch,
            adam: meta.has_moments.then_some(AdamState {
                step: meta.adam_step,
                m,
                v,
                skipped: meta.adam_skipped,
            }),
            rng: meta.rng,
            val_rmse: meta.val_rmse,
            created_unix_secs: meta.created_unix_secs,
            config_hash: meta.config_hash,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    /// A length that must fit in the remaining input.
    fn len_field(&mut self, what: &'static str) -> Result<usize> {
        let n = self.u64(what)?;
        if n > (self.bytes.len() - self.pos) as u64 {
            return Err(Error::Truncated(what));
        }
        Ok(n as usize)
    }
}

pub(crate) fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes through a temporary file and a rename.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads and checks that the stored model configuration equals `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "stored {:?}, requested {:?}",
            ckpt.model.config, expected
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn tiny() -> ModelConfig {
        ModelConfig {
            width: 4,
            layers: 1,
            heads: 2,
            ff_width: 8,
            pair_widths: vec![3],
            n_rbf: 4,
            ..ModelConfig::desk()
        }
    }

    fn full_checkpoint() -> Checkpoint {
        let model = Model::new(tiny()).unwrap();
        let sizes: Vec<usize> = model
            .params
            .tensors
            .values()
            .map(TensorData::numel)
            .collect();
        let mut adam = AdamState::new(&sizes);
        adam.step = 7;
        adam.m[0][0] = 0.125;
        adam.v[1][0] = f64::MIN_POSITIVE;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.next_u64();
        Checkpoint {
            train_config: Some(TrainConfig::desk()),
            epoch: 4,
            adam: Some(adam),
            rng: Some(RngState::capture(&rng)),
            val_rmse: Some(1.25),
            created_unix_secs: 1_700_000_000,
            config_hash: config_hash(&model.config, Some(&TrainConfig::desk())),
            model,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = full_checkpoint();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        let bare = Checkpoint::from_model(Model::new(tiny()).unwrap());
        assert_eq!(Checkpoint::from_bytes(&bare.to_bytes()).unwrap(), bare);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        a.next_u32();
        let mut b = RngState::capture(&a).restore().unwrap();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn corrupt_inputs_have_distinct_errors() {
        let bytes = full_checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::BadMagic(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::BadVersion { found: 9, .. })
        ));
        for cut in [2, 6, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    Checkpoint::from_bytes(&bytes[..cut]),
                    Err(Error::Truncated(_))
                ),
                "cut at {cut}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&long),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn config_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.dbnd");
        save_checkpoint(&full_checkpoint(), &p).unwrap();
        assert!(load_checkpoint_for(&p, &tiny()).is_ok());
        let other = ModelConfig { width: 8, ..tiny() };
        assert!(matches!(
            load_checkpoint_for(&p, &other),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
