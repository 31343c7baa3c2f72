//! Frame-averaged attention encoder and pairwise energy head.

mod features;
mod net;

use std::collections::BTreeMap;

use dualbind_autodiff::{Graph, Real, Tensor, TensorData};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ComplexRecord;
use crate::error::{Error, Result};

pub use features::{element_slot, featurize_atoms, ELEMENTS, FEATURE_DIM};
pub use net::{
    energy, energy_grad_ligand, energy_tensor, energy_with_frames, ligand_only_energy, Prepared,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Hidden widths of the pair MLP; the output width is always 1.
    pub pair_widths: Vec<usize>,
    /// Contact cutoff (Å).
    pub cutoff: f64,
    pub n_rbf: usize,
    pub dropout: f64,
    pub feature_dim: usize,
    pub layer_norm_eps: f64,
    /// Protein residues kept around the ligand before encoding.
    pub pocket_residues: usize,
    /// Drop protein atoms and score ligand–ligand pairs only.
    pub ligand_only: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Small model for desk-scale experiments and tests.
    pub fn desk() -> Self {
        ModelConfig {
            width: 32,
            layers: 2,
            heads: 4,
            ff_width: 64,
            pair_widths: vec![32],
            cutoff: 10.0,
            n_rbf: 16,
            dropout: 0.0,
            feature_dim: FEATURE_DIM,
            layer_norm_eps: 1e-5,
            pocket_residues: 50,
            ligand_only: false,
            init_seed: 0,
        }
    }

    /// Roughly one million parameters.
    pub fn paper() -> Self {
        ModelConfig {
            width: 128,
            layers: 5,
            heads: 8,
            ff_width: 512,
            pair_widths: vec![128, 64],
            dropout: 0.1,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.heads == 0 || self.ff_width == 0 || self.n_rbf == 0 {
            return bad("widths, heads and RBF count must be at least 1".into());
        }
        if self.pair_widths.contains(&0) {
            return bad("pair MLP widths must be at least 1".into());
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.cutoff > 0.0) || !(self.layer_norm_eps > 0.0) {
            return bad("cutoff and layer-norm epsilon must be positive".into());
        }
        if self.feature_dim != FEATURE_DIM {
            return bad(format!(
                "feature_dim must be {FEATURE_DIM}, got {}",
                self.feature_dim
            ));
        }
        if self.pocket_residues == 0 {
            return bad("pocket must keep at least one residue".into());
        }
        Ok(())
    }

    /// Every parameter name with its shape, in name order.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let (w, f) = (self.width, self.ff_width);
        let mut s = BTreeMap::new();
        s.insert("input.weight".to_string(), vec![self.feature_dim + 3, w]);
        s.insert("input.bias".to_string(), vec![w]);
        for l in 0..self.layers {
            let p = format!("layers.{l}");
            for norm in ["attn_norm", "ff_norm"] {
                s.insert(format!("{p}.{norm}.gain"), vec![w]);
                s.insert(format!("{p}.{norm}.bias"), vec![w]);
            }
            for m in ["wq", "wk", "wv", "wo"] {
                s.insert(format!("{p}.attn.{m}"), vec![w, w]);
            }
            s.insert(format!("{p}.attn.bo"), vec![w]);
            s.insert(format!("{p}.ff.w1"), vec![w, f]);
            s.insert(format!("{p}.ff.b1"), vec![f]);
            s.insert(format!("{p}.ff.w2"), vec![f, w]);
            s.insert(format!("{p}.ff.b2"), vec![w]);
        }
        s.insert("final_norm.gain".to_string(), vec![w]);
        s.insert("final_norm.bias".to_string(), vec![w]);
        let mut fan_in = w + self.n_rbf;
        for (k, &out) in self
            .pair_widths
            .iter()
            .chain(std::iter::once(&1))
            .enumerate()
        {
            s.insert(format!("pair.{k}.weight"), vec![fan_in, out]);
            s.insert(format!("pair.{k}.bias"), vec![out]);
            fan_in = out;
        }
        s
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .values()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter tensors; the key set is determined by the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, TensorData<f64>>,
}

impl ModelParams {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in cfg.param_shapes() {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 2 {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else if name.ends_with(".gain") {
                vec![1.0; n]
            } else {
                vec![0.0; n]
            };
            tensors.insert(name, TensorData::new(shape, data)?);
        }
        Ok(ModelParams { tensors })
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(TensorData::numel).sum()
    }

    /// Checks that names and shapes match `cfg`.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.param_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "{} tensors, configuration needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                Some(t) if &t.shape == shape => {}
                Some(t) => {
                    return Err(Error::ConfigMismatch(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                None => return Err(Error::ConfigMismatch(format!("missing tensor {name}"))),
            }
        }
        Ok(())
    }

    /// Places every tensor on `graph` in name order.
    pub fn bind<T: Real>(&self, graph: &Graph<T>, requires_grad: bool) -> Result<Bound<T>> {
        let mut index = BTreeMap::new();
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            index.insert(name.clone(), tensors.len());
            tensors.push(t.cast::<T>().to_leaf(graph, requires_grad)?);
        }
        Ok(Bound { index, tensors })
    }
}

/// Parameters placed on a graph.
pub struct Bound<T: Real = f64> {
    index: BTreeMap<String, usize>,
    /// In name order, matching [`ModelParams::tensors`].
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Bound<T> {
    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[self.index[name]]
    }

    pub fn refs(&self) -> Vec<&Tensor<T>> {
        self.tensors.iter().collect()
    }
}

/// Whether dropout is active. Training carries the generator for the masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Model { config, params })
    }

    pub fn prepare(&self, record: &ComplexRecord) -> Result<Prepared> {
        Prepared::new(record, &self.config)
    }

    /// Eval-mode energy of one complex, computed in precision `T`.
    pub fn predict_in<T: Real>(&self, record: &ComplexRecord) -> Result<f64> {
        Ok(self.predict_batch_in::<T>(std::slice::from_ref(record))?[0])
    }

    pub fn predict(&self, record: &ComplexRecord) -> Result<f64> {
        self.predict_in::<f64>(record)
    }

    /// Eval-mode energies of several complexes evaluated on one graph.
    pub fn predict_batch_in<T: Real>(&self, records: &[ComplexRecord]) -> Result<Vec<f64>> {
        let graph = Graph::<T>::new();
        let bound = self.params.bind(&graph, false)?;
        records
            .iter()
            .map(|r| {
                let prep = self.prepare(r)?;
                let x = prep.coords_leaf(&graph, false)?;
                let e = energy_tensor(&bound, &self.config, &prep, &x, &mut Mode::Eval)?;
                Ok(e.item().as_f64())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_matches_hand_count() {
        let cfg = ModelConfig {
            width: 8,
            layers: 2,
            heads: 2,
            ff_width: 16,
            pair_widths: vec![4],
            n_rbf: 5,
            ..ModelConfig::desk()
        };
        let input = 15 * 8 + 8;
        let layer = 2 * (8 + 8) + 4 * 64 + 8 + (8 * 16 + 16) + (16 * 8 + 8);
        let final_norm = 16;
        let pair = (13 * 4 + 4) + (4 + 1);
        assert_eq!(cfg.param_count(), input + 2 * layer + final_norm + pair);
        assert_eq!(ModelParams::init(&cfg).unwrap().count(), cfg.param_count());
    }

    #[test]
    fn paper_scale_is_about_a_million() {
        let n = ModelConfig::paper().param_count();
        assert!((1_000_000..1_040_000).contains(&n), "{n}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ModelConfig::desk();
        for cfg in [
            ModelConfig {
                heads: 5,
                ..base.clone()
            },
            ModelConfig {
                dropout: 1.0,
                ..base.clone()
            },
            ModelConfig {
                width: 0,
                ..base.clone()
            },
            ModelConfig {
                pair_widths: vec![0],
                ..base.clone()
            },
            ModelConfig {
                cutoff: -1.0,
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn init_is_seeded_and_shapes_check() {
        let cfg = ModelConfig::desk();
        let a = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, ModelParams::init(&cfg).unwrap());
        let other = ModelParams::init(&ModelConfig {
            init_seed: 1,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a, other);
        a.check_against(&cfg).unwrap();
        assert!(a
            .check_against(&ModelConfig {
                layers: cfg.layers + 1,
                ..cfg.clone()
            })
            .is_err());
    }
}
