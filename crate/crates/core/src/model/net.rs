use std::rc::Rc;

use dualbind_autodiff::{Graph, Real, Tensor};

use super::features::{featurize_atoms, FEATURE_DIM};
use super::{Bound, Mode, Model, ModelConfig};
use crate::data::ComplexRecord;
use crate::error::Result;
use crate::geometry::{
    compute_frames, contacts_between, contacts_within, select_pocket, ContactList, Frame,
};

/// A complex reduced to what the network consumes: pocket selection (or
/// protein removal for the ligand-only variant) and featurization done once.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub label: f64,
    /// Row-major `n × FEATURE_DIM`.
    pub features: Vec<f64>,
    pub coords: Vec<[f64; 3]>,
    pub ligand: Vec<usize>,
    pub protein: Vec<usize>,
    pub ligand_only: bool,
}

impl Prepared {
    pub fn new(record: &ComplexRecord, cfg: &ModelConfig) -> Result<Self> {
        Self::with_variant(record, cfg, cfg.ligand_only)
    }

    pub fn with_variant(
        record: &ComplexRecord,
        cfg: &ModelConfig,
        ligand_only: bool,
    ) -> Result<Self> {
        record.validate(ligand_only)?;
        let kept = if ligand_only {
            let mut r = record.clone();
            r.atoms.retain(|a| a.is_ligand);
            r
        } else {
            select_pocket(record, cfg.pocket_residues)?
        };
        Ok(Prepared {
            id: kept.complex_id.clone(),
            label: kept.label,
            features: featurize_atoms(&kept),
            coords: kept.coords(),
            ligand: kept.ligand_indices(),
            protein: kept.protein_indices(),
            ligand_only,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn coords_flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn coords_leaf<T: Real>(&self, graph: &Graph<T>, requires_grad: bool) -> Result<Tensor<T>> {
        let data = self.coords_flat().into_iter().map(T::from_f64).collect();
        Ok(graph.leaf(data, &[self.n_atoms(), 3], requires_grad)?)
    }

    /// Scored pairs at the given coordinates: ligand–protein, or ligand–ligand
    /// (`i < j`) for the ligand-only variant.
    pub fn contacts(&self, coords: &[[f64; 3]], cutoff: f64) -> ContactList {
        if self.ligand_only {
            contacts_within(coords, &self.ligand, cutoff)
        } else {
            contacts_between(coords, &self.ligand, &self.protein, cutoff)
        }
    }
}

fn to_points(flat: &[f64]) -> Vec<[f64; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn layer_norm<T: Real>(x: &Tensor<T>, p: &Bound<T>, name: &str, eps: f64) -> Result<Tensor<T>> {
    Ok(x.layer_norm(eps)?
        .mul(p.get(&format!("{name}.gain")))?
        .add(p.get(&format!("{name}.bias")))?)
}

fn dropout<T: Real>(x: Tensor<T>, rate: f64, mode: &mut Mode<'_>) -> Result<Tensor<T>> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => Ok(x.dropout(rate, &mut **rng)?),
        _ => Ok(x),
    }
}

/// Atom embeddings `n × width`, averaged over the four frames.
fn encode<T: Real>(
    p: &Bound<T>,
    cfg: &ModelConfig,
    features: &Tensor<T>,
    x: &Tensor<T>,
    frames: &[Frame; 4],
    mode: &mut Mode<'_>,
) -> Result<Tensor<T>> {
    let graph = x.graph();
    let n = x.shape()[0];
    let (w, nf) = (cfg.width, frames.len());
    let t = frames[0].translation;
    let centre = graph.constant([t.x, t.y, t.z].map(T::from_f64).to_vec(), &[1, 3])?;
    let centred = x.sub(&centre)?;
    let mut canon = Vec::with_capacity(nf);
    for f in frames {
        let r = graph.constant(f.rotation_row_major().map(T::from_f64).to_vec(), &[3, 3])?;
        canon.push(centred.matmul(&r)?);
    }
    let canon = Tensor::concat(&canon.iter().collect::<Vec<_>>(), 0)?;

    // [A ‖ C]·W_in split into the frame-independent and per-frame halves.
    let w_in = p.get("input.weight");
    let base = features
        .matmul(&w_in.narrow(0, 0, cfg.feature_dim)?)?
        .add(p.get("input.bias"))?;
    let mut h = canon
        .matmul(&w_in.narrow(0, cfg.feature_dim, 3)?)?
        .reshape(&[nf, n, w])?
        .add(&base)?
        .reshape(&[nf * n, w])?;

    let dh = w / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.layers {
        let pre = format!("layers.{l}");
        let z = layer_norm(&h, p, &format!("{pre}.attn_norm"), cfg.layer_norm_eps)?;
        let q = z.matmul(p.get(&format!("{pre}.attn.wq")))?;
        let k = z.matmul(p.get(&format!("{pre}.attn.wk")))?;
        let v = z.matmul(p.get(&format!("{pre}.attn.wv")))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let split = |m: &Tensor<T>| m.narrow(1, hd * dh, dh)?.reshape(&[nf, n, dh]);
            let (qh, kh, vh) = (split(&q)?, split(&k)?, split(&v)?);
            let att = qh.matmul_t(&kh, false, true)?.scale(scale)?.softmax(2)?;
            heads.push(att.matmul(&vh)?.reshape(&[nf * n, dh])?);
        }
        let att = Tensor::concat(&heads.iter().collect::<Vec<_>>(), 1)?
            .matmul(p.get(&format!("{pre}.attn.wo")))?
            .add(p.get(&format!("{pre}.attn.bo")))?;
        h = h.add(&dropout(att, cfg.dropout, mode)?)?;

        let z = layer_norm(&h, p, &format!("{pre}.ff_norm"), cfg.layer_norm_eps)?;
        let f = z
            .matmul(p.get(&format!("{pre}.ff.w1")))?
            .add(p.get(&format!("{pre}.ff.b1")))?
            .silu()?
            .matmul(p.get(&format!("{pre}.ff.w2")))?
            .add(p.get(&format!("{pre}.ff.b2")))?;
        h = h.add(&dropout(f, cfg.dropout, mode)?)?;
    }
    let h = layer_norm(&h, p, "final_norm", cfg.layer_norm_eps)?;
    Ok(h.reshape(&[nf, n, w])?.mean_axis(0, false)?)
}

/// Gaussian radial basis of the distances: `exp(−((d − μ_k)/γ)²)` with
/// centres evenly spaced on `[0, cutoff]` and `γ` their spacing.
fn radial_basis<T: Real>(d: &Tensor<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let k = cfg.n_rbf;
    let spacing = if k > 1 {
        cfg.cutoff / (k - 1) as f64
    } else {
        cfg.cutoff
    };
    let centres: Vec<T> = (0..k).map(|i| T::from_f64(i as f64 * spacing)).collect();
    let mu = d.graph().constant(centres, &[k])?;
    Ok(d.sub(&mu)?.scale(1.0 / spacing)?.square()?.neg()?.exp()?)
}

/// Energy with caller-supplied frames. The frames enter as constants, so
/// gradients with respect to `x` flow through the canonical coordinates and
/// the pair distances only.
pub fn energy_with_frames<T: Real>(
    p: &Bound<T>,
    cfg: &ModelConfig,
    prep: &Prepared,
    x: &Tensor<T>,
    frames: &[Frame; 4],
    mode: &mut Mode<'_>,
) -> Result<Tensor<T>> {
    let graph = x.graph();
    let coords = to_points(&x.to_f64_vec());
    let contacts = prep.contacts(&coords, cfg.cutoff);
    if contacts.is_empty() {
        return Ok(graph.scalar(0.0));
    }
    let feats = graph.constant(
        prep.features.iter().map(|&v| T::from_f64(v)).collect(),
        &[prep.n_atoms(), FEATURE_DIM],
    )?;
    let h = encode(p, cfg, &feats, x, frames, mode)?;

    let left: Rc<[usize]> = contacts.left().into();
    let right: Rc<[usize]> = contacts.right().into();
    let prod = h
        .index_select_shared(left.clone())?
        .mul(&h.index_select_shared(right.clone())?)?;
    let d = x
        .index_select_shared(left)?
        .sub(&x.index_select_shared(right)?)?
        .square()?
        .sum_axis(1, true)?
        .sqrt()?;
    let mut z = Tensor::concat(&[&prod, &radial_basis(&d, cfg)?], 1)?;
    let n_layers = cfg.pair_widths.len() + 1;
    for k in 0..n_layers {
        z = z
            .matmul(p.get(&format!("pair.{k}.weight")))?
            .add(p.get(&format!("pair.{k}.bias")))?;
        if k + 1 < n_layers {
            z = z.silu()?;
        }
    }
    Ok(z.sum()?)
}

/// Energy with frames built from the current coordinate values.
pub fn energy_tensor<T: Real>(
    p: &Bound<T>,
    cfg: &ModelConfig,
    prep: &Prepared,
    x: &Tensor<T>,
    mode: &mut Mode<'_>,
) -> Result<Tensor<T>> {
    let frames = compute_frames(&to_points(&x.to_f64_vec()))?;
    energy_with_frames(p, cfg, prep, x, &frames, mode)
}

fn scalar_energy(model: &Model, prep: &Prepared, mode: &mut Mode<'_>) -> Result<f64> {
    let graph = Graph::<f64>::new();
    let bound = model.params.bind(&graph, false)?;
    let x = prep.coords_leaf(&graph, false)?;
    Ok(energy_tensor(&bound, &model.config, prep, &x, mode)?.item())
}

/// Interaction energy (kcal/mol) over ligand–protein contacts.
pub fn energy(model: &Model, record: &ComplexRecord, mode: &mut Mode<'_>) -> Result<f64> {
    scalar_energy(
        model,
        &Prepared::with_variant(record, &model.config, false)?,
        mode,
    )
}

/// The same network applied to the ligand alone, scoring ligand–ligand pairs.
pub fn ligand_only_energy(
    model: &Model,
    record: &ComplexRecord,
    mode: &mut Mode<'_>,
) -> Result<f64> {
    scalar_energy(
        model,
        &Prepared::with_variant(record, &model.config, true)?,
        mode,
    )
}

/// Eval-mode `∂E/∂x` for the ligand atoms, in their record order.
pub fn energy_grad_ligand(model: &Model, record: &ComplexRecord) -> Result<Vec<[f64; 3]>> {
    let prep = model.prepare(record)?;
    if prep.contacts(&prep.coords, model.config.cutoff).is_empty() {
        return Ok(vec![[0.0; 3]; prep.ligand.len()]);
    }
    let graph = Graph::<f64>::new();
    let bound = model.params.bind(&graph, false)?;
    let x = prep.coords_leaf(&graph, true)?;
    let e = energy_tensor(&bound, &model.config, &prep, &x, &mut Mode::Eval)?;
    let g = e.backward(&[&x])?.grads.remove(0).to_vec();
    Ok(prep
        .ligand
        .iter()
        .map(|&i| [g[3 * i], g[3 * i + 1], g[3 * i + 2]])
        .collect())
}
