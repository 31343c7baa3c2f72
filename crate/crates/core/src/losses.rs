//! Regression and denoising score-matching objectives.

use dualbind_autodiff::{Real, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// `(E − y)²` on the graph.
pub fn mse_loss<T: Real>(energy: &Tensor<T>, label: f64) -> Result<Tensor<T>> {
    Ok(energy.add_scalar(-label)?.square()?)
}

/// Mean of `(p − y)²` over pairs.
pub fn batch_mse(pred: &[f64], truth: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

/// Ligand coordinates displaced by isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub clean: Vec<[f64; 3]>,
    pub perturbed: Vec<[f64; 3]>,
    pub sigma: f64,
    /// Standard-normal draws, one row per ligand atom.
    pub noise: Vec<[f64; 3]>,
    /// Rows of `clean` that were perturbed.
    pub ligand: Vec<usize>,
}

impl PerturbationSample {
    /// The same draw with `ε` negated.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for (k, &i) in self.ligand.iter().enumerate() {
            for c in 0..3 {
                out.noise[k][c] = -self.noise[k][c];
                out.perturbed[i][c] = self.clean[i][c] - (self.perturbed[i][c] - self.clean[i][c]);
            }
        }
        out
    }

    /// `(X̃ − X)` restricted to the ligand rows.
    pub fn displacement(&self) -> Vec<[f64; 3]> {
        self.ligand
            .iter()
            .map(|&i| [0, 1, 2].map(|k| self.perturbed[i][k] - self.clean[i][k]))
            .collect()
    }
}

/// Draws `σ ~ U[σ_min, σ_max]` and `ε ~ N(0, I)` and sets
/// `X̃_i = X_i + σ ε_i` on ligand rows; other rows are copied.
pub fn perturb_ligand<R: Rng + ?Sized>(
    coords: &[[f64; 3]],
    ligand: &[usize],
    sigma_min: f64,
    sigma_max: f64,
    rng: &mut R,
) -> Result<PerturbationSample> {
    if !(sigma_min > 0.0 && sigma_min <= sigma_max && sigma_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise range [{sigma_min}, {sigma_max}] must satisfy 0 < min <= max"
        )));
    }
    let sigma = if sigma_min == sigma_max {
        sigma_min
    } else {
        rng.random_range(sigma_min..=sigma_max)
    };
    let mut perturbed = coords.to_vec();
    let mut noise = Vec::with_capacity(ligand.len());
    for &i in ligand {
        let eps: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
        for k in 0..3 {
            perturbed[i][k] = coords[i][k] + sigma * eps[k];
        }
        noise.push(eps);
    }
    Ok(PerturbationSample {
        clean: coords.to_vec(),
        perturbed,
        sigma,
        noise,
        ligand: ligand.to_vec(),
    })
}

/// `‖∇E − (X̃ − X)/σ²‖²` over ligand atoms, optionally multiplied by `σ²`.
/// `grad` holds one row per ligand atom.
pub fn dsm_loss<T: Real>(
    sample: &PerturbationSample,
    grad: &Tensor<T>,
    sigma_weighted: bool,
) -> Result<Tensor<T>> {
    let m = sample.ligand.len();
    if grad.shape() != [m, 3] {
        return Err(Error::InvalidConfig(format!(
            "score-matching gradient has shape {:?}, expected [{m}, 3]",
            grad.shape()
        )));
    }
    let s2 = sample.sigma * sample.sigma;
    let target: Vec<T> = sample
        .displacement()
        .iter()
        .flatten()
        .map(|d| T::from_f64(d / s2))
        .collect();
    let target = grad.graph().constant(target, &[m, 3])?;
    let loss = grad.sub(&target)?.square()?.sum()?;
    Ok(if sigma_weighted {
        loss.scale(s2)?
    } else {
        loss
    })
}

/// `l_mse + λ · l_dsm`.
pub fn total_loss<T: Real>(mse: &Tensor<T>, dsm: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(mse.add(&dsm.scale(lambda)?)?)
}

/// Score of the isotropic Gaussian corruption, `−(X̃ − X)/σ²`, row by row.
pub fn gaussian_conditional_score(
    perturbed: &[[f64; 3]],
    clean: &[[f64; 3]],
    sigma: f64,
) -> Result<Vec<[f64; 3]>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if perturbed.len() != clean.len() {
        return Err(Error::InvalidConfig(format!(
            "{} perturbed rows against {} clean rows",
            perturbed.len(),
            clean.len()
        )));
    }
    let s2 = sigma * sigma;
    Ok(perturbed
        .iter()
        .zip(clean)
        .map(|(p, c)| [0, 1, 2].map(|k| -(p[k] - c[k]) / s2))
        .collect())
}
