//! Optimization loop: Adam with per-epoch decay, seeded batching,
//! best-by-validation checkpoint selection.

mod adam;
mod checkpoint;

use std::io::Write;
use std::path::Path;

use dualbind_autodiff::{Graph, Precision, Real, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::losses::{dsm_loss, mse_loss, perturb_ligand, total_loss, PerturbationSample};
use crate::metrics::cap_predictions;
use crate::model::{energy_tensor, Mode, Model, Prepared};

pub use adam::{adam_step, lr_at_epoch, AdamConfig, AdamState};
pub use checkpoint::{
    config_hash, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, RngState,
    FORMAT_VERSION, MAGIC,
};

pub const DEFAULT_CAP: f64 = -3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub name: String,
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the score-matching term.
    pub lambda: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Multiply the score-matching term by σ².
    pub sigma_weighted: bool,
    /// Pair every noise draw with its negation and average the two
    /// score-matching terms.
    #[serde(default)]
    pub antithetic: bool,
    pub seed: u64,
    pub precision: Precision,
    /// Threshold applied to validation predictions; `None` disables capping.
    pub cap: Option<f64>,
    /// Global gradient-norm clip; off unless set.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            name: "desk".into(),
            learning_rate: 1e-3,
            decay: 0.995,
            batch_size: 8,
            epochs: 100,
            lambda: 2.0,
            sigma_min: 0.1,
            sigma_max: 1.0,
            sigma_weighted: false,
            antithetic: false,
            seed: 0,
            precision: Precision::F64,
            cap: Some(DEFAULT_CAP),
            clip_norm: None,
            adam: AdamConfig::default(),
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            name: "paper".into(),
            learning_rate: 5e-4,
            decay: 0.95,
            batch_size: 128,
            epochs: 120,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay must lie in (0, 1], got {}", self.decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite())
        {
            return bad(format!(
                "noise range [{}, {}] must satisfy 0 < min <= max",
                self.sigma_min, self.sigma_max
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm must be positive, got {c}"));
            }
        }
        let b = &self.adam;
        if !((0.0..1.0).contains(&b.beta1) && (0.0..1.0).contains(&b.beta2) && b.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }
}

/// Losses and parameter gradients of one training sample.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub mse: f64,
    pub dsm: f64,
    pub total: f64,
    /// One flat buffer per parameter tensor, in name order.
    pub grads: Vec<Vec<f64>>,
}

/// Runs the clean and perturbed branches for one complex and differentiates
/// `(mse + λ·dsm) · weight` with respect to every parameter.
pub fn sample_gradients(
    model: &Model,
    prep: &Prepared,
    cfg: &TrainConfig,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutput> {
    match cfg.precision {
        Precision::F64 => sample_gradients_in::<f64>(model, prep, cfg, weight, rng),
        Precision::F32 => sample_gradients_in::<f32>(model, prep, cfg, weight, rng),
    }
}

fn sample_gradients_in<T: Real>(
    model: &Model,
    prep: &Prepared,
    cfg: &TrainConfig,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleOutput> {
    let mc = &model.config;
    let graph = Graph::<T>::new();
    let bound = model.params.bind(&graph, true)?;
    let x = prep.coords_leaf(&graph, false)?;
    let e = energy_tensor(&bound, mc, prep, &x, &mut Mode::Train(rng))?;
    let mse = mse_loss(&e, prep.label)?;

    let dsm = if cfg.lambda > 0.0 {
        let s = perturb_ligand(
            &prep.coords,
            &prep.ligand,
            cfg.sigma_min,
            cfg.sigma_max,
            rng,
        )?;
        let branch = |s: &PerturbationSample, rng: &mut ChaCha8Rng| -> Result<Tensor<T>> {
            let flat = s
                .perturbed
                .iter()
                .flatten()
                .map(|&v| T::from_f64(v))
                .collect();
            let xt = graph.param(flat, &[prep.n_atoms(), 3])?;
            let et = energy_tensor(&bound, mc, prep, &xt, &mut Mode::Train(rng))?;
            let grad = et.backward(&[&xt])?.grads.remove(0);
            dsm_loss(s, &grad.index_select(&prep.ligand)?, cfg.sigma_weighted)
        };
        if cfg.antithetic {
            let a = branch(&s, rng)?;
            a.add(&branch(&s.mirrored(), rng)?)?.scale(0.5)?
        } else {
            branch(&s, rng)?
        }
    } else {
        graph.scalar(0.0)
    };
    let total = total_loss(&mse, &dsm, cfg.lambda)?;
    let grads = total.scale(weight)?.backward(&bound.refs())?;
    Ok(SampleOutput {
        mse: mse.item().as_f64(),
        dsm: dsm.item().as_f64(),
        total: total.item().as_f64(),
        grads: grads.grads.iter().map(|g| g.to_f64_vec()).collect(),
    })
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub train_dsm: f64,
    pub train_total: f64,
    pub val_rmse: Option<f64>,
    /// Batches whose update was skipped.
    pub skipped_batches: usize,
    /// Mean global gradient norm over applied batches.
    pub grad_norm: f64,
}

pub const HISTORY_HEADER: [&str; 6] = [
    "epoch",
    "lr",
    "train_mse",
    "train_dsm",
    "train_total",
    "val_rmse",
];

pub fn write_history(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Training(format!("writing history: {e}"));
    w.write_record(HISTORY_HEADER).map_err(err)?;
    for r in history {
        let val = r.val_rmse.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_mse.to_string(),
            r.train_dsm.to_string(),
            r.train_total.to_string(),
            val,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(io_err("flushing history"))
}

pub fn save_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_history(history, &mut buf)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf).map_err(io_err(format!("writing {}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Lowest validation RMSE; ties keep the earlier epoch. Without a
    /// validation set, the last epoch.
    pub best: Checkpoint,
    /// State after the final epoch, suitable for resuming.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Validation RMSE of capped predictions against the given labels.
pub fn validation_rmse(model: &Model, val: &[Prepared], cap: Option<f64>) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::with_capacity(val.len());
    for p in val {
        let graph = Graph::<f64>::new();
        let bound = model.params.bind(&graph, false)?;
        let x = p.coords_leaf(&graph, false)?;
        preds.push(energy_tensor(&bound, &model.config, p, &x, &mut Mode::Eval)?.item());
    }
    if let Some(c) = cap {
        preds = cap_predictions(&preds, c);
    }
    let se: f64 = preds
        .iter()
        .zip(val)
        .map(|(p, v)| (p - v.label).powi(2))
        .sum();
    Ok(Some((se / val.len() as f64).sqrt()))
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Owns the model, optimizer state and generator for a run.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    threads: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = model.params.tensors.values().map(|t| t.numel()).collect();
        Ok(Trainer {
            adam: AdamState::new(&sizes),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            epoch: 0,
            threads: 1,
        })
    }

    /// Continues from a checkpoint that carries optimizer and generator state.
    /// `config` may extend the epoch budget; other fields should match the
    /// original run for the result to equal an uninterrupted one.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = ckpt
            .adam
            .ok_or_else(|| Error::Training("checkpoint has no optimizer state".into()))?;
        let rng = ckpt
            .rng
            .as_ref()
            .ok_or_else(|| Error::Training("checkpoint has no generator state".into()))?
            .restore()?;
        Ok(Trainer {
            model: ckpt.model,
            config,
            adam,
            rng,
            epoch: ckpt.epoch,
            threads: 1,
        })
    }

    pub fn checkpoint(&self, val_rmse: Option<f64>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train_config: Some(self.config.clone()),
            epoch: self.epoch,
            adam: Some(self.adam.clone()),
            rng: Some(RngState::capture(&self.rng)),
            val_rmse,
            created_unix_secs: checkpoint::now_secs(),
            config_hash: config_hash(&self.model.config, Some(&self.config)),
        }
    }

    /// Worker threads for per-sample gradients. Results do not depend on it.
    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    /// Per-sample outputs in batch order. Each sample draws from its own
    /// generator seeded from the run generator.
    fn batch_outputs(
        &self,
        train: &[Prepared],
        batch: &[usize],
        seeds: &[u64],
        weight: f64,
    ) -> Vec<Result<SampleOutput>> {
        let run = |i: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_gradients(&self.model, &train[i], &self.config, weight, &mut rng)
        };
        if self.threads <= 1 || batch.len() < 2 {
            return batch.iter().zip(seeds).map(|(&i, &s)| run(i, s)).collect();
        }
        let per = batch.len().div_ceil(self.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .zip(seeds.chunks(per))
                .map(|(b, s)| {
                    scope.spawn(move || {
                        b.iter()
                            .zip(s)
                            .map(|(&i, &s)| run(i, s))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    }

    /// One pass over `train`: shuffle, batch, update, decay.
    pub fn run_epoch(&mut self, train: &[Prepared], val: &[Prepared]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Training("training set is empty".into()));
        }
        let lr = lr_at_epoch(self.config.learning_rate, self.config.decay, self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);

        let (mut sum_mse, mut sum_dsm, mut sum_total, mut counted) = (0.0, 0.0, 0.0, 0usize);
        let (mut skipped, mut applied, mut norm_sum) = (0usize, 0usize, 0.0);
        for batch in order.chunks(self.config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut acc: Option<Vec<Vec<f64>>> = None;
            let (mut b_mse, mut b_dsm, mut b_total) = (0.0, 0.0, 0.0);
            let seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
            let outputs = self.batch_outputs(train, batch, &seeds, weight);
            for (&i, out) in batch.iter().zip(outputs) {
                let out =
                    out.map_err(|e| Error::Training(format!("complex {}: {e}", train[i].id)))?;
                b_mse += out.mse;
                b_dsm += out.dsm;
                b_total += out.total;
                match &mut acc {
                    None => acc = Some(out.grads),
                    Some(a) => {
                        for (a, g) in a.iter_mut().zip(&out.grads) {
                            for (a, g) in a.iter_mut().zip(g) {
                                *a += g;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("batches are non-empty");
            let norm = global_norm(&grads);
            if !b_total.is_finite() || !norm.is_finite() {
                self.adam.skipped += 1;
                skipped += 1;
                log::warn!(
                    "epoch {}: non-finite loss or gradient, batch skipped",
                    self.epoch + 1
                );
                continue;
            }
            if let Some(c) = self.config.clip_norm {
                if norm > c {
                    let s = c / norm;
                    grads.iter_mut().flatten().for_each(|g| *g *= s);
                }
            }
            log::debug!("batch gradient norm {norm:.6e}");
            let mut params: Vec<Vec<f64>> = self
                .model
                .params
                .tensors
                .values_mut()
                .map(|t| std::mem::take(&mut t.data))
                .collect();
            adam_step(&mut params, &grads, &mut self.adam, lr, &self.config.adam);
            for (t, p) in self.model.params.tensors.values_mut().zip(params) {
                t.data = p;
            }
            sum_mse += b_mse;
            sum_dsm += b_dsm;
            sum_total += b_total;
            counted += batch.len();
            applied += 1;
            norm_sum += norm;
        }
        if applied == 0 {
            return Err(Error::Training(format!(
                "every batch of epoch {} had a non-finite loss or gradient",
                self.epoch + 1
            )));
        }
        self.epoch += 1;
        let n = counted as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            lr,
            train_mse: sum_mse / n,
            train_dsm: sum_dsm / n,
            train_total: sum_total / n,
            val_rmse: validation_rmse(&self.model, val, self.config.cap)?,
            skipped_batches: skipped,
            grad_norm: norm_sum / applied as f64,
        };
        log::info!(
            "epoch {} lr {:.3e} mse {:.4} dsm {:.4} val {}",
            record.epoch,
            lr,
            record.train_mse,
            record.train_dsm,
            record.val_rmse.map_or("-".into(), |v| format!("{v:.4}"))
        );
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit(mut self, train: &[Prepared], val: &[Prepared]) -> Result<FitOutcome> {
        let mut history = Vec::new();
        let mut best: Option<Checkpoint> = None;
        while self.epoch < self.config.epochs {
            let rec = self.run_epoch(train, val)?;
            let better = match (&best, rec.val_rmse) {
                (None, _) => true,
                (Some(_), None) => true,
                (Some(b), Some(v)) => b.val_rmse.is_none_or(|bv| v < bv),
            };
            if better {
                best = Some(self.checkpoint(rec.val_rmse));
            }
            history.push(rec);
        }
        let last = self.checkpoint(history.last().and_then(|r| r.val_rmse));
        Ok(FitOutcome {
            best: best.unwrap_or_else(|| last.clone()),
            last,
            history,
        })
    }
}

/// Prepares records for training with the model's variant and pocket size.
pub fn prepare_all(model: &Model, records: &[crate::data::ComplexRecord]) -> Result<Vec<Prepared>> {
    records.iter().map(|r| model.prepare(r)).collect()
}

/// Fresh model and trainer, then [`Trainer::fit`].
pub fn fit(
    model: Model,
    train: &[crate::data::ComplexRecord],
    val: &[crate::data::ComplexRecord],
    config: &TrainConfig,
) -> Result<FitOutcome> {
    let tp = prepare_all(&model, train)?;
    let vp = prepare_all(&model, val)?;
    Trainer::new(model, config.clone())?.fit(&tp, &vp)
}
