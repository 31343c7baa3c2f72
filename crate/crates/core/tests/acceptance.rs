//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use dualbind_autodiff::{numeric_gradient, Graph, Tensor};
use dualbind_core::data::{
    cap_labels, load_dataset, save_dataset, smiles_overlap, split_by_smiles, synth_generate,
    ComplexRecord, SynthConfig,
};
use dualbind_core::geometry::compute_frames;
use dualbind_core::losses::{
    dsm_loss, gaussian_conditional_score, perturb_ligand, PerturbationSample,
};
use dualbind_core::metrics::{average_ranks, cap_predictions, compute_metrics, evaluate};
use dualbind_core::model::{
    energy, energy_grad_ligand, energy_with_frames, Mode, Model, ModelConfig,
};
use dualbind_core::train::{
    fit, load_checkpoint, lr_at_epoch, save_checkpoint, Checkpoint, TrainConfig, DEFAULT_CAP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn synth(n: usize, seed: u64) -> Vec<ComplexRecord> {
    synth_generate(&SynthConfig {
        n_complexes: n,
        seed,
        ..SynthConfig::default()
    })
    .expect("synthetic data")
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    dualbind_core::data::synth::random_rotation(rng)
}

/// `max_i |a_i − n_i| / ‖a‖∞`.
fn normwise_error(a: &[f64], n: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    a.iter()
        .zip(n)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

// 1 ------------------------------------------------------------------------

fn gradient_fd() -> Check {
    let model = Model::new(ModelConfig::desk()).map_err(|e| e.to_string())?;
    let records = synth(20, 101);
    let mut worst = 0.0f64;
    for r in &records {
        let prep = model.prepare(r).map_err(|e| e.to_string())?;
        let frames = compute_frames(&prep.coords).map_err(|e| e.to_string())?;
        let analytic = energy_grad_ligand(&model, r).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = analytic.iter().flatten().copied().collect();

        let base = prep.coords_flat();
        let lig: Vec<usize> = prep
            .ligand
            .iter()
            .flat_map(|&i| [3 * i, 3 * i + 1, 3 * i + 2])
            .collect();
        let point: Vec<f64> = lig.iter().map(|&k| base[k]).collect();
        let numeric = numeric_gradient(
            |p| {
                let mut x = base.clone();
                for (&k, &v) in lig.iter().zip(p) {
                    x[k] = v;
                }
                let energy_at = || -> dualbind_core::Result<f64> {
                    let g = Graph::<f64>::new();
                    let bound = model.params.bind(&g, false)?;
                    let xt = g.constant(x.clone(), &[prep.n_atoms(), 3])?;
                    Ok(energy_with_frames(
                        &bound,
                        &model.config,
                        &prep,
                        &xt,
                        &frames,
                        &mut Mode::Eval,
                    )?
                    .item())
                };
                energy_at().map_err(|e| dualbind_autodiff::AutodiffError::InvalidArgument {
                    op: "energy",
                    msg: e.to_string(),
                })
            },
            &point,
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(normwise_error(&analytic, &numeric));
    }
    ensure(
        worst <= 1e-5,
        format!("max relative error {worst:.3e} > 1e-5"),
    )?;
    Ok(format!("max relative error {worst:.2e} over 20 complexes"))
}

// 2 ------------------------------------------------------------------------

/// `E = Σ_atoms tanh(X W1 + b1) w2`.
fn toy_energy(
    x: &Tensor,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
) -> dualbind_autodiff::Result<Tensor> {
    x.matmul(w1)?.add(b1)?.tanh()?.matmul(w2)?.sum()
}

fn toy_dsm(
    sample: &PerturbationSample,
    theta: &[Vec<f64>],
    h: usize,
    want_grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let g = Graph::<f64>::new();
    let shapes: [&[usize]; 3] = [&[3, h], &[h], &[h, 1]];
    let params: Vec<Tensor> = theta
        .iter()
        .zip(shapes)
        .map(|(d, s)| g.leaf(d.clone(), s, want_grad).unwrap())
        .collect();
    let n = sample.perturbed.len();
    let xt = g
        .param(
            sample.perturbed.iter().flatten().copied().collect(),
            &[n, 3],
        )
        .unwrap();
    let e = toy_energy(&xt, &params[0], &params[1], &params[2]).unwrap();
    let grad = e.backward(&[&xt]).unwrap().grads.remove(0);
    let loss = dsm_loss(sample, &grad.index_select(&sample.ligand).unwrap(), false).unwrap();
    let grads = if want_grad {
        let refs: Vec<&Tensor> = params.iter().collect();
        loss.backward(&refs)
            .unwrap()
            .grads
            .iter()
            .map(|t| t.to_vec())
            .collect()
    } else {
        Vec::new()
    };
    (loss.item(), grads)
}

fn second_order() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 8;
    let theta: Vec<Vec<f64>> = [3 * h, h, h]
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-0.8..0.8)).collect())
        .collect();
    let coords: Vec<[f64; 3]> = (0..6)
        .map(|_| [0; 3].map(|_| rng.random_range(-1.5..1.5)))
        .collect();
    let sample =
        perturb_ligand(&coords, &[0, 2, 3, 5], 0.3, 0.3, &mut rng).map_err(|e| e.to_string())?;
    let (_, analytic) = toy_dsm(&sample, &theta, h, true);
    let mut worst = 0.0f64;
    for (t, a) in analytic.iter().enumerate() {
        let numeric = numeric_gradient(
            |p| {
                let mut th = theta.clone();
                th[t] = p.to_vec();
                Ok(toy_dsm(&sample, &th, h, false).0)
            },
            &theta[t],
            1e-6,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(normwise_error(a, &numeric));
    }
    ensure(
        worst <= 1e-4,
        format!("max relative error {worst:.3e} > 1e-4"),
    )?;
    Ok(format!(
        "max relative error {worst:.2e} over {} parameters",
        5 * h
    ))
}

// 3 ------------------------------------------------------------------------

fn invariance() -> Check {
    let model = Model::new(ModelConfig::desk()).map_err(|e| e.to_string())?;
    let records = synth(100, 303);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_e, mut worst_g) = (0.0f64, 0.0f64);
    for r in &records {
        let e0 = energy(&model, r, &mut Mode::Eval).map_err(|e| e.to_string())?;
        let g0 = energy_grad_ligand(&model, r).map_err(|e| e.to_string())?;
        let g0_norm = g0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..10 {
            let rot = random_rotation(&mut rng);
            let t = [0; 3].map(|_| rng.random_range(-25.0..25.0));
            let moved = r.transformed(&rot, t);
            let e1 = energy(&model, &moved, &mut Mode::Eval).map_err(|e| e.to_string())?;
            worst_e = worst_e.max((e1 - e0).abs() / e0.abs().max(1.0));
            let g1 = energy_grad_ligand(&model, &moved).map_err(|e| e.to_string())?;
            let mut diff = 0.0;
            for (a, b) in g1.iter().zip(&g0) {
                for (k, row) in rot.iter().enumerate() {
                    let rb = row[0] * b[0] + row[1] * b[1] + row[2] * b[2];
                    diff += (a[k] - rb).powi(2);
                }
            }
            if g0_norm > 0.0 {
                worst_g = worst_g.max(diff.sqrt() / g0_norm);
            }
        }
    }
    ensure(
        worst_e <= 1e-6,
        format!("energy deviation {worst_e:.3e} > 1e-6"),
    )?;
    ensure(
        worst_g <= 1e-6,
        format!("gradient deviation {worst_g:.3e} > 1e-6"),
    )?;
    Ok(format!(
        "energy {worst_e:.2e}, gradient {worst_g:.2e} over 1000 motions"
    ))
}

// 4 ------------------------------------------------------------------------

fn log_gaussian(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum();
    -sq / (2.0 * sigma * sigma) - d * (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

fn dsm_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_alg, mut worst_fd) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let n = 3 + trial % 7;
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|_| [0; 3].map(|_| rng.random_range(-5.0..5.0)))
            .collect();
        let ligand: Vec<usize> = (0..n).filter(|i| i % 3 != 1).collect();
        let s = perturb_ligand(&coords, &ligand, 0.1, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let grad: Vec<[f64; 3]> = ligand
            .iter()
            .map(|_| [0; 3].map(|_| rng.random_range(-20.0..20.0)))
            .collect();

        let g = Graph::<f64>::new();
        let gt = g
            .constant(grad.iter().flatten().copied().collect(), &[ligand.len(), 3])
            .unwrap();
        let via_loss = dsm_loss(&s, &gt, false).map_err(|e| e.to_string())?.item();

        let pert: Vec<[f64; 3]> = ligand.iter().map(|&i| s.perturbed[i]).collect();
        let clean: Vec<[f64; 3]> = ligand.iter().map(|&i| s.clean[i]).collect();
        let score =
            gaussian_conditional_score(&pert, &clean, s.sigma).map_err(|e| e.to_string())?;
        let mut via_score = 0.0;
        for (gr, sc) in grad.iter().zip(&score) {
            for k in 0..3 {
                via_score += (-gr[k] - sc[k]).powi(2);
            }
        }
        worst_alg = worst_alg.max((via_loss - via_score).abs() / via_loss.abs().max(1.0));

        let flat_p: Vec<f64> = pert.iter().flatten().copied().collect();
        let flat_c: Vec<f64> = clean.iter().flatten().copied().collect();
        let fd = numeric_gradient(|x| Ok(log_gaussian(x, &flat_c, s.sigma)), &flat_p, 1e-5)
            .map_err(|e| e.to_string())?;
        let sc: Vec<f64> = score.iter().flatten().copied().collect();
        worst_fd = worst_fd.max(
            sc.iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    ensure(
        worst_alg <= 1e-12,
        format!("algebra mismatch {worst_alg:.3e} > 1e-12"),
    )?;
    ensure(
        worst_fd <= 1e-6,
        format!("score vs log-density gradient {worst_fd:.3e} > 1e-6"),
    )?;
    Ok(format!(
        "algebra {worst_alg:.2e}, log-density gradient {worst_fd:.2e}"
    ))
}

// 5 ------------------------------------------------------------------------

/// Points drawn from N(0, s²I), perturbed with fixed σ. The score model
/// `∇E(x̃) = c·x̃` has DSM optimum `c* = 1/(σ² + s²)`.
fn score_recovery() -> Check {
    let (s, sigma, n) = (0.8f64, 0.5f64, 60_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let clean: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [0; 3].map(|_| {
                s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let sample = perturb_ligand(&clean, &all, sigma, sigma, &mut rng).map_err(|e| e.to_string())?;
    let optimum = 1.0 / (sigma * sigma + s * s);

    let mut c = 0.0f64;
    let lr = 0.4 / (3.0 * n as f64 * (sigma * sigma + s * s));
    for _ in 0..60 {
        let g = Graph::<f64>::new();
        let ct = g.param(vec![c], &[1]).unwrap();
        let xt = g
            .param(
                sample.perturbed.iter().flatten().copied().collect(),
                &[n, 3],
            )
            .unwrap();
        let e = xt
            .square()
            .unwrap()
            .sum()
            .unwrap()
            .mul(&ct)
            .unwrap()
            .scale(0.5)
            .unwrap();
        let grad = e.backward(&[&xt]).unwrap().grads.remove(0);
        let loss = dsm_loss(&sample, &grad, false).map_err(|e| e.to_string())?;
        let dc = loss.backward(&[&ct]).unwrap().grads[0].item();
        c -= lr * dc;
    }
    let rel = (c - optimum).abs() / optimum;
    ensure(
        rel <= 0.01,
        format!(
            "learned {c:.5}, optimum {optimum:.5}, off by {:.2}%",
            100.0 * rel
        ),
    )?;
    Ok(format!(
        "learned {c:.5} vs optimum {optimum:.5} ({:.3}%)",
        100.0 * rel
    ))
}

// 6 ------------------------------------------------------------------------

fn memorization() -> Check {
    let start = Instant::now();
    let records = cap_labels(&synth(32, 606), DEFAULT_CAP);
    let cfg = TrainConfig {
        epochs: 500,
        lambda: 2.0,
        ..TrainConfig::desk()
    };
    let model = Model::new(ModelConfig::desk()).map_err(|e| e.to_string())?;
    let out = fit(model, &records, &[], &cfg).map_err(|e| e.to_string())?;
    let ev = evaluate(&out.last.model, &records, Some(DEFAULT_CAP)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rmse = ev.report.rmse;
    ensure(
        rmse < 0.1,
        format!("train RMSE {rmse:.4} >= 0.1 ({secs:.0} s)"),
    )?;
    ensure(secs < 600.0, format!("took {secs:.0} s, limit 600 s"))?;
    Ok(format!("train RMSE {rmse:.4} in {secs:.0} s"))
}

// 7 ------------------------------------------------------------------------

const GAP_EPOCHS: usize = 30;

fn interaction_gap() -> Check {
    let start = Instant::now();
    let records = cap_labels(&synth(1000, 707), DEFAULT_CAP);
    let spec = split_by_smiles(&records, &[0.7, 0.15, 0.15], 707).map_err(|e| e.to_string())?;
    let parts = spec.apply(&records).map_err(|e| e.to_string())?;
    let (train, val, test) = (&parts[0], &parts[1], &parts[2]);
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let mut pair = [0.0; 2];
        for (k, ligand_only) in [false, true].into_iter().enumerate() {
            let mc = ModelConfig {
                ligand_only,
                init_seed: seed,
                ..ModelConfig::desk()
            };
            let tc = TrainConfig {
                epochs: GAP_EPOCHS,
                seed,
                ..TrainConfig::desk()
            };
            let out = fit(Model::new(mc).map_err(|e| e.to_string())?, train, val, &tc)
                .map_err(|e| e.to_string())?;
            pair[k] = evaluate(&out.best.model, test, Some(DEFAULT_CAP))
                .map_err(|e| e.to_string())?
                .report
                .rmse;
        }
        rows.push(pair);
    }
    let full = rows.iter().map(|r| r[0]).sum::<f64>() / 3.0;
    let lig = rows.iter().map(|r| r[1]).sum::<f64>() / 3.0;
    let gap = (lig - full) / lig;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "test RMSE full {full:.3} vs ligand-only {lig:.3}, gap {:.1}% in {secs:.0} s (per seed {rows:.3?})",
        100.0 * gap
    );
    ensure(gap >= 0.2, format!("{detail}; need >= 20%"))?;
    ensure(secs < 3600.0, format!("{detail}; limit 3600 s"))?;
    Ok(detail)
}

// 8 ------------------------------------------------------------------------

fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = (0..a.len()).map(|i| (a[i] - ma) * (b[i] - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|x| (x - mb) * (x - mb)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

/// Rank by counting: smaller values plus half of the tied block.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst = 0.0f64;
    let mut tied = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..80);
        let coarse = rng.random_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| {
            let v: f64 = rng.random_range(-12.0..2.0);
            if coarse {
                v.round()
            } else {
                v
            }
        };
        let truth: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let pred: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        if truth.iter().all(|&t| t == truth[0]) || pred.iter().all(|&p| p == pred[0]) {
            continue;
        }
        if coarse {
            tied += 1;
        }
        let m = compute_metrics(&pred, &truth).map_err(|e| e.to_string())?;
        let nf = n as f64;
        let tm = truth.iter().sum::<f64>() / nf;
        let ss_res: f64 = (0..n).map(|i| (truth[i] - pred[i]).powi(2)).sum();
        let ss_tot: f64 = truth.iter().map(|t| (t - tm).powi(2)).sum();
        let expect = [
            naive_pearson(&pred, &truth),
            1.0 - ss_res / ss_tot,
            naive_pearson(&naive_ranks(&pred), &naive_ranks(&truth)),
            (ss_res / nf).sqrt(),
        ];
        let got = [
            m.pearson.unwrap(),
            m.r2.unwrap(),
            m.spearman.unwrap(),
            m.rmse,
        ];
        for (g, e) in got.iter().zip(&expect) {
            worst = worst.max((g - e).abs());
        }
        ensure(
            average_ranks(&pred) == naive_ranks(&pred),
            "rank mismatch".into(),
        )?;
    }
    let t: Vec<f64> = (0..20).map(|i| i as f64 - 10.0).collect();
    let m = compute_metrics(&t, &t).map_err(|e| e.to_string())?;
    ensure(
        m.pearson == Some(1.0) && m.r2 == Some(1.0) && m.spearman == Some(1.0) && m.rmse == 0.0,
        format!("identity case not exact: {m:?}"),
    )?;
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    let m = compute_metrics(&neg, &t).map_err(|e| e.to_string())?;
    ensure(
        m.pearson == Some(-1.0) && m.spearman == Some(-1.0),
        format!("anti-correlation case not exact: {m:?}"),
    )?;
    ensure(worst <= 1e-9, format!("max deviation {worst:.3e} > 1e-9"))?;
    Ok(format!(
        "max deviation {worst:.2e} over 1000 pairs ({tied} with ties); trivial cases exact"
    ))
}

// 9 ------------------------------------------------------------------------

fn protocol() -> Check {
    let capped = cap_predictions(&[-1.2, -3.0, -2.999_999, -3.000_001, -9.9, 4.0], -3.0);
    ensure(
        capped == [-3.0, -3.0, -3.0, -3.000_001, -9.9, -3.0],
        format!("cap boundary wrong: {capped:?}"),
    )?;
    ensure(
        cap_predictions(&capped, -3.0) == capped,
        "cap not idempotent".into(),
    )?;

    ensure(
        lr_at_epoch(5e-4, 0.95, 0) == 5e-4,
        "epoch 0 schedule".into(),
    )?;
    ensure(
        lr_at_epoch(5e-4, 0.95, 1) == 5e-4 * 0.95,
        "epoch 1 schedule".into(),
    )?;
    // 5e-4 · 0.95^120 evaluated in exact rationals, rounded once.
    ensure(
        lr_at_epoch(5e-4, 0.95, 120) == f64::from_bits(0x3eb1cde03dc1cf8b),
        format!("epoch 120 schedule: {:e}", lr_at_epoch(5e-4, 0.95, 120)),
    )?;

    for d in 0..10u64 {
        let cfg = SynthConfig {
            n_complexes: 20 + 17 * d as usize,
            poses_per_ligand: 1 + (d as usize % 4),
            seed: 900 + d,
            ..SynthConfig::default()
        };
        let recs = synth_generate(&cfg).map_err(|e| e.to_string())?;
        let a = split_by_smiles(&recs, &[0.7, 0.15, 0.15], d).map_err(|e| e.to_string())?;
        let b = split_by_smiles(&recs, &[0.7, 0.15, 0.15], d).map_err(|e| e.to_string())?;
        ensure(a == b, format!("dataset {d}: split not deterministic"))?;
        let parts = a.apply(&recs).map_err(|e| e.to_string())?;
        let refs: Vec<&[ComplexRecord]> = parts.iter().map(Vec::as_slice).collect();
        ensure(
            smiles_overlap(&refs).is_empty(),
            format!("dataset {d}: SMILES overlap"),
        )?;
        ensure(
            parts.iter().map(Vec::len).sum::<usize>() == recs.len(),
            format!("dataset {d}: records lost"),
        )?;
    }

    let records = cap_labels(&synth(6, 909), DEFAULT_CAP);
    let tiny = ModelConfig {
        width: 8,
        layers: 1,
        heads: 2,
        ff_width: 16,
        pair_widths: vec![8],
        ..ModelConfig::desk()
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 3,
        ..TrainConfig::desk()
    };
    let out = fit(
        Model::new(tiny).map_err(|e| e.to_string())?,
        &records[..4],
        &records[4..],
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.dbnd"), dir.path().join("b.dbnd"));
    save_checkpoint(&out.last, &p1).map_err(|e| e.to_string())?;
    let loaded: Checkpoint = load_checkpoint(&p1).map_err(|e| e.to_string())?;
    save_checkpoint(&loaded, &p2).map_err(|e| e.to_string())?;
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    ensure(b1 == b2, "checkpoint save-load-save changed bytes".into())?;
    Ok(format!(
        "cap, schedule, 10 splits, {}-byte checkpoint round trip",
        b1.len()
    ))
}

// 10 -----------------------------------------------------------------------

/// synth → split → train → eval through files; returns the metric and
/// prediction CSVs.
fn end_to_end(dir: &std::path::Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let e = |e: dualbind_core::Error| e.to_string();
    let data = dir.join("data.jsonl");
    let cfg = SynthConfig {
        n_complexes: 48,
        seed: 1010,
        ..SynthConfig::default()
    };
    save_dataset(&data, &synth_generate(&cfg).map_err(e)?).map_err(e)?;
    let records = load_dataset(&data).map_err(e)?;
    let spec = split_by_smiles(&records, &[0.7, 0.15, 0.15], 3).map_err(e)?;
    let parts = spec.apply(&records).map_err(e)?;
    let names = ["train", "val", "test"];
    for (n, p) in names.iter().zip(&parts) {
        save_dataset(dir.join(format!("{n}.jsonl")), p).map_err(e)?;
    }
    let load =
        |n: &str| load_dataset(dir.join(format!("{n}.jsonl"))).map(|r| cap_labels(&r, DEFAULT_CAP));
    let (train, val, test) = (
        load("train").map_err(e)?,
        load("val").map_err(e)?,
        load("test").map_err(e)?,
    );
    let tc = TrainConfig {
        epochs: 3,
        seed: 10,
        ..TrainConfig::desk()
    };
    let out = fit(
        Model::new(ModelConfig::desk()).map_err(e)?,
        &train,
        &val,
        &tc,
    )
    .map_err(e)?;
    let ckpt = dir.join("best.dbnd");
    save_checkpoint(&out.best, &ckpt).map_err(e)?;
    let model = load_checkpoint(&ckpt).map_err(e)?.model;
    let ev = evaluate(&model, &test, Some(DEFAULT_CAP)).map_err(e)?;
    let (mut metrics, mut preds) = (Vec::new(), Vec::new());
    ev.report.write_csv(&mut metrics).map_err(e)?;
    dualbind_core::metrics::write_predictions(&ev.predictions, &mut preds).map_err(e)?;
    Ok((metrics, preds))
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = end_to_end(a.path())?;
    let rb = end_to_end(b.path())?;
    ensure(ra.0 == rb.0, "metric CSVs differ".into())?;
    ensure(ra.1 == rb.1, "prediction CSVs differ".into())?;
    Ok(format!("identical metric CSVs ({} bytes)", ra.0.len()))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "gradient vs finite differences", gradient_fd),
        (2, "second-order gradient", second_order),
        (3, "rigid-motion invariance", invariance),
        (4, "score-matching algebra", dsm_algebra),
        (5, "linear score recovery", score_recovery),
        (6, "memorization", memorization),
        (7, "interaction gap", interaction_gap),
        (8, "metric oracles", metric_oracles),
        (9, "protocol exactness", protocol),
        (10, "end-to-end determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
