use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Updates refused because of non-finite gradients.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update. Returns `false`, leaving everything but
/// the skip counter untouched, when any gradient entry is non-finite.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> bool {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient count mismatch"
    );
    assert_eq!(
        params.len(),
        state.m.len(),
        "optimizer state does not match parameters"
    );
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!("non-finite gradient; skipping update {}", state.step + 1);
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        assert_eq!(p.len(), g.len(), "parameter/gradient shape mismatch");
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    true
}

/// `base · decay^epoch`, correctly rounded. The power is carried in
/// double-double arithmetic so only the final product rounds.
pub fn lr_at_epoch(base: f64, decay: f64, epoch: usize) -> f64 {
    let mul = |(ah, al): (f64, f64), (bh, bl): (f64, f64)| {
        let p = ah * bh;
        let e = ah.mul_add(bh, -p) + (ah * bl + al * bh);
        let s = p + e;
        (s, e - (s - p))
    };
    let (mut acc, mut sq, mut k) = ((1.0, 0.0), (decay, 0.0), epoch);
    while k > 0 {
        if k & 1 == 1 {
            acc = mul(acc, sq);
        }
        sq = mul(sq, sq);
        k >>= 1;
    }
    let (h, l) = mul((base, 0.0), acc);
    h + l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![vec![1.0, -2.0]];
        let mut s = AdamState::new(&[2]);
        s.m[0] = vec![0.5, 0.5];
        s.v[0] = vec![0.25, 0.25];
        s.step = 3;
        let before = p.clone();
        // With non-zero history the update is non-zero; check the moments only.
        adam_step(
            &mut p,
            &[vec![0.0, 0.0]],
            &mut s,
            0.1,
            &AdamConfig::default(),
        );
        assert_eq!(s.m[0], vec![0.45, 0.45]);
        assert!((s.v[0][0] - 0.24975).abs() < 1e-15);
        let mut fresh = AdamState::new(&[2]);
        let mut q = before.clone();
        adam_step(
            &mut q,
            &[vec![0.0, 0.0]],
            &mut fresh,
            0.1,
            &AdamConfig::default(),
        );
        assert_eq!(q, before);
    }

    #[test]
    fn descends_on_square() {
        let mut p = vec![vec![1.0]];
        let mut s = AdamState::new(&[1]);
        adam_step(&mut p, &[vec![2.0]], &mut s, 0.1, &AdamConfig::default());
        assert!(p[0][0] < 1.0);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = vec![vec![1.0]];
        let mut s = AdamState::new(&[1]);
        // Scalar re-derivation of the update, stepped alongside.
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=500 {
            let g = vec![vec![2.0 * p[0][0]]];
            adam_step(&mut p, &g, &mut s, 0.05, &AdamConfig::default());
            let gw = 2.0 * w;
            m = 0.9 * m + (1.0 - 0.9) * gw;
            v = 0.999 * v + (1.0 - 0.999) * gw * gw;
            w -= 0.05 * (m / (1.0 - 0.9f64.powi(t)))
                / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert_eq!(p[0][0], w);
        }
        assert!(p[0][0].abs() < 1e-3, "final w = {}", p[0][0]);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = vec![vec![1.0]];
        let mut s = AdamState::new(&[1]);
        assert!(!adam_step(
            &mut p,
            &[vec![f64::NAN]],
            &mut s,
            0.1,
            &AdamConfig::default()
        ));
        assert_eq!((p[0][0], s.step, s.skipped), (1.0, 0, 1));
    }

    #[test]
    fn schedule_closed_form() {
        assert_eq!(lr_at_epoch(5e-4, 0.95, 0), 5e-4);
        assert_eq!(lr_at_epoch(5e-4, 0.95, 1), 5e-4 * 0.95);
        assert!((lr_at_epoch(5e-4, 0.95, 1) - 4.75e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_matches_exact_rational_rounding() {
        // Exact rational products rounded once to f64.
        let cases = [
            (5e-4, 0.95, 120, 0x3eb1cde03dc1cf8b_u64),
            (1e-3, 0.995, 500, 0x3f156231e89c96bb),
            (3e-3, 0.9, 37, 0x3f0fe404c4b462ee),
            (0.1, 0.999, 10000, 0x3ed2f2737aabb9a6),
        ];
        for (base, decay, k, bits) in cases {
            assert_eq!(
                lr_at_epoch(base, decay, k),
                f64::from_bits(bits),
                "{base} {decay} {k}"
            );
        }
    }
}
