//! Central finite-difference checks for gradients.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Tensor};

/// Outcome of comparing `backward()` against central differences.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Element where the maximum was attained.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference gradient of a plain scalar function.
///
/// Errors if `f` is non-finite at any probe, naming the element and the
/// signed step.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(AutodiffError::InvalidArgument {
            op: "numeric_gradient",
            msg: format!("step must be positive, got {step}"),
        });
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let mut probe = |delta: f64, x: &mut Vec<f64>| -> Result<f64> {
            x[i] = point[i] + delta;
            let v = f(x)?;
            x[i] = point[i];
            if v.is_finite() {
                Ok(v)
            } else {
                Err(AutodiffError::NonFiniteProbe {
                    index: i,
                    step: delta,
                })
            }
        };
        let plus = probe(step, &mut x)?;
        let minus = probe(-step, &mut x)?;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Compare the reverse-mode gradient of `f` at `point` with central
/// differences of step `step`.
///
/// `f` receives a fresh graph and the input tensor (a leaf of the given
/// shape) and must return a single-element tensor.
pub fn finite_difference_check<F>(
    f: F,
    point: &[f64],
    shape: &[usize],
    step: f64,
) -> Result<FdReport>
where
    F: Fn(&Graph<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    let graph = Graph::new();
    let x = graph.param(point.to_vec(), shape)?;
    let out = f(&graph, &x)?;
    let analytic = out.backward(&[&x])?.grads[0].to_f64_vec();

    let numeric = numeric_gradient(
        |p| {
            let g = Graph::new();
            let x = g.constant(p.to_vec(), shape)?;
            let out = f(&g, &x)?;
            if out.numel() != 1 {
                return Err(AutodiffError::NotScalar(out.shape().to_vec()));
            }
            Ok(out.item())
        },
        point,
        step,
    )?;

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold(
            (0, 0.0),
            |best, (i, e)| if e > best.1 { (i, e) } else { best },
        );

    Ok(FdReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
