//! Differentiable operations on [`Tensor`].
//!
//! Binary element-wise operations broadcast per [`crate::shape`]. Matrix
//! products are 2-D only.

use std::rc::Rc;

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Op, Tensor};
use crate::real::Real;
use crate::shape::{broadcast_shape, broadcasts_to, numel};

impl<T: Real> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: Op<T>) -> Result<Tensor<T>> {
        let out = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
            AutodiffError::ShapeMismatch {
                op: op.name(),
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            }
        })?;
        self.graph.record(op, &[self, other], out)
    }

    fn unary(&self, op: Op<T>) -> Result<Tensor<T>> {
        self.graph.record(op, &[self], self.shape.clone())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Sub)
    }

    /// Element-wise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Div)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary(Op::Neg)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<T>> {
        self.unary(Op::Scale(T::from_f64(c)))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<T>> {
        self.unary(Op::AddScalar(T::from_f64(c)))
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.mul(self)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary(Op::Exp)
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        self.unary(Op::Log)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary(Op::Sqrt)
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary(Op::Sigmoid)
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary(Op::Tanh)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary(Op::Relu)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Result<Tensor<T>> {
        self.mul(&self.sigmoid()?)
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` transposes the last two axes when its
    /// flag is set. Operands are both matrices, or both rank-3 stacks with the
    /// same leading extent (one product per slice).
    pub fn matmul_t(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        let r = self.rank();
        if r != other.rank() || !(r == 2 || r == 3) {
            return Err(mismatch());
        }
        if r == 3 && self.shape[0] != other.shape[0] {
            return Err(mismatch());
        }
        let (sa, sb) = (&self.shape[r - 2..], &other.shape[r - 2..]);
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(mismatch());
        }
        let out = if r == 3 {
            vec![self.shape[0], m, n]
        } else {
            vec![m, n]
        };
        self.graph
            .record(Op::MatMul { ta, tb }, &[self, other], out)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(AutodiffError::InvalidArgument {
                op: "transpose",
                msg: format!("expected a matrix, got shape {:?}", self.shape),
            });
        }
        self.graph
            .record(Op::Transpose, &[self], vec![self.shape[1], self.shape[0]])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        if shape == self.shape.as_slice() {
            return Ok(self.clone());
        }
        self.graph.record(Op::Reshape, &[self], shape.to_vec())
    }

    /// Sum over the axes that `target` broadcasts along.
    pub fn sum_to(&self, target: &[usize]) -> Result<Tensor<T>> {
        if target == self.shape.as_slice() {
            return Ok(self.clone());
        }
        if !broadcasts_to(target, &self.shape) {
            return Err(AutodiffError::ShapeMismatch {
                op: "sum_to",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        self.graph.record(Op::SumTo, &[self], target.to_vec())
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor<T>> {
        if target == self.shape.as_slice() {
            return Ok(self.clone());
        }
        if !broadcasts_to(&self.shape, target) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        self.graph.record(Op::BroadcastTo, &[self], target.to_vec())
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<T>> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(AutodiffError::InvalidArgument {
                op,
                msg: format!("axis {axis} out of range for shape {:?}", self.shape),
            });
        }
        Ok(())
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.check_axis("sum_axis", axis)?;
        let mut kept = self.shape.clone();
        kept[axis] = 1;
        let s = self.sum_to(&kept)?;
        if keepdim {
            Ok(s)
        } else {
            let mut squeezed = self.shape.clone();
            squeezed.remove(axis);
            s.reshape(&squeezed)
        }
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        self.check_axis("mean_axis", axis)?;
        let n = self.shape[axis].max(1) as f64;
        self.sum_axis(axis, keepdim)?.scale(1.0 / n)
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(AutodiffError::InvalidArgument {
            op: "concat",
            msg: "nothing to concatenate".into(),
        })?;
        first.check_axis("concat", axis)?;
        let mut out = first.shape.clone();
        out[axis] = 0;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            out[axis] += p.shape[axis];
        }
        first.graph.record(Op::Concat { axis }, parts, out)
    }

    /// Elements `start..start + len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        self.check_axis("narrow", axis)?;
        if start + len > self.shape[axis] {
            return Err(AutodiffError::InvalidArgument {
                op: "narrow",
                msg: format!(
                    "range {start}..{} exceeds extent {} of axis {axis}",
                    start + len,
                    self.shape[axis]
                ),
            });
        }
        if start == 0 && len == self.shape[axis] {
            return Ok(self.clone());
        }
        let mut out = self.shape.clone();
        out[axis] = len;
        self.graph.record(Op::Narrow { axis, start }, &[self], out)
    }

    /// Embed into zeros of extent `total` along `axis`, starting at `start`.
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor<T>> {
        self.check_axis("pad", axis)?;
        if start + self.shape[axis] > total {
            return Err(AutodiffError::InvalidArgument {
                op: "pad",
                msg: format!(
                    "extent {} at offset {start} does not fit in {total}",
                    self.shape[axis]
                ),
            });
        }
        let mut out = self.shape.clone();
        out[axis] = total;
        self.graph.record(Op::Pad { axis, start }, &[self], out)
    }

    /// Gather along axis 0.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        self.index_select_shared(Rc::from(indices))
    }

    pub fn index_select_shared(&self, indices: Rc<[usize]>) -> Result<Tensor<T>> {
        self.check_axis("index_select", 0)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape[0]) {
            return Err(AutodiffError::InvalidArgument {
                op: "index_select",
                msg: format!("index {bad} out of range for {} rows", self.shape[0]),
            });
        }
        let mut out = self.shape.clone();
        out[0] = indices.len();
        self.graph.record(Op::IndexSelect { indices }, &[self], out)
    }

    /// Scatter-add the rows of `self` into `rows` zero rows at `indices`.
    pub fn index_add(&self, indices: &[usize], rows: usize) -> Result<Tensor<T>> {
        self.index_add_shared(Rc::from(indices), rows)
    }

    pub fn index_add_shared(&self, indices: Rc<[usize]>, rows: usize) -> Result<Tensor<T>> {
        self.check_axis("index_add", 0)?;
        if indices.len() != self.shape[0] {
            return Err(AutodiffError::InvalidArgument {
                op: "index_add",
                msg: format!("{} indices for {} rows", indices.len(), self.shape[0]),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::InvalidArgument {
                op: "index_add",
                msg: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let mut out = self.shape.clone();
        out[0] = rows;
        self.graph.record(Op::IndexAdd { indices }, &[self], out)
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        self.check_axis("softmax", axis)?;
        self.unary(Op::Softmax { axis })
    }

    /// Normalize over the last axis to zero mean and unit variance
    /// (biased variance, `eps` added before the square root).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor<T>> {
        let axis = self
            .rank()
            .checked_sub(1)
            .ok_or(AutodiffError::InvalidArgument {
                op: "layer_norm",
                msg: "scalar input".into(),
            })?;
        let centered = self.sub(&self.mean_axis(axis, true)?)?;
        let var = centered.square()?.mean_axis(axis, true)?;
        centered.div(&var.add_scalar(eps)?.sqrt()?)
    }

    /// Inverted dropout: zero each element with probability `p` and scale
    /// survivors by `1/(1-p)`. The mask is recorded as a constant input of
    /// an element-wise product.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument {
                op: "dropout",
                msg: format!("rate {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = self.graph.constant(mask, &self.shape)?;
        self.mul(&mask)
    }
}

/// Mask with ones where `x > 0`, as plain data.
pub(crate) fn positive_mask<T: Real>(x: &[T]) -> Vec<T> {
    x.iter()
        .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
        .collect()
}
