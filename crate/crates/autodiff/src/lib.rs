//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on an append-only [`Graph`]. [`Tensor::backward`]
//! walks the record in reverse and expresses each vector-Jacobian product
//! with the same recorded primitives, so gradients are themselves
//! differentiable. Second-order quantities such as `d/dθ ‖∇ₓE‖²` are
//! obtained by calling `backward` on an expression built from a gradient.
//!
//! ```
//! use dualbind_autodiff::Graph;
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(vec![2.0], &[]).unwrap();
//! let y = x.mul(&x).unwrap().mul(&x).unwrap(); // x³
//! let dy = y.backward(&[&x]).unwrap().grads.remove(0); // 3x²
//! let d2y = dy.backward(&[&x]).unwrap().grads.remove(0); // 6x
//! assert_eq!(dy.item(), 12.0);
//! assert_eq!(d2y.item(), 12.0);
//! ```

mod backward;
pub mod check;
mod error;
mod graph;
mod ops;
mod real;
pub mod shape;

pub use backward::Gradients;
pub use check::{finite_difference_check, numeric_gradient, relative_error, FdReport};
pub use error::{AutodiffError, Result};
pub use graph::{Graph, ReplayReport, Tensor};
pub use real::{Precision, Real};

/// Plain row-major array, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T = f64> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> TensorData<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape::numel(&shape) != data.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "TensorData::new",
                msg: format!("{} elements do not fill shape {:?}", data.len(), shape),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape::numel(&shape);
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cast<U: Real>(&self) -> TensorData<U> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_leaf(&self, graph: &Graph<T>, requires_grad: bool) -> Result<Tensor<T>> {
        graph.leaf(self.data.clone(), &self.shape, requires_grad)
    }
}

impl<T: Real> Tensor<T> {
    pub fn data(&self) -> TensorData<T> {
        TensorData {
            shape: self.shape().to_vec(),
            data: self.to_vec(),
        }
    }
}
