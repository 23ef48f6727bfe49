//! Dense f64 tensors with a single-use reverse-mode tape.
//!
//! Values are plain row-major `Vec<f64>` buffers. Differentiation is explicit:
//! build a [`Tape`], register inputs and parameters as leaves, compose ops,
//! then call [`Tape::backward`] on a scalar node. Gradients accumulate into
//! the `grad` slots of the parameters held in a [`ParamStore`].

mod gradcheck;
pub(crate) mod kernels;
mod store;
mod tape;

pub use gradcheck::{finite_difference_check, EntrySelection, GradCheckReport};
pub use store::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of bounds for shape {shape:?}")]
    AxisOutOfBounds { axis: usize, shape: Vec<usize> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major tensor.
///
/// `grad` is only ever allocated for tensors that require gradients and have
/// received at least one accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len]).expect("zero-sized dimension")
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(Vec::new(), vec![value]).unwrap()
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape {
                shape: vec![rows.len(), cols],
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        Self::new(shape.to_vec(), data).expect("zero-sized dimension")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count when viewed as a matrix (leading dims flattened).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.data.len() / self.cols(),
        }
    }

    /// Size of the trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.set_requires_grad(on);
        self
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// `grad += delta`. Ignored for tensors that do not require gradients.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        if !self.requires_grad {
            return;
        }
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.data, &other.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose")?;
        Tensor::new(vec![n, m], kernels::transpose(&self.data, m, n))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_layout(&self.shape, axis)?;
        let mut out = self.data.clone();
        kernels::softmax_axis(&mut out, outer, len, inner);
        Tensor::new(self.shape.clone(), out)
    }

    /// Normalizes over the trailing axis.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        check_layer_norm(self, gamma, beta, eps)?;
        let cols = self.cols();
        let mut out = vec![0.0; self.len()];
        let mut xhat = vec![0.0; self.len()];
        let mut rstd = vec![0.0; self.rows()];
        kernels::layer_norm_rows(
            &self.data, &gamma.data, &beta.data, eps, cols, &mut out, &mut xhat, &mut rstd,
        );
        Tensor::new(self.shape.clone(), out)
    }

    fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }

    pub(crate) fn debug_check_finite(&self, op: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "{op} produced a non-finite value"
        );
    }
}

/// (outer, axis length, inner) strides for reducing along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfBounds {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn check_layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(TensorError::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let cols = x.cols();
    for p in [gamma, beta] {
        if p.len() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: x.shape.clone(),
                right: p.shape.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data[i * k + p] * b.data[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_small_known_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let expected = naive_matmul(&a, &b);
        assert_eq!(expected, vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &expected[..]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::from_rows(&[
            vec![1.5, -2.0, 0.25],
            vec![3.0, 4.0, -1.0],
            vec![0.0, 7.0, 9.5],
        ])
        .unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
        let b = Tensor::filled(&[3, 4], 2.5);
        let z = Tensor::zeros(&[2, 3]).matmul(&b).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap().softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::new(vec![2], vec![0.0, 2f64.ln()]).unwrap().softmax(0).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let s = Tensor::new(vec![3], vec![1000.0; 3]).unwrap().softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(Tensor::zeros(&[2, 2]).softmax(2).is_err());
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let y = Tensor::new(vec![1, 3], vec![5.0; 3])
            .unwrap()
            .layer_norm(&ones, &zeros, 1e-5)
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        // closed form with eps -> 0: mean 2, variance 1
        let g = Tensor::filled(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let y = Tensor::new(vec![1, 2], vec![1.0, 3.0])
            .unwrap()
            .layer_norm(&g, &b, 1e-12)
            .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);

        let beta = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = Tensor::from_rows(&[vec![1.0, 9.0, -4.0], vec![0.1, 0.2, 0.3]])
            .unwrap()
            .layer_norm(&Tensor::zeros(&[3]), &beta, 1e-5)
            .unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn layer_norm_rejects_bad_eps() {
        let x = Tensor::zeros(&[1, 2]);
        let g = Tensor::zeros(&[2]);
        assert!(matches!(x.layer_norm(&g, &g, 0.0), Err(TensorError::Config(_))));
        assert!(matches!(x.layer_norm(&g, &g, -1.0), Err(TensorError::Config(_))));
    }

    #[test]
    fn new_rejects_inconsistent_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(&[2]).with_requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad(), Some(&[1.5, 2.5][..]));
        let mut frozen = Tensor::zeros(&[2]);
        frozen.accumulate_grad(&[1.0, 1.0]);
        assert_eq!(frozen.grad(), None);
    }
}
