//! Row-major dense tensors of rank 1 or 2.

use super::Scalar;
use crate::{Error, Result};

/// A dense tensor. Rank-1 tensors behave as a single row where a 2-D
/// interpretation is needed.
///
/// Invariant: `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.is_empty() || shape.len() > 2 {
            return Err(Error::ShapeMismatch {
                name: "tensor literal".into(),
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a rank-2 tensor from `rows * cols` values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count under the 2-D view (rank-1 tensors are one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count under the 2-D view.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Casts every element through `f64` into another scalar type.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| G::from(x.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// Euclidean norm of all elements.
    pub fn norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }
}

/// `c = a · b` for row-major `a: [m,k]`, `b: [k,n]`.
pub(crate) fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// `c = a · bᵀ` for row-major `a: [m,k]`, `b: [n,k]`.
pub(crate) fn matmul_tb<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *cv = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `c = aᵀ · b` for row-major `a: [k,m]`, `b: [k,n]`.
pub(crate) fn matmul_ta<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}
