//! Dense row-major tensor and the matrix kernels everything else builds on.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor: `dims` shape, `data` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch(format!(
                "zero-sized dimension in {dims:?}"
            )));
        }
        if expect != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} expect {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![F::zero(); n],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    /// Matrix entry accessor; tensor must be rank 2.
    pub fn at(&self, row: usize, col: usize) -> F {
        debug_assert_eq!(self.dims.len(), 2);
        self.data[row * self.dims[1] + col]
    }

    /// Rows of a rank-2 tensor as contiguous slices.
    pub fn rows(&self) -> std::slice::ChunksExact<'_, F> {
        debug_assert_eq!(self.dims.len(), 2);
        self.data.chunks_exact(self.dims[1])
    }

    /// Same shape, data transformed elementwise.
    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
        assert_eq!(self.dims, other.dims, "zip_map shape mismatch");
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        // Sequential left fold: the reduction order is part of the
        // determinism contract.
        self.data.iter().fold(F::zero(), |acc, &x| acc + x)
    }

    /// Reinterpret under new dims with identical element count.
    pub fn reshaped(&self, dims: Vec<usize>) -> Result<Tensor<F>> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reshape {:?} ({} values) to {dims:?}",
                self.dims,
                self.data.len()
            )));
        }
        Ok(Tensor {
            dims,
            data: self.data.clone(),
        })
    }
}

/// C = A @ B for row-major A[m,k], B[k,n]. The i-k-j loop keeps the inner
/// update running over contiguous rows of B and C so it vectorizes.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.dims().len(), 2, "matmul lhs rank");
    assert_eq!(b.dims().len(), 2, "matmul rhs rank");
    let (m, ka) = (a.dims()[0], a.dims()[1]);
    let (kb, n) = (b.dims()[0], b.dims()[1]);
    assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let a_row = &a.data()[i * ka..(i + 1) * ka];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data()[k * n..(k + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *c = *c + aik * bv;
            }
        }
    }
    Tensor {
        dims: vec![m, n],
        data: out,
    }
}

/// Row-major transpose of a rank-2 tensor.
pub fn transpose<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.dims().len(), 2, "transpose rank");
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor {
        dims: vec![n, m],
        data: out,
    }
}

/// A @ B^T, via explicit transpose so the product runs through the fast
/// i-k-j kernel instead of latency-bound dot products.
pub fn matmul_nt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    matmul(a, &transpose(b))
}

/// A^T @ B.
pub fn matmul_tn<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    matmul(&transpose(a), b)
}
