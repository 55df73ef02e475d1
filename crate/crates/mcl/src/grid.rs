//! Feature grids and the pure (untraced) versions of the core operations.
//!
//! A [`FeatureGrid`] is N = height*width feature vectors of dimension
//! `channels`, stored as an [N, C] tensor in grid row-major order. The
//! traced counterparts of these operations live on the tape; both paths
//! share the numeric kernels defined here.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_nt, Tensor};

/// Clamp margin for `stable_arccos`. Keeps |d/dx arccos| below ~2.24e3 so
/// gradients stay finite when a positive pair is exactly aligned.
pub const ARCCOS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<F> {
    height: usize,
    width: usize,
    channels: usize,
    tensor: Tensor<F>,
}

impl<F: Scalar> FeatureGrid<F> {
    pub fn new(height: usize, width: usize, channels: usize, tensor: Tensor<F>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::DimensionMismatch(format!(
                "grid dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if tensor.dims() != [height * width, channels] {
            return Err(Error::DimensionMismatch(format!(
                "grid tensor dims {:?} do not match [{}, {}]",
                tensor.dims(),
                height * width,
                channels
            )));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            tensor,
        })
    }

    pub fn from_rows(height: usize, width: usize, rows: Vec<Vec<F>>) -> Result<Self> {
        let channels = rows.first().map(|r| r.len()).unwrap_or(0);
        let data: Vec<F> = rows.into_iter().flatten().collect();
        let tensor = Tensor::new(vec![height * width, channels], data)?;
        FeatureGrid::new(height, width, channels, tensor)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of grid positions (rows).
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false // dims are validated positive
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.tensor.data()[i * self.channels..(i + 1) * self.channels]
    }

    /// Each row scaled to unit L2 norm; rows with norm below `epsilon` are
    /// divided by `epsilon` instead, so zero rows stay zero.
    pub fn l2_normalize_rows(&self, epsilon: F) -> FeatureGrid<F> {
        assert!(epsilon > F::zero(), "epsilon must be positive");
        let data = normalize_rows_data(self.tensor.data(), self.channels, epsilon);
        FeatureGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            tensor: Tensor::new(vec![self.len(), self.channels], data).unwrap(),
        }
    }

    pub fn is_row_normalized(&self, tol: F) -> bool {
        self.tensor.rows().all(|row| {
            let norm = row_norm(row);
            (norm - F::one()).abs() <= tol || norm == F::zero()
        })
    }
}

pub(crate) fn row_norm<F: Scalar>(row: &[F]) -> F {
    row.iter()
        .fold(F::zero(), |acc, &x| acc + x * x)
        .sqrt()
}

pub(crate) fn normalize_rows_data<F: Scalar>(data: &[F], channels: usize, epsilon: F) -> Vec<F> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(channels) {
        let scale = F::one() / row_norm(row).max(epsilon);
        out.extend(row.iter().map(|&x| x * scale));
    }
    out
}

/// Pairwise cosine similarities: entry (i, j) = a_i . b_j. Both grids must
/// already be row-normalized for the entries to be cosines.
pub fn cosine_similarity_matrix<F: Scalar>(
    a: &FeatureGrid<F>,
    b: &FeatureGrid<F>,
) -> Result<Tensor<F>> {
    if a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "cosine similarity needs equal channels, got {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(matmul_nt(a.tensor(), b.tensor()))
}

/// Row-wise softmax of `sharpness * m`, stabilized by subtracting the row
/// maximum before exponentiation.
pub fn softmax_rows<F: Scalar>(m: &Tensor<F>, sharpness: F) -> Tensor<F> {
    assert!(sharpness > F::zero(), "sharpness must be positive");
    assert_eq!(m.dims().len(), 2, "softmax_rows expects a matrix");
    let mut out = Vec::with_capacity(m.len());
    for row in m.rows() {
        let hi = row
            .iter()
            .fold(F::neg_infinity(), |acc, &x| acc.max(sharpness * x));
        let start = out.len();
        let mut sum = F::zero();
        for &x in row {
            let e = (sharpness * x - hi).exp();
            sum = sum + e;
            out.push(e);
        }
        let inv = F::one() / sum;
        for v in &mut out[start..] {
            *v = *v * inv;
        }
    }
    Tensor::new(m.dims().to_vec(), out).unwrap()
}

/// arccos with the argument clamped to [-1+1e-7, 1-1e-7]. Output lies in
/// (0, pi); the derivative is understood as -1/sqrt(1-x^2) at the clamped
/// argument.
pub fn stable_arccos<F: Scalar>(x: F) -> F {
    clamp_for_arccos(x).acos()
}

pub(crate) fn clamp_for_arccos<F: Scalar>(x: F) -> F {
    let delta = F::from_f64(ARCCOS_CLAMP);
    let hi = F::one() - delta;
    let lo = delta - F::one();
    x.min(hi).max(lo)
}
