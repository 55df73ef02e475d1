//! Self-correlation maps: per-position similarity profiles used as
//! structure features.
//!
//! Row i of the map is the vector of similarities between feature i and
//! every feature of the same grid. The flattened row passes through a
//! learned linear projection and the result is concatenated with the base
//! feature (then renormalized) so cosine similarity sees both appearance
//! and layout.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// N x N similarity map of one grid; symmetric for any input because the
/// underlying product mirrors its lower triangle.
#[derive(Debug, Clone)]
pub struct SelfCorrelationMap<F> {
    grid: Tensor<F>,
    height: usize,
    width: usize,
}

impl<F: Scalar> SelfCorrelationMap<F> {
    pub fn grid(&self) -> &Tensor<F> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Learned linear map from a flattened correlation row to `d_proj` dims.
#[derive(Debug, Clone)]
pub struct ScmProjection<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> ScmProjection<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>) -> Result<Self> {
        if weight.dims().len() != 2 {
            return Err(Error::DimensionMismatch(
                "projection weight must be [N, d_proj]".into(),
            ));
        }
        if weight.dims()[1] != bias.len() || weight.dims()[1] == 0 {
            return Err(Error::DimensionMismatch(format!(
                "projection bias length {} does not match weight columns {}",
                bias.len(),
                weight.dims()[1]
            )));
        }
        Ok(ScmProjection { weight, bias })
    }

    /// Fan-in scaled uniform init (bound sqrt(6 / N)), zero bias.
    pub fn init(n: usize, d_proj: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / n as f64).sqrt();
        let data: Vec<F> = (0..n * d_proj)
            .map(|_| F::from_f64(rng.uniform(-bound, bound)))
            .collect();
        ScmProjection {
            weight: Tensor::new(vec![n, d_proj], data).unwrap(),
            bias: Tensor::zeros(vec![d_proj]),
        }
    }

    pub fn d_proj(&self) -> usize {
        self.weight.dims()[1]
    }
}

/// Traced map computation: gram matrix of the grid node.
pub fn compute_scm_traced<F: Scalar>(tape: &mut Tape<F>, x: NodeId) -> NodeId {
    tape.gram(x)
}

/// Traced projection: scm [N,N] times weight [N,d_proj] plus bias.
pub fn project_scm_traced<F: Scalar>(
    tape: &mut Tape<F>,
    scm: NodeId,
    weight: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let sd = tape.value(scm).dims();
    let wd = tape.value(weight).dims();
    if sd.len() != 2 || wd.len() != 2 || sd[1] != wd[0] {
        return Err(Error::DimensionMismatch(format!(
            "projection expects scm [N,N] and weight [N,d], got {sd:?} and {wd:?}"
        )));
    }
    let prod = tape.matmul(scm, weight);
    Ok(tape.add_bias_rows(prod, bias))
}

/// Traced concat of base and structure features, renormalized row-wise.
pub fn augment_features_traced<F: Scalar>(
    tape: &mut Tape<F>,
    base: NodeId,
    structure: NodeId,
    epsilon: F,
) -> Result<NodeId> {
    let (bd, sd) = (tape.value(base).dims(), tape.value(structure).dims());
    if bd.len() != 2 || sd.len() != 2 || bd[0] != sd[0] {
        return Err(Error::DimensionMismatch(format!(
            "augment expects matching row counts, got {bd:?} and {sd:?}"
        )));
    }
    let cat = tape.concat_cols(base, structure);
    Ok(tape.normalize_rows(cat, epsilon))
}

/// Self-correlation map of a (row-normalized) grid.
pub fn compute_scm<F: Scalar>(x: &FeatureGrid<F>) -> SelfCorrelationMap<F> {
    let mut tape = Tape::new();
    let id = tape.input(x.tensor().clone());
    let gram = compute_scm_traced(&mut tape, id);
    SelfCorrelationMap {
        grid: tape.value(gram).clone(),
        height: x.height(),
        width: x.width(),
    }
}

/// Structure features: one projected correlation row per grid position.
pub fn project_scm<F: Scalar>(
    scm: &SelfCorrelationMap<F>,
    proj: &ScmProjection<F>,
) -> Result<FeatureGrid<F>> {
    let mut tape = Tape::new();
    let s = tape.input(scm.grid.clone());
    let w = tape.input(proj.weight.clone());
    let b = tape.input(proj.bias.clone());
    let out = project_scm_traced(&mut tape, s, w, b)?;
    FeatureGrid::new(
        scm.height,
        scm.width,
        proj.d_proj(),
        tape.value(out).clone(),
    )
}

/// Row-wise concatenation of base and structure features, renormalized so
/// cosine similarity stays bounded.
pub fn augment_features<F: Scalar>(
    base: &FeatureGrid<F>,
    structure: &FeatureGrid<F>,
) -> Result<FeatureGrid<F>> {
    if base.len() != structure.len() {
        return Err(Error::DimensionMismatch(format!(
            "augment expects equal position counts, got {} vs {}",
            base.len(),
            structure.len()
        )));
    }
    let mut tape = Tape::new();
    let b = tape.input(base.tensor().clone());
    let s = tape.input(structure.tensor().clone());
    let out = augment_features_traced(&mut tape, b, s, F::from_f64(1e-12))?;
    FeatureGrid::new(
        base.height(),
        base.width(),
        base.channels() + structure.channels(),
        tape.value(out).clone(),
    )
}
