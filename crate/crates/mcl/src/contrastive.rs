//! Contrastive losses over feature grids.
//!
//! Anchors are the rows of `x`; the positive for anchor i is row i of `y`
//! and the negatives are the remaining rows of `y` (spatial negatives within
//! one pair). `info_nce` is the temperature-scaled noise-contrastive loss;
//! `marginal_contrastive` rewrites it on the scaled hypersphere and adds an
//! angular margin to the positive pair before the cosine. Reduction over
//! anchors is a sum.

use crate::error::{Error, Result};
use crate::grid::{stable_arccos, FeatureGrid};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy)]
pub struct ContrastiveConfig<F> {
    /// Angular margin added to the positive pair, radians.
    pub margin: F,
    /// Hypersphere radius multiplying all logits.
    pub scale: F,
    /// Temperature for the plain InfoNCE baseline.
    pub temperature: F,
}

impl<F: Scalar> ContrastiveConfig<F> {
    pub fn new(margin: F, scale: F, temperature: F) -> Result<Self> {
        let half_pi = F::from_f64(std::f64::consts::FRAC_PI_2);
        if margin < F::zero() || margin >= half_pi {
            return Err(Error::Config(format!(
                "margin must lie in [0, pi/2), got {margin}"
            )));
        }
        if scale <= F::zero() || temperature <= F::zero() {
            return Err(Error::Config(format!(
                "scale and temperature must be positive, got s={scale} tau={temperature}"
            )));
        }
        Ok(ContrastiveConfig { margin, scale, temperature })
    }
}

impl<F: Scalar> Default for ContrastiveConfig<F> {
    /// m = 0.4, s = 10, tau = 0.1.
    fn default() -> Self {
        ContrastiveConfig {
            margin: F::from_f64(0.4),
            scale: F::from_f64(10.0),
            temperature: F::from_f64(0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossDirection {
    Xy,
    Yx,
    Bidirectional,
}

#[derive(Debug, Clone)]
pub struct LossReport<F> {
    pub value: F,
    pub per_anchor_terms: Vec<F>,
    pub direction: LossDirection,
}

/// Loss assembled on a tape: the scalar node plus the per-anchor vector node.
#[derive(Debug, Clone, Copy)]
pub struct TracedLoss {
    pub loss: NodeId,
    pub per_anchor: NodeId,
}

fn check_pair_shapes<F: Scalar>(tape: &Tape<F>, x: NodeId, y: NodeId) -> Result<usize> {
    let (dx, dy) = (tape.value(x).dims(), tape.value(y).dims());
    if dx.len() != 2 || dy.len() != 2 || dx != dy {
        return Err(Error::DimensionMismatch(format!(
            "contrastive pair needs matching [N, C] grids, got {dx:?} vs {dy:?}"
        )));
    }
    Ok(dx[0])
}

/// InfoNCE on the tape. `x` and `y` are row-normalized [N, C] nodes.
pub fn info_nce_traced<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    y: NodeId,
    tau: F,
) -> Result<TracedLoss> {
    if tau <= F::zero() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    check_pair_shapes(tape, x, y)?;
    let cos = tape.matmul_nt(x, y);
    let logits = tape.scale(cos, F::one() / tau);
    let pos = tape.take_diag(logits);
    let lse = tape.logsumexp_rows(logits);
    let per_anchor = tape.sub(lse, pos);
    let loss = tape.sum(per_anchor);
    Ok(TracedLoss { loss, per_anchor })
}

/// Marginal contrastive loss on the tape. Per anchor the positive angle is
/// arccos(x_i . y_i), shifted by the margin and clamped to pi before the
/// cosine; all logits are scaled by `cfg.scale`.
pub fn marginal_contrastive_traced<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    y: NodeId,
    cfg: &ContrastiveConfig<F>,
) -> Result<TracedLoss> {
    ContrastiveConfig::new(cfg.margin, cfg.scale, cfg.temperature)?;
    check_pair_shapes(tape, x, y)?;
    let cos = tape.matmul_nt(x, y);
    let diag = tape.take_diag(cos);
    let theta = tape.arccos(diag);
    let shifted = tape.add_const(theta, cfg.margin);
    let clamped = tape.clamp_max(shifted, F::from_f64(std::f64::consts::PI));
    let pos_cos = tape.cos(clamped);
    let pos = tape.scale(pos_cos, cfg.scale);
    let negs = tape.scale(cos, cfg.scale);
    let logits = tape.replace_diag(negs, pos);
    let lse = tape.logsumexp_rows(logits);
    let per_anchor = tape.sub(lse, pos);
    let loss = tape.sum(per_anchor);
    Ok(TracedLoss { loss, per_anchor })
}

fn report_from_traced<F: Scalar>(
    tape: &Tape<F>,
    traced: TracedLoss,
    direction: LossDirection,
) -> LossReport<F> {
    LossReport {
        value: tape.value(traced.loss).item(),
        per_anchor_terms: tape.value(traced.per_anchor).data().to_vec(),
        direction,
    }
}

/// InfoNCE over grids (anchors = rows of `x`), direction tagged x->y.
pub fn info_nce<F: Scalar>(
    x: &FeatureGrid<F>,
    y: &FeatureGrid<F>,
    tau: F,
) -> Result<LossReport<F>> {
    let mut tape = Tape::new();
    let xid = tape.input(x.tensor().clone());
    let yid = tape.input(y.tensor().clone());
    let traced = info_nce_traced(&mut tape, xid, yid, tau)?;
    Ok(report_from_traced(&tape, traced, LossDirection::Xy))
}

/// Marginal contrastive loss over grids, direction tagged x->y.
pub fn marginal_contrastive<F: Scalar>(
    x: &FeatureGrid<F>,
    y: &FeatureGrid<F>,
    cfg: &ContrastiveConfig<F>,
) -> Result<LossReport<F>> {
    let mut tape = Tape::new();
    let xid = tape.input(x.tensor().clone());
    let yid = tape.input(y.tensor().clone());
    let traced = marginal_contrastive_traced(&mut tape, xid, yid, cfg)?;
    Ok(report_from_traced(&tape, traced, LossDirection::Xy))
}

impl<F: Scalar> LossReport<F> {
    /// Relabel the direction, for the caller that computed the y->x leg by
    /// swapping arguments.
    pub fn with_direction(mut self, direction: LossDirection) -> Self {
        self.direction = direction;
        self
    }
}

/// Sum of the two directional losses.
pub fn bidirectional<F: Scalar>(
    loss_xy: &LossReport<F>,
    loss_yx: &LossReport<F>,
) -> LossReport<F> {
    debug_assert_eq!(
        loss_xy.per_anchor_terms.len(),
        loss_yx.per_anchor_terms.len(),
        "directional losses must cover the same pair"
    );
    let mut per_anchor_terms = loss_xy.per_anchor_terms.clone();
    per_anchor_terms.extend_from_slice(&loss_yx.per_anchor_terms);
    LossReport {
        value: loss_xy.value + loss_yx.value,
        per_anchor_terms,
        direction: LossDirection::Bidirectional,
    }
}

/// Mean positive angle (over the diagonal) and mean negative angle (over all
/// i != j). Diagnostic only. With a single row there are no negatives and the
/// negative mean is reported as zero.
pub fn feature_separability_stats<F: Scalar>(
    x: &FeatureGrid<F>,
    y: &FeatureGrid<F>,
) -> Result<(F, F)> {
    if x.len() != y.len() || x.channels() != y.channels() {
        return Err(Error::DimensionMismatch(format!(
            "stats need matching grids, got {}x{} vs {}x{}",
            x.len(),
            x.channels(),
            y.len(),
            y.channels()
        )));
    }
    let n = x.len();
    let mut pos = F::zero();
    let mut neg = F::zero();
    for i in 0..n {
        for j in 0..n {
            let dot = x
                .row(i)
                .iter()
                .zip(y.row(j))
                .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
            let angle = stable_arccos(dot);
            if i == j {
                pos = pos + angle;
            } else {
                neg = neg + angle;
            }
        }
    }
    let pos_mean = pos / F::from_usize(n);
    let neg_mean = if n > 1 {
        neg / F::from_usize(n * (n - 1))
    } else {
        F::zero()
    };
    Ok((pos_mean, neg_mean))
}
