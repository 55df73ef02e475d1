//! Correspondence matrices, exemplar warping, and the correspondence-side
//! losses.
//!
//! The matrix T is built by a temperature softmax over cosine similarities,
//! so each row is a convex weighting of exemplar positions and warping is a
//! soft argmax. Losses: cycle consistency |T^T T Z - Z|_1, feature
//! consistency |F_x - F_y|_1, pseudo-pair |T Z - Y'|_1, and their weighted
//! sum.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Row-stochastic correspondence matrix mapping exemplar positions onto
/// condition positions, together with the sharpness used to build it.
#[derive(Debug, Clone)]
pub struct CorrespondenceMatrix<F> {
    t: Tensor<F>,
    sharpness: F,
}

impl<F: Scalar> CorrespondenceMatrix<F> {
    pub fn matrix(&self) -> &Tensor<F> {
        &self.t
    }

    pub fn sharpness(&self) -> F {
        self.sharpness
    }

    pub fn len(&self) -> usize {
        self.t.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the strongest match per row (first index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        row_argmax(&self.t)
    }
}

#[derive(Debug, Clone)]
pub struct WarpResult<F> {
    /// T . Z: each row a convex combination of exemplar rows.
    pub warped: Tensor<F>,
    /// Best-match exemplar index per condition position.
    pub source_argmax: Vec<usize>,
}

pub(crate) fn row_argmax<F: Scalar>(m: &Tensor<F>) -> Vec<usize> {
    m.rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Traced T: softmax over cosine similarities of two normalized grids.
pub fn build_correspondence_traced<F: Scalar>(
    tape: &mut Tape<F>,
    cond: NodeId,
    exemplar: NodeId,
    sharpness: F,
) -> Result<NodeId> {
    if sharpness <= F::zero() {
        return Err(Error::Config(format!(
            "sharpness must be positive, got {sharpness}"
        )));
    }
    let (cd, ed) = (tape.value(cond).dims(), tape.value(exemplar).dims());
    if cd.len() != 2 || ed.len() != 2 || cd[1] != ed[1] {
        return Err(Error::DimensionMismatch(format!(
            "correspondence needs equal channels, got {cd:?} vs {ed:?}"
        )));
    }
    let cos = tape.matmul_nt(cond, exemplar);
    Ok(tape.softmax_rows(cos, sharpness))
}

pub fn warp_traced<F: Scalar>(tape: &mut Tape<F>, t: NodeId, z: NodeId) -> Result<NodeId> {
    let (td, zd) = (tape.value(t).dims(), tape.value(z).dims());
    if td.len() != 2 || zd.len() != 2 || td[1] != zd[0] {
        return Err(Error::DimensionMismatch(format!(
            "warp needs T [N,N] and Z [N,C], got {td:?} and {zd:?}"
        )));
    }
    Ok(tape.matmul(t, z))
}

/// |T^T T Z - Z|_1 with T^T the plain transpose, taken literally.
pub fn cycle_loss_traced<F: Scalar>(tape: &mut Tape<F>, t: NodeId, z: NodeId) -> Result<NodeId> {
    let tz = warp_traced(tape, t, z)?;
    let ttz = tape.matmul_tn(t, tz);
    let diff = tape.sub(ttz, z);
    Ok(tape.abs_sum(diff))
}

pub fn feature_consistency_loss_traced<F: Scalar>(
    tape: &mut Tape<F>,
    fx: NodeId,
    fy: NodeId,
) -> Result<NodeId> {
    if tape.value(fx).dims() != tape.value(fy).dims() {
        return Err(Error::DimensionMismatch(format!(
            "feature consistency needs equal shapes, got {:?} vs {:?}",
            tape.value(fx).dims(),
            tape.value(fy).dims()
        )));
    }
    let diff = tape.sub(fx, fy);
    Ok(tape.abs_sum(diff))
}

pub fn pseudo_pair_loss_traced<F: Scalar>(
    tape: &mut Tape<F>,
    t: NodeId,
    z: NodeId,
    y_aug: NodeId,
) -> Result<NodeId> {
    let warped = warp_traced(tape, t, z)?;
    if tape.value(warped).dims() != tape.value(y_aug).dims() {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-pair target shape {:?} does not match warp {:?}",
            tape.value(y_aug).dims(),
            tape.value(warped).dims()
        )));
    }
    let diff = tape.sub(warped, y_aug);
    Ok(tape.abs_sum(diff))
}

/// Weights of the correspondence objective; all must be non-negative.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights<F> {
    pub cycle: F,
    pub feature_consistency: F,
    pub contrastive: F,
    pub pseudo_pair: F,
}

impl<F: Scalar> ObjectiveWeights<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("cycle", self.cycle),
            ("feature_consistency", self.feature_consistency),
            ("contrastive", self.contrastive),
            ("pseudo_pair", self.pseudo_pair),
        ] {
            if w < F::zero() {
                return Err(Error::Config(format!("negative weight {name} = {w}")));
            }
        }
        Ok(())
    }
}

impl<F: Scalar> Default for ObjectiveWeights<F> {
    fn default() -> Self {
        ObjectiveWeights {
            cycle: F::one(),
            feature_consistency: F::one(),
            contrastive: F::one(),
            pseudo_pair: F::one(),
        }
    }
}

/// Scalar loss nodes entering the weighted objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParts {
    pub cycle: NodeId,
    pub feature_consistency: NodeId,
    pub contrastive: NodeId,
    pub pseudo_pair: NodeId,
}

pub fn correspondence_objective_traced<F: Scalar>(
    tape: &mut Tape<F>,
    parts: ObjectiveParts,
    weights: &ObjectiveWeights<F>,
) -> Result<NodeId> {
    weights.validate()?;
    let a = tape.scale(parts.cycle, weights.cycle);
    let b = tape.scale(parts.feature_consistency, weights.feature_consistency);
    let c = tape.scale(parts.contrastive, weights.contrastive);
    let d = tape.scale(parts.pseudo_pair, weights.pseudo_pair);
    let ab = tape.add(a, b);
    let abc = tape.add(ab, c);
    Ok(tape.add(abc, d))
}

// ── Pure wrappers ────────────────────────────────────────────────────

pub fn build_correspondence<F: Scalar>(
    cond: &FeatureGrid<F>,
    exemplar: &FeatureGrid<F>,
    sharpness: F,
) -> Result<CorrespondenceMatrix<F>> {
    let mut tape = Tape::new();
    let c = tape.input(cond.tensor().clone());
    let e = tape.input(exemplar.tensor().clone());
    let t = build_correspondence_traced(&mut tape, c, e, sharpness)?;
    Ok(CorrespondenceMatrix {
        t: tape.value(t).clone(),
        sharpness,
    })
}

pub fn warp<F: Scalar>(t: &CorrespondenceMatrix<F>, z: &Tensor<F>) -> Result<WarpResult<F>> {
    let mut tape = Tape::new();
    let tid = tape.input(t.t.clone());
    let zid = tape.input(z.clone());
    let w = warp_traced(&mut tape, tid, zid)?;
    Ok(WarpResult {
        warped: tape.value(w).clone(),
        source_argmax: t.argmax(),
    })
}

pub fn cycle_loss<F: Scalar>(t: &CorrespondenceMatrix<F>, z: &Tensor<F>) -> Result<F> {
    let mut tape = Tape::new();
    let tid = tape.input(t.t.clone());
    let zid = tape.input(z.clone());
    let l = cycle_loss_traced(&mut tape, tid, zid)?;
    Ok(tape.value(l).item())
}

pub fn feature_consistency_loss<F: Scalar>(
    fx: &FeatureGrid<F>,
    fy: &FeatureGrid<F>,
) -> Result<F> {
    let mut tape = Tape::new();
    let a = tape.input(fx.tensor().clone());
    let b = tape.input(fy.tensor().clone());
    let l = feature_consistency_loss_traced(&mut tape, a, b)?;
    Ok(tape.value(l).item())
}

pub fn pseudo_pair_loss<F: Scalar>(
    t: &CorrespondenceMatrix<F>,
    z: &Tensor<F>,
    y_aug: &Tensor<F>,
) -> Result<F> {
    let mut tape = Tape::new();
    let tid = tape.input(t.t.clone());
    let zid = tape.input(z.clone());
    let yid = tape.input(y_aug.clone());
    let l = pseudo_pair_loss_traced(&mut tape, tid, zid, yid)?;
    Ok(tape.value(l).item())
}

/// Weighted sum of already-computed scalar parts.
pub fn correspondence_objective<F: Scalar>(
    cycle: F,
    feature_consistency: F,
    contrastive: F,
    pseudo_pair: F,
    weights: &ObjectiveWeights<F>,
) -> Result<F> {
    weights.validate()?;
    Ok(weights.cycle * cycle
        + weights.feature_consistency * feature_consistency
        + weights.contrastive * contrastive
        + weights.pseudo_pair * pseudo_pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::softmax_rows;
    use crate::rng::SplitMix64;

    fn random_normalized(seed: u64, n: usize, c: usize) -> FeatureGrid<f64> {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..n * c).map(|_| rng.normal()).collect();
        FeatureGrid::new(1, n, c, Tensor::new(vec![n, c], data).unwrap())
            .unwrap()
            .l2_normalize_rows(1e-12)
    }

    fn permutation_matrix(perm: &[usize]) -> CorrespondenceMatrix<f64> {
        let n = perm.len();
        let mut data = vec![0.0; n * n];
        for (i, &j) in perm.iter().enumerate() {
            data[i * n + j] = 1.0;
        }
        CorrespondenceMatrix {
            t: Tensor::new(vec![n, n], data).unwrap(),
            sharpness: 1.0,
        }
    }

    fn random_matrix(seed: u64, n: usize, c: usize) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(vec![n, c], (0..n * c).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn self_match_at_high_sharpness() {
        let g = FeatureGrid::<f64>::from_rows(
            1,
            3,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        )
        .unwrap();
        let t = build_correspondence(&g, &g, 1000.0).unwrap();
        for (i, &j) in t.argmax().iter().enumerate() {
            assert_eq!(i, j);
            assert!(t.matrix().at(i, i) > 0.999);
        }
    }

    #[test]
    fn tiny_sharpness_gives_near_uniform_rows() {
        let a = random_normalized(71, 4, 3);
        let b = random_normalized(72, 4, 3);
        let t = build_correspondence(&a, &b, 1e-6).unwrap();
        for &v in t.matrix().data() {
            assert!((v - 0.25).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_sharpness_rejected() {
        let a = random_normalized(73, 3, 2);
        assert!(build_correspondence(&a, &a, 0.0).is_err());
    }

    #[test]
    fn matches_softmax_of_cosine_oracle() {
        let a = random_normalized(74, 4, 3);
        let b = random_normalized(75, 4, 3);
        let t = build_correspondence(&a, &b, 7.5).unwrap();
        let cos = crate::grid::cosine_similarity_matrix(&a, &b).unwrap();
        let expect = softmax_rows(&cos, 7.5);
        for (x, y) in t.matrix().data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        for row in t.matrix().rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let a = random_normalized(76, 3, 2);
        let b = random_normalized(77, 3, 4);
        assert!(build_correspondence(&a, &b, 10.0).is_err());
    }

    #[test]
    fn argmax_invariant_to_sharpness() {
        let a = random_normalized(78, 6, 4);
        let b = random_normalized(79, 6, 4);
        let t1 = build_correspondence(&a, &b, 0.5).unwrap();
        let t2 = build_correspondence(&a, &b, 250.0).unwrap();
        assert_eq!(t1.argmax(), t2.argmax());
        let cos = crate::grid::cosine_similarity_matrix(&a, &b).unwrap();
        assert_eq!(t1.argmax(), row_argmax(&cos));
    }

    #[test]
    fn identity_warp_reproduces_exactly() {
        let t = permutation_matrix(&[0, 1, 2, 3]);
        let z = random_matrix(80, 4, 3);
        let w = warp(&t, &z).unwrap();
        assert_eq!(w.warped.data(), z.data());
        assert_eq!(w.source_argmax, vec![0, 1, 2, 3]);
    }

    #[test]
    fn permutation_warp_rearranges_rows() {
        let perm = vec![2, 0, 3, 1];
        let t = permutation_matrix(&perm);
        let z = random_matrix(81, 4, 3);
        let w = warp(&t, &z).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(&w.warped.data()[i * 3..(i + 1) * 3], &z.data()[j * 3..(j + 1) * 3]);
        }
    }

    #[test]
    fn uniform_warp_gives_column_means() {
        let n = 4;
        let t = CorrespondenceMatrix {
            t: Tensor::new(vec![n, n], vec![0.25; n * n]).unwrap(),
            sharpness: 1.0,
        };
        let z = random_matrix(82, n, 2);
        let w = warp(&t, &z).unwrap();
        for j in 0..2 {
            let mean: f64 = (0..n).map(|i| z.at(i, j)).sum::<f64>() / n as f64;
            for i in 0..n {
                assert!((w.warped.at(i, j) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warp_stays_in_convex_hull() {
        let a = random_normalized(83, 5, 3);
        let b = random_normalized(84, 5, 3);
        let t = build_correspondence(&a, &b, 4.0).unwrap();
        let z = random_matrix(85, 5, 3);
        let w = warp(&t, &z).unwrap();
        for j in 0..3 {
            let lo = (0..5).map(|i| z.at(i, j)).fold(f64::INFINITY, f64::min);
            let hi = (0..5).map(|i| z.at(i, j)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..5 {
                assert!(w.warped.at(i, j) >= lo - 1e-12 && w.warped.at(i, j) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn cycle_loss_zero_for_permutations() {
        let mut rng = SplitMix64::new(86);
        for _ in 0..10 {
            let perm = rng.permutation(6);
            let t = permutation_matrix(&perm);
            let z = random_matrix(rng.next_u64(), 6, 3);
            assert_eq!(cycle_loss(&t, &z).unwrap(), 0.0);
        }
    }

    #[test]
    fn cycle_loss_uniform_closed_form() {
        let n = 4;
        let t = CorrespondenceMatrix {
            t: Tensor::new(vec![n, n], vec![1.0 / n as f64; n * n]).unwrap(),
            sharpness: 1.0,
        };
        let z = random_matrix(87, n, 2);
        let loss = cycle_loss(&t, &z).unwrap();
        let mut expected = 0.0;
        for j in 0..2 {
            let mean: f64 = (0..n).map(|i| z.at(i, j)).sum::<f64>() / n as f64;
            for i in 0..n {
                expected += (mean - z.at(i, j)).abs();
            }
        }
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn feature_consistency_trivials_and_oracle() {
        let fx = random_normalized(88, 4, 3);
        assert_eq!(feature_consistency_loss(&fx, &fx).unwrap(), 0.0);

        let shifted = FeatureGrid::new(
            1,
            4,
            3,
            fx.tensor().map(|v| v + 0.5),
        )
        .unwrap();
        let loss = feature_consistency_loss(&fx, &shifted).unwrap();
        assert!((loss - 0.5 * 12.0).abs() < 1e-12);

        let fy = random_normalized(89, 4, 3);
        let oracle: f64 = fx
            .tensor()
            .data()
            .iter()
            .zip(fy.tensor().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!((feature_consistency_loss(&fx, &fy).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn feature_consistency_shape_mismatch_errors() {
        let fx = random_normalized(90, 4, 3);
        let fy = random_normalized(91, 4, 2);
        assert!(feature_consistency_loss(&fx, &fy).is_err());
    }

    #[test]
    fn pseudo_pair_trivials_and_oracle() {
        let perm = vec![1, 0, 3, 2];
        let t = permutation_matrix(&perm);
        let z = random_matrix(92, 4, 3);
        let w = warp(&t, &z).unwrap();
        assert_eq!(pseudo_pair_loss(&t, &z, &w.warped).unwrap(), 0.0);

        let id = permutation_matrix(&[0, 1, 2, 3]);
        assert_eq!(pseudo_pair_loss(&id, &z, &z).unwrap(), 0.0);

        let y = random_matrix(93, 4, 3);
        let oracle: f64 = w
            .warped
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!((pseudo_pair_loss(&t, &z, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn objective_weighted_sum() {
        let w0 = ObjectiveWeights { cycle: 0.0, feature_consistency: 0.0, contrastive: 0.0, pseudo_pair: 0.0 };
        assert_eq!(correspondence_objective(1.0, 2.0, 3.0, 4.0, &w0).unwrap(), 0.0);

        let w1 = ObjectiveWeights { cycle: 0.0, feature_consistency: 1.0, contrastive: 0.0, pseudo_pair: 0.0 };
        assert_eq!(correspondence_objective(1.0, 2.0, 3.0, 4.0, &w1).unwrap(), 2.0);

        let ones = ObjectiveWeights::<f64>::default();
        assert_eq!(correspondence_objective(1.0, 2.0, 3.0, 4.0, &ones).unwrap(), 10.0);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = ObjectiveWeights { cycle: -1.0, feature_consistency: 1.0, contrastive: 1.0, pseudo_pair: 1.0 };
        assert!(correspondence_objective(1.0, 1.0, 1.0, 1.0, &w).is_err());
    }

    #[test]
    fn correspondence_is_permutation_equivariant() {
        let n = 5;
        let a = random_normalized(94, n, 3);
        let b = random_normalized(95, n, 3);
        let mut rng = SplitMix64::new(96);
        let perm = rng.permutation(n);
        let permute = |g: &FeatureGrid<f64>| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| g.row(i).to_vec()).collect();
            FeatureGrid::from_rows(1, n, rows).unwrap()
        };
        let t = build_correspondence(&a, &b, 5.0).unwrap();
        let tp = build_correspondence(&permute(&a), &permute(&b), 5.0).unwrap();
        // T' = P T P^T, i.e. T'[i, j] = T[perm(i), perm(j)].
        for i in 0..n {
            for j in 0..n {
                assert!((tp.matrix().at(i, j) - t.matrix().at(perm[i], perm[j])).abs() < 1e-9);
            }
        }
    }
}
