//! Central finite-difference verification of every differentiable operation.
//!
//! Each case samples a random small instance (N <= 12, C <= 8), builds the
//! operation on a tape, and compares the reverse-mode gradient of a scalar
//! functional against (f(x+h) - f(x-h)) / 2h with h = 1e-5 for every input
//! component. Instances whose computation passes within 1e-3 of a kink
//! (abs, leaky-relu, clamp, arccos clamp) are redrawn, since two-sided
//! differences straddling a kink measure nothing.
//!
//! Non-scalar operations are reduced through a fixed random weighting
//! `sum(W . op(X))`, which exercises the full Jacobian against a random
//! cotangent.

use crate::contrastive::{info_nce_traced, marginal_contrastive_traced, ContrastiveConfig};
use crate::correspondence::{
    correspondence_objective_traced, cycle_loss_traced, feature_consistency_loss_traced,
    pseudo_pair_loss_traced, warp_traced, ObjectiveParts, ObjectiveWeights,
};
use crate::rng::SplitMix64;
use crate::scm::{augment_features_traced, compute_scm_traced, project_scm_traced};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-3;
const KINK_MARGIN: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub instances: usize,
    pub components: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<22} instances={:<4} components={:<7} max_rel_err={:.3e}  {}",
            self.name,
            self.instances,
            self.components,
            self.max_rel_err,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Loss builder: splits the flat differentiable vector into input nodes,
/// using `aux` for fixed constants, and returns the scalar loss node plus
/// the input nodes in flat order.
type Builder = dyn Fn(&mut Tape<f64>, &[f64], &[f64]) -> (NodeId, Vec<NodeId>);
/// Instance sampler: (differentiable inputs, fixed constants).
type Sampler = dyn Fn(&mut SplitMix64) -> (Vec<f64>, Vec<f64>);

struct Case {
    name: &'static str,
    instances: usize,
    sample: Box<Sampler>,
    build: Box<Builder>,
}

fn check_case(case: &Case, rng: &mut SplitMix64, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    let mut components = 0usize;
    for _ in 0..instances {
        // Redraw until the computation is clear of kinks.
        let (xs, aux) = {
            let mut tries = 0;
            loop {
                let (xs, aux) = (case.sample)(rng);
                let mut tape = Tape::new();
                (case.build)(&mut tape, &xs, &aux);
                if tape.min_kink_margin() > KINK_MARGIN {
                    break (xs, aux);
                }
                tries += 1;
                assert!(tries < 500, "no kink-free instance for {}", case.name);
            }
        };

        let mut tape = Tape::new();
        let (loss, inputs) = (case.build)(&mut tape, &xs, &aux);
        tape.backward(loss).expect("scalar loss");
        let mut analytic = Vec::with_capacity(xs.len());
        for id in &inputs {
            match tape.grad(*id) {
                Some(g) => analytic.extend_from_slice(g.data()),
                None => analytic.extend(std::iter::repeat(0.0).take(tape.value(*id).len())),
            }
        }
        assert_eq!(analytic.len(), xs.len(), "{}: input split mismatch", case.name);

        let eval = |v: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let (loss, _) = (case.build)(&mut tape, v, &aux);
            tape.value(loss).item()
        };
        for i in 0..xs.len() {
            let mut plus = xs.clone();
            plus[i] += FD_STEP;
            let mut minus = xs.clone();
            minus[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
            components += 1;
        }
    }
    GradCheckReport {
        name: case.name.to_string(),
        instances,
        components,
        max_rel_err: max_rel,
        passed: max_rel < REL_TOLERANCE,
    }
}

fn uniform_vec(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// sum(W . t) for a fixed weight tensor of the same shape.
fn weighted_sum(tape: &mut Tape<f64>, t: NodeId, weights: &[f64]) -> NodeId {
    let dims = tape.value(t).dims().to_vec();
    let w = tape.input(Tensor::new(dims, weights.to_vec()).unwrap());
    let prod = tape.mul(t, w);
    tape.sum(prod)
}

fn cases() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();

    // l2 row normalization.
    cases.push(Case {
        name: "l2_normalize_rows",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(5), 2 + rng.below(4));
            let xs = uniform_vec(rng, n * c, -1.0, 1.0);
            let mut aux = vec![n as f64, c as f64];
            aux.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let x = tape.input(Tensor::new(vec![n, c], xs.to_vec()).unwrap());
            let y = tape.normalize_rows(x, 1e-8);
            (weighted_sum(tape, y, &aux[2..]), vec![x])
        }),
    });

    // Cosine similarity matrix of two normalized grids.
    cases.push(Case {
        name: "cosine_matrix",
        instances: 100,
        sample: Box::new(|rng| {
            let (na, nb, c) = (2 + rng.below(5), 2 + rng.below(5), 2 + rng.below(4));
            let mut xs = uniform_vec(rng, na * c, -1.0, 1.0);
            xs.extend(uniform_vec(rng, nb * c, -1.0, 1.0));
            let mut aux = vec![na as f64, nb as f64, c as f64];
            aux.extend(uniform_vec(rng, na * nb, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (na, nb, c) = (aux[0] as usize, aux[1] as usize, aux[2] as usize);
            let a = tape.input(Tensor::new(vec![na, c], xs[..na * c].to_vec()).unwrap());
            let b = tape.input(Tensor::new(vec![nb, c], xs[na * c..].to_vec()).unwrap());
            let an = tape.normalize_rows(a, 1e-8);
            let bn = tape.normalize_rows(b, 1e-8);
            let cos = tape.matmul_nt(an, bn);
            (weighted_sum(tape, cos, &aux[3..]), vec![a, b])
        }),
    });

    // Row softmax at random sharpness.
    cases.push(Case {
        name: "softmax_rows",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, m) = (2 + rng.below(5), 2 + rng.below(6));
            let xs = uniform_vec(rng, n * m, -2.0, 2.0);
            let mut aux = vec![n as f64, m as f64, rng.uniform(0.5, 5.0)];
            aux.extend(uniform_vec(rng, n * m, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, m) = (aux[0] as usize, aux[1] as usize);
            let x = tape.input(Tensor::new(vec![n, m], xs.to_vec()).unwrap());
            let y = tape.softmax_rows(x, aux[2]);
            (weighted_sum(tape, y, &aux[3..]), vec![x])
        }),
    });

    // Clamped arccos.
    cases.push(Case {
        name: "stable_arccos",
        instances: 100,
        sample: Box::new(|rng| {
            let k = 3 + rng.below(8);
            let xs = uniform_vec(rng, k, -0.95, 0.95);
            let aux = uniform_vec(rng, k, -1.0, 1.0);
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let x = tape.input(Tensor::new(vec![xs.len()], xs.to_vec()).unwrap());
            let y = tape.arccos(x);
            (weighted_sum(tape, y, aux), vec![x])
        }),
    });

    // InfoNCE through normalization.
    cases.push(Case {
        name: "info_nce",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(7), 2 + rng.below(7));
            let mut xs = uniform_vec(rng, n * c, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, vec![n as f64, c as f64, rng.uniform(0.2, 1.0)])
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let x = tape.input(Tensor::new(vec![n, c], xs[..n * c].to_vec()).unwrap());
            let y = tape.input(Tensor::new(vec![n, c], xs[n * c..].to_vec()).unwrap());
            let xn = tape.normalize_rows(x, 1e-8);
            let yn = tape.normalize_rows(y, 1e-8);
            let traced = info_nce_traced(tape, xn, yn, aux[2]).unwrap();
            (traced.loss, vec![x, y])
        }),
    });

    // Marginal contrastive loss through normalization.
    cases.push(Case {
        name: "marginal_contrastive",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(7), 2 + rng.below(7));
            let mut xs = uniform_vec(rng, n * c, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (
                xs,
                vec![
                    n as f64,
                    c as f64,
                    rng.uniform(0.0, 0.5),
                    rng.uniform(1.0, 10.0),
                ],
            )
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let x = tape.input(Tensor::new(vec![n, c], xs[..n * c].to_vec()).unwrap());
            let y = tape.input(Tensor::new(vec![n, c], xs[n * c..].to_vec()).unwrap());
            let xn = tape.normalize_rows(x, 1e-8);
            let yn = tape.normalize_rows(y, 1e-8);
            let cfg = ContrastiveConfig { margin: aux[2], scale: aux[3], temperature: 0.1 };
            let traced = marginal_contrastive_traced(tape, xn, yn, &cfg).unwrap();
            (traced.loss, vec![x, y])
        }),
    });

    // Self-correlation map of a normalized grid.
    cases.push(Case {
        name: "self_correlation_map",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(6), 2 + rng.below(5));
            let xs = uniform_vec(rng, n * c, -1.0, 1.0);
            let mut aux = vec![n as f64, c as f64];
            aux.extend(uniform_vec(rng, n * n, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let x = tape.input(Tensor::new(vec![n, c], xs.to_vec()).unwrap());
            let xn = tape.normalize_rows(x, 1e-8);
            let scm = compute_scm_traced(tape, xn);
            (weighted_sum(tape, scm, &aux[2..]), vec![x])
        }),
    });

    // SCM projection: gradients through the map, the weight, and the bias.
    cases.push(Case {
        name: "scm_projection",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c, dp) = (2 + rng.below(5), 2 + rng.below(4), 1 + rng.below(4));
            let mut xs = uniform_vec(rng, n * c, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * dp, -1.0, 1.0));
            xs.extend(uniform_vec(rng, dp, -0.5, 0.5));
            let mut aux = vec![n as f64, c as f64, dp as f64];
            aux.extend(uniform_vec(rng, n * dp, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c, dp) = (aux[0] as usize, aux[1] as usize, aux[2] as usize);
            let x = tape.input(Tensor::new(vec![n, c], xs[..n * c].to_vec()).unwrap());
            let w = tape.input(
                Tensor::new(vec![n, dp], xs[n * c..n * c + n * dp].to_vec()).unwrap(),
            );
            let b = tape.input(Tensor::new(vec![dp], xs[n * c + n * dp..].to_vec()).unwrap());
            let xn = tape.normalize_rows(x, 1e-8);
            let scm = compute_scm_traced(tape, xn);
            let proj = project_scm_traced(tape, scm, w, b).unwrap();
            (weighted_sum(tape, proj, &aux[3..]), vec![x, w, b])
        }),
    });

    // Feature augmentation (concat + renormalize).
    cases.push(Case {
        name: "augment_features",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c1, c2) = (2 + rng.below(5), 2 + rng.below(4), 1 + rng.below(4));
            let mut xs = uniform_vec(rng, n * c1, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c2, -1.0, 1.0));
            let mut aux = vec![n as f64, c1 as f64, c2 as f64];
            aux.extend(uniform_vec(rng, n * (c1 + c2), -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c1, c2) = (aux[0] as usize, aux[1] as usize, aux[2] as usize);
            let base = tape.input(Tensor::new(vec![n, c1], xs[..n * c1].to_vec()).unwrap());
            let structure =
                tape.input(Tensor::new(vec![n, c2], xs[n * c1..].to_vec()).unwrap());
            let aug = augment_features_traced(tape, base, structure, 1e-8).unwrap();
            (weighted_sum(tape, aug, &aux[3..]), vec![base, structure])
        }),
    });

    // Warp: gradients through T and Z.
    cases.push(Case {
        name: "warp",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(6), 1 + rng.below(4));
            let mut xs = uniform_vec(rng, n * n, 0.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            let mut aux = vec![n as f64, c as f64];
            aux.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let t = tape.input(Tensor::new(vec![n, n], xs[..n * n].to_vec()).unwrap());
            let z = tape.input(Tensor::new(vec![n, c], xs[n * n..].to_vec()).unwrap());
            let w = warp_traced(tape, t, z).unwrap();
            (weighted_sum(tape, w, &aux[2..]), vec![t, z])
        }),
    });

    // Cycle loss through a softmax-built T.
    cases.push(Case {
        name: "cycle_loss",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(6), 1 + rng.below(4));
            let mut xs = uniform_vec(rng, n * n, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, vec![n as f64, c as f64, rng.uniform(1.0, 8.0)])
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let logits = tape.input(Tensor::new(vec![n, n], xs[..n * n].to_vec()).unwrap());
            let z = tape.input(Tensor::new(vec![n, c], xs[n * n..].to_vec()).unwrap());
            let t = tape.softmax_rows(logits, aux[2]);
            (cycle_loss_traced(tape, t, z).unwrap(), vec![logits, z])
        }),
    });

    // Feature consistency L1.
    cases.push(Case {
        name: "feature_consistency",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(7), 2 + rng.below(7));
            let mut xs = uniform_vec(rng, n * c, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, vec![n as f64, c as f64])
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let fx = tape.input(Tensor::new(vec![n, c], xs[..n * c].to_vec()).unwrap());
            let fy = tape.input(Tensor::new(vec![n, c], xs[n * c..].to_vec()).unwrap());
            (
                feature_consistency_loss_traced(tape, fx, fy).unwrap(),
                vec![fx, fy],
            )
        }),
    });

    // Pseudo-pair L1 through a softmax-built T.
    cases.push(Case {
        name: "pseudo_pair_loss",
        instances: 100,
        sample: Box::new(|rng| {
            let (n, c) = (2 + rng.below(6), 1 + rng.below(4));
            let mut xs = uniform_vec(rng, n * n, -1.0, 1.0);
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            xs.extend(uniform_vec(rng, n * c, -1.0, 1.0));
            (xs, vec![n as f64, c as f64, rng.uniform(1.0, 8.0)])
        }),
        build: Box::new(|tape, xs, aux| {
            let (n, c) = (aux[0] as usize, aux[1] as usize);
            let logits = tape.input(Tensor::new(vec![n, n], xs[..n * n].to_vec()).unwrap());
            let z = tape.input(
                Tensor::new(vec![n, c], xs[n * n..n * n + n * c].to_vec()).unwrap(),
            );
            let y = tape.input(Tensor::new(vec![n, c], xs[n * n + n * c..].to_vec()).unwrap());
            let t = tape.softmax_rows(logits, aux[2]);
            (
                pseudo_pair_loss_traced(tape, t, z, y).unwrap(),
                vec![logits, z, y],
            )
        }),
    });

    // Two-layer conv encoder: gradients w.r.t. image, kernels, biases.
    cases.push(Case {
        name: "conv_encoder",
        instances: 100,
        sample: Box::new(|rng| {
            let image = uniform_vec(rng, 8 * 8, -1.0, 1.0);
            let k0 = uniform_vec(rng, 3 * 3 * 1 * 3, -0.5, 0.5);
            let b0 = uniform_vec(rng, 3, -0.2, 0.2);
            let k1 = uniform_vec(rng, 3 * 3 * 3 * 2, -0.5, 0.5);
            let b1 = uniform_vec(rng, 2, -0.2, 0.2);
            let mut xs = image;
            xs.extend(k0);
            xs.extend(b0);
            xs.extend(k1);
            xs.extend(b1);
            let aux = uniform_vec(rng, 2 * 2 * 2, -1.0, 1.0);
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let mut off = 0;
            let mut take = |len: usize| {
                let s = xs[off..off + len].to_vec();
                off += len;
                s
            };
            let image = tape.input(Tensor::new(vec![8, 8, 1], take(64)).unwrap());
            let k0 = tape.input(Tensor::new(vec![3, 3, 1, 3], take(27)).unwrap());
            let b0 = tape.input(Tensor::new(vec![3], take(3)).unwrap());
            let k1 = tape.input(Tensor::new(vec![3, 3, 3, 2], take(54)).unwrap());
            let b1 = tape.input(Tensor::new(vec![2], take(2)).unwrap());
            let c0 = tape.conv2d(image, k0, b0, 2, 1);
            let a0 = tape.leaky_relu(c0, 0.2);
            let c1 = tape.conv2d(a0, k1, b1, 2, 1);
            let flat = tape.reshape(c1, vec![4, 2]);
            let grid = tape.normalize_rows(flat, 1e-8);
            (
                weighted_sum(tape, grid, aux),
                vec![image, k0, b0, k1, b1],
            )
        }),
    });

    // Full objective on a tiny pipeline, gradients w.r.t. all parameters.
    cases.push(Case {
        name: "composed_objective",
        instances: 25,
        sample: Box::new(|rng| {
            // Encoders: one 3x3 stride-2 layer, 1 -> 3 channels, on 6x6
            // images; grid 3x3 (N = 9), d_proj 2.
            let mut xs = Vec::new();
            for _ in 0..2 {
                xs.extend(uniform_vec(rng, 3 * 3 * 1 * 3, -0.5, 0.5));
                xs.extend(uniform_vec(rng, 3, -0.2, 0.2));
            }
            for _ in 0..2 {
                xs.extend(uniform_vec(rng, 9 * 2, -0.5, 0.5));
                xs.extend(uniform_vec(rng, 2, -0.2, 0.2));
            }
            let mut aux = uniform_vec(rng, 3 * 6 * 6, 0.0, 1.0);
            aux.push(rng.uniform(0.1, 0.4));
            aux.push(rng.uniform(2.0, 6.0));
            (xs, aux)
        }),
        build: Box::new(|tape, xs, aux| {
            let mut off = 0;
            let mut take = |len: usize| {
                let s = xs[off..off + len].to_vec();
                off += len;
                s
            };
            let kx = tape.input(Tensor::new(vec![3, 3, 1, 3], take(27)).unwrap());
            let bx = tape.input(Tensor::new(vec![3], take(3)).unwrap());
            let kz = tape.input(Tensor::new(vec![3, 3, 1, 3], take(27)).unwrap());
            let bz = tape.input(Tensor::new(vec![3], take(3)).unwrap());
            let wx = tape.input(Tensor::new(vec![9, 2], take(18)).unwrap());
            let pbx = tape.input(Tensor::new(vec![2], take(2)).unwrap());
            let wz = tape.input(Tensor::new(vec![9, 2], take(18)).unwrap());
            let pbz = tape.input(Tensor::new(vec![2], take(2)).unwrap());

            let cond = tape.input(Tensor::new(vec![6, 6, 1], aux[..36].to_vec()).unwrap());
            let gt = tape.input(Tensor::new(vec![6, 6, 1], aux[36..72].to_vec()).unwrap());
            let ex = tape.input(Tensor::new(vec![6, 6, 1], aux[72..108].to_vec()).unwrap());
            let (margin, sharpness) = (aux[108], aux[109]);

            let encode = |tape: &mut Tape<f64>, k, b, img| {
                let c = tape.conv2d(img, k, b, 2, 1);
                let flat = tape.reshape(c, vec![9, 3]);
                tape.normalize_rows(flat, 1e-8)
            };
            let fx = encode(tape, kx, bx, cond);
            let fy = encode(tape, kz, bz, gt);
            let fz = encode(tape, kz, bz, ex);

            let project = |tape: &mut Tape<f64>, f, w, b| {
                let scm = compute_scm_traced(tape, f);
                let p = project_scm_traced(tape, scm, w, b).unwrap();
                augment_features_traced(tape, f, p, 1e-8).unwrap()
            };
            let ax = project(tape, fx, wx, pbx);
            let ay = project(tape, fy, wz, pbz);
            let az = project(tape, fz, wz, pbz);

            let cfg = ContrastiveConfig { margin, scale: 5.0, temperature: 0.1 };
            let mcl_xy = marginal_contrastive_traced(tape, ax, ay, &cfg).unwrap();
            let mcl_yx = marginal_contrastive_traced(tape, ay, ax, &cfg).unwrap();
            let contrast = tape.add(mcl_xy.loss, mcl_yx.loss);

            let cos = tape.matmul_nt(ax, az);
            let t = tape.softmax_rows(cos, sharpness);
            let zimg = tape.reshape(ex, vec![9, 4]);
            let yimg = tape.reshape(gt, vec![9, 4]);
            let cyc = cycle_loss_traced(tape, t, zimg).unwrap();
            let pse = pseudo_pair_loss_traced(tape, t, zimg, yimg).unwrap();
            let fcst = feature_consistency_loss_traced(tape, fx, fy).unwrap();

            let loss = correspondence_objective_traced(
                tape,
                ObjectiveParts {
                    cycle: cyc,
                    feature_consistency: fcst,
                    contrastive: contrast,
                    pseudo_pair: pse,
                },
                &ObjectiveWeights::default(),
            )
            .unwrap();
            (loss, vec![kx, bx, kz, bz, wx, pbx, wz, pbz])
        }),
    });

    cases
}

/// Run the whole suite. `instances_scale` of 1.0 keeps the per-op counts
/// (100 for single ops); smaller values are for quick smoke runs.
pub fn run_suite(seed: u64, instances_scale: f64) -> Vec<GradCheckReport> {
    let mut rng = SplitMix64::new(seed);
    cases()
        .iter()
        .map(|case| {
            let n = ((case.instances as f64 * instances_scale).round() as usize).max(2);
            check_case(case, &mut rng, n)
        })
        .collect()
}

pub fn suite_passed(reports: &[GradCheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}
