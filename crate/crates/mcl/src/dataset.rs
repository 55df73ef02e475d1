//! Synthetic correspondence pairs with exact ground truth.
//!
//! Every pair is built from per-cell colors on the feature grid: the ground
//! truth renders the colors (plus a zero-mean texture), the condition
//! renders a channel-rotated, inverted encoding of them (the cross-domain
//! analogue of a label map), and the exemplar rearranges whole cells by a
//! known permutation and applies photometric jitter. Cell contents permute
//! at feature-grid resolution, so the true correspondence is exact where
//! the matrix T lives.
//!
//! Tasks:
//! - `mosaic`: every cell gets a distinct quantized base color plus a
//!   within-bucket offset; accuracy 1.0 is attainable.
//! - `gradient-shapes`: a few color groups with pairwise-confusable bases
//!   and strongly different multiplicities; local color alone confuses the
//!   pair members, while layout statistics (correlation mass) separate
//!   them.

use crate::config::{ExperimentConfig, PermutationKind, TaskKind};
use crate::image::{photometric_jitter, Image};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    /// Structural input (label-map analogue), [H,W,3].
    pub condition: Image,
    /// Real image the condition corresponds to, [H,W,3].
    pub ground_truth: Image,
    /// Ground truth cells rearranged by `true_permutation`, jittered.
    pub exemplar: Image,
    /// Position i of the condition matches exemplar position
    /// `true_permutation[i]`; always a bijection.
    pub true_permutation: Vec<usize>,
}

/// Condition-domain encoding of a cell color: channels rotated and
/// inverted. A fixed bijection, so the pairing is learnable but the raw
/// pixel values do not match across domains.
pub fn condition_encoding(color: [f64; 3]) -> [f64; 3] {
    [1.0 - color[1], 1.0 - color[2], 1.0 - color[0]]
}

fn render_cells(
    colors: &[[f64; 3]],
    grid: usize,
    cell: usize,
    texture_amplitude: f64,
    texture_rng: Option<&mut SplitMix64>,
) -> Image {
    let size = grid * cell;
    let mut data = vec![0.0; size * size * 3];
    let phases: Vec<(usize, usize)> = match texture_rng {
        Some(rng) => (0..grid * grid)
            .map(|_| (rng.below(cell), rng.below(cell)))
            .collect(),
        None => vec![(0, 0); grid * grid],
    };
    for gy in 0..grid {
        for gx in 0..grid {
            let idx = gy * grid + gx;
            let color = colors[idx];
            let (px, py) = phases[idx];
            for dy in 0..cell {
                for dx in 0..cell {
                    // Zero-mean separable cosine texture: block means stay
                    // exactly at the cell color.
                    let tex = if texture_amplitude > 0.0 {
                        let fx = (std::f64::consts::TAU * (dx + px) as f64 / cell as f64).cos();
                        let fy = (std::f64::consts::TAU * (dy + py) as f64 / cell as f64).cos();
                        texture_amplitude * fx * fy
                    } else {
                        0.0
                    };
                    let base = ((gy * cell + dy) * size + gx * cell + dx) * 3;
                    for ch in 0..3 {
                        data[base + ch] = (color[ch] + tex).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).unwrap()
}

/// Per-cell color shift: every pixel of a cell moves by the same
/// per-channel Gaussian offset.
fn cell_noise(img: &Image, grid: usize, cell: usize, sigma: f64, rng: &mut SplitMix64) -> Image {
    let size = grid * cell;
    let mut data = img.data().to_vec();
    for gy in 0..grid {
        for gx in 0..grid {
            let offsets = [
                sigma * rng.normal(),
                sigma * rng.normal(),
                sigma * rng.normal(),
            ];
            for dy in 0..cell {
                for dx in 0..cell {
                    let base = ((gy * cell + dy) * size + gx * cell + dx) * 3;
                    for ch in 0..3 {
                        data[base + ch] = (data[base + ch] + offsets[ch]).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Tensor::new(img.dims().to_vec(), data).unwrap()
}

/// Scatter whole cells: output cell `perm[i]` holds input cell `i`.
fn permute_cells(img: &Image, grid: usize, cell: usize, perm: &[usize]) -> Image {
    let size = grid * cell;
    let mut data = vec![0.0; size * size * 3];
    for (i, &target) in perm.iter().enumerate() {
        let (sy, sx) = (i / grid, i % grid);
        let (ty, tx) = (target / grid, target % grid);
        for dy in 0..cell {
            for dx in 0..cell {
                let src = ((sy * cell + dy) * size + sx * cell + dx) * 3;
                let dst = ((ty * cell + dy) * size + tx * cell + dx) * 3;
                data[dst..dst + 3].copy_from_slice(&img.data()[src..src + 3]);
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).unwrap()
}

/// Per-cell colors for the mosaic task: distinct quantized bucket centers
/// plus a within-bucket offset. Returns (ground-truth colors, condition
/// colors).
fn mosaic_colors(
    n: usize,
    levels: usize,
    rng: &mut SplitMix64,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let mut buckets: Vec<usize> = (0..levels.pow(3)).collect();
    rng.shuffle(&mut buckets);
    let width = 1.0 / levels as f64;
    let mut gt = Vec::with_capacity(n);
    let mut cond = Vec::with_capacity(n);
    for &b in buckets.iter().take(n) {
        let (r, g, bl) = (b / (levels * levels), (b / levels) % levels, b % levels);
        let center = [
            (r as f64 + 0.5) * width,
            (g as f64 + 0.5) * width,
            (bl as f64 + 0.5) * width,
        ];
        let jit = |c: f64, rng: &mut SplitMix64| c + rng.uniform(-0.4, 0.4) * width;
        gt.push([
            jit(center[0], rng),
            jit(center[1], rng),
            jit(center[2], rng),
        ]);
        cond.push(condition_encoding(center));
    }
    (gt, cond)
}

/// Colors for the structure-ambiguity task: groups come in confusable
/// pairs (bases differing by a small delta in one channel) with strongly
/// different member counts, plus a unique per-cell offset.
fn gradient_shapes_colors(
    n: usize,
    groups: usize,
    rng: &mut SplitMix64,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let pairs = groups / 2;
    // Distinct multiplicities 1..=groups scaled to n cells; the pairing
    // below matches the smallest with the largest so every confusable pair
    // has a strong count contrast.
    let weight_sum: usize = (1..=groups).sum();
    let mut sizes: Vec<usize> = (1..=groups).map(|k| n * k / weight_sum).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[groups - 1] += n - assigned;

    // Pair anchors spread over color space; member B shifts one channel by
    // a confusion delta small enough for jitter to bridge.
    const CONFUSION_DELTA: f64 = 0.08;
    let mut group_base = vec![[0.0; 3]; groups];
    let mut group_size = vec![0usize; groups];
    for p in 0..pairs {
        let anchor = [
            rng.uniform(0.15, 0.75),
            rng.uniform(0.15, 0.75),
            rng.uniform(0.15, 0.75),
        ];
        let channel = rng.below(3);
        let mut shifted = anchor;
        shifted[channel] += CONFUSION_DELTA;
        group_base[2 * p] = anchor;
        group_base[2 * p + 1] = shifted;
        group_size[2 * p] = sizes[p];
        group_size[2 * p + 1] = sizes[groups - 1 - p];
    }

    let mut cell_group = Vec::with_capacity(n);
    for (g, &s) in group_size.iter().enumerate() {
        cell_group.extend(std::iter::repeat(g).take(s));
    }
    rng.shuffle(&mut cell_group);

    let mut gt = Vec::with_capacity(n);
    let mut cond = Vec::with_capacity(n);
    const UNIQUE_SPREAD: f64 = 0.10;
    for &g in &cell_group {
        let mut color = group_base[g];
        for ch in &mut color {
            *ch = (*ch + rng.uniform(-UNIQUE_SPREAD, UNIQUE_SPREAD)).clamp(0.02, 0.98);
        }
        gt.push(color);
        cond.push(condition_encoding(color));
    }
    (gt, cond)
}

/// Cell permutation that rearranges whole `block` x `block` superblocks,
/// preserving the layout inside each block.
fn block_permutation(grid: usize, block: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let per_side = grid / block;
    let block_perm = rng.permutation(per_side * per_side);
    let mut perm = vec![0usize; grid * grid];
    for (i, p) in perm.iter_mut().enumerate() {
        let (y, x) = (i / grid, i % grid);
        let b = (y / block) * per_side + x / block;
        let target = block_perm[b];
        let (ty, tx) = (
            (target / per_side) * block + y % block,
            (target % per_side) * block + x % block,
        );
        *p = ty * grid + tx;
    }
    perm
}

/// Deterministic pair generation; identical (seed, config) always produce
/// bit-identical pairs.
pub fn generate_pair(seed: u64, config: &ExperimentConfig) -> SyntheticPair {
    let root = SplitMix64::new(seed);
    let mut color_rng = root.fork(1);
    let mut perm_rng = root.fork(2);
    let mut jitter_rng = root.fork(3);
    let mut texture_rng = root.fork(4);

    let grid = config.grid_size;
    let n = config.positions();
    let cell = config.cell_size();

    let (gt_colors, cond_colors) = match config.task {
        TaskKind::Mosaic => mosaic_colors(n, config.quant_levels, &mut color_rng),
        TaskKind::GradientShapes => gradient_shapes_colors(n, config.groups, &mut color_rng),
    };

    let ground_truth = render_cells(
        &gt_colors,
        grid,
        cell,
        config.texture_amplitude,
        Some(&mut texture_rng),
    );
    let condition = render_cells(&cond_colors, grid, cell, 0.0, None);

    let true_permutation = match config.permutation {
        PermutationKind::Random => perm_rng.permutation(n),
        PermutationKind::Identity => (0..n).collect(),
        PermutationKind::Blocks => block_permutation(grid, config.block_cells, &mut perm_rng),
    };
    let rearranged = permute_cells(&ground_truth, grid, cell, &true_permutation);
    let mut exemplar = if config.exemplar_cell_noise > 0.0 {
        cell_noise(&rearranged, grid, cell, config.exemplar_cell_noise, &mut jitter_rng)
    } else {
        rearranged
    };
    if config.exemplar_jitter_gain > 0.0 || config.exemplar_jitter_noise > 0.0 {
        exemplar = photometric_jitter(
            &exemplar,
            config.exemplar_jitter_gain,
            config.exemplar_jitter_noise,
            &mut jitter_rng,
        );
    }

    SyntheticPair {
        condition,
        ground_truth,
        exemplar,
        true_permutation,
    }
}

/// Augmented ground-truth view for the image encoder during training:
/// the same cell-noise plus photometric recipe as the exemplar, drawn
/// from an independent stream of the pair seed.
pub fn training_view(seed: u64, pair: &SyntheticPair, config: &ExperimentConfig) -> Image {
    let mut rng = SplitMix64::new(seed).fork(6);
    let grid = config.grid_size;
    let mut img = pair.ground_truth.clone();
    if config.exemplar_cell_noise > 0.0 {
        img = cell_noise(&img, grid, config.cell_size(), config.exemplar_cell_noise, &mut rng);
    }
    if config.exemplar_jitter_gain > 0.0 || config.exemplar_jitter_noise > 0.0 {
        img = photometric_jitter(
            &img,
            config.exemplar_jitter_gain,
            config.exemplar_jitter_noise,
            &mut rng,
        );
    }
    img
}

/// Pseudo-exemplar target Y': the ground truth under photometric jitter,
/// drawn from the pair's own deterministic stream.
pub fn pseudo_target(seed: u64, pair: &SyntheticPair, config: &ExperimentConfig) -> Image {
    let mut rng = SplitMix64::new(seed).fork(5);
    photometric_jitter(
        &pair.ground_truth,
        config.pseudo_jitter_gain,
        config.pseudo_jitter_noise,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::block_mean;

    fn base_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.image_size = 32;
        cfg.grid_size = 8;
        cfg
    }

    #[test]
    fn same_seed_same_pair() {
        let cfg = base_config();
        let a = generate_pair(42, &cfg);
        let b = generate_pair(42, &cfg);
        assert_eq!(a.condition.data(), b.condition.data());
        assert_eq!(a.ground_truth.data(), b.ground_truth.data());
        assert_eq!(a.exemplar.data(), b.exemplar.data());
        assert_eq!(a.true_permutation, b.true_permutation);
        let c = generate_pair(43, &cfg);
        assert_ne!(a.ground_truth.data(), c.ground_truth.data());
    }

    #[test]
    fn permutation_is_bijection() {
        let cfg = base_config();
        let pair = generate_pair(7, &cfg);
        let mut seen = vec![false; cfg.positions()];
        for &p in &pair.true_permutation {
            assert!(!seen[p]);
            seen[p] = true;
        }
    }

    #[test]
    fn identity_variant_without_jitter_equals_ground_truth() {
        let mut cfg = base_config();
        cfg.permutation = PermutationKind::Identity;
        cfg.exemplar_jitter_gain = 0.0;
        cfg.exemplar_jitter_noise = 0.0;
        let pair = generate_pair(5, &cfg);
        assert_eq!(pair.exemplar.data(), pair.ground_truth.data());
        assert_eq!(pair.true_permutation, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn exemplar_cells_are_rearranged_ground_truth_cells() {
        let mut cfg = base_config();
        cfg.exemplar_jitter_gain = 0.0;
        cfg.exemplar_jitter_noise = 0.0;
        let pair = generate_pair(11, &cfg);
        let gt_rows = block_mean(&pair.ground_truth, 8, 8).unwrap();
        let ex_rows = block_mean(&pair.exemplar, 8, 8).unwrap();
        for i in 0..64 {
            let p = pair.true_permutation[i];
            for ch in 0..3 {
                assert!(
                    (gt_rows.at(i, ch) - ex_rows.at(p, ch)).abs() < 1e-9,
                    "cell {i} -> {p} channel {ch}"
                );
            }
        }
    }

    #[test]
    fn brute_force_color_matcher_recovers_permutation_without_jitter() {
        let mut cfg = base_config();
        cfg.exemplar_jitter_gain = 0.0;
        cfg.exemplar_jitter_noise = 0.0;
        let pair = generate_pair(13, &cfg);
        let gt_rows = block_mean(&pair.ground_truth, 8, 8).unwrap();
        let ex_rows = block_mean(&pair.exemplar, 8, 8).unwrap();
        for i in 0..64 {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..64 {
                let d: f64 = (0..3)
                    .map(|ch| (gt_rows.at(i, ch) - ex_rows.at(j, ch)).powi(2))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(best, pair.true_permutation[i], "cell {i}");
        }
    }

    #[test]
    fn mosaic_cells_have_distinct_condition_labels() {
        let cfg = base_config();
        let pair = generate_pair(17, &cfg);
        let rows = block_mean(&pair.condition, 8, 8).unwrap();
        for i in 0..64 {
            for j in (i + 1)..64 {
                let d: f64 = (0..3)
                    .map(|ch| (rows.at(i, ch) - rows.at(j, ch)).abs())
                    .sum();
                assert!(d > 1e-6, "cells {i} and {j} share a condition label");
            }
        }
    }

    #[test]
    fn gradient_shapes_has_repeated_group_structure() {
        let mut cfg = base_config();
        cfg.task = TaskKind::GradientShapes;
        cfg.groups = 4;
        let pair = generate_pair(19, &cfg);
        // Unique per-cell offsets keep cells distinct while groups cluster:
        // count close pairs under a loose radius, which must be plentiful.
        let rows = block_mean(&pair.ground_truth, 8, 8).unwrap();
        let mut close = 0;
        for i in 0..64 {
            for j in (i + 1)..64 {
                let d: f64 = (0..3)
                    .map(|ch| (rows.at(i, ch) - rows.at(j, ch)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d > 0.0);
                if d < 0.25 {
                    close += 1;
                }
            }
        }
        assert!(close > 100, "expected clustered colors, got {close} close pairs");
    }

    #[test]
    fn pseudo_target_is_deterministic_jitter_of_ground_truth() {
        let cfg = base_config();
        let pair = generate_pair(23, &cfg);
        let a = pseudo_target(23, &pair, &cfg);
        let b = pseudo_target(23, &pair, &cfg);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), pair.ground_truth.data());
        let mean_diff: f64 = a
            .data()
            .iter()
            .zip(pair.ground_truth.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64;
        assert!(mean_diff < 0.2, "jitter too strong: {mean_diff}");
    }
}
