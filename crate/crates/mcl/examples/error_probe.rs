//! Where do matching errors live? Break down eval errors by distance to
//! the exemplar superblock boundary and report angular geometry.

use mcl::config::ExperimentConfig;
use mcl::dataset::generate_pair;
use mcl::encoder::encode;
use mcl::rng::SplitMix64;
use mcl::train::{pair_correspondence, train, Model};

fn main() {
    let path = std::env::args().nth(1).expect("usage: error_probe CONFIG");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let outcome = train(&cfg, None).unwrap();
    let model = Model::from_params(&cfg, &outcome.params).unwrap();

    let mut rng = SplitMix64::new(cfg.seed).fork(999);
    let grid = cfg.grid_size;
    let block = cfg.block_cells;
    let mut by_dist: Vec<(usize, usize)> = vec![(0, 0); block / 2 + 1];
    let mut pos_cos_sum = 0.0;
    let mut best_wrong_cos_sum = 0.0;
    let mut count = 0.0;

    for _ in 0..6 {
        let pair = generate_pair(rng.next_u64(), &cfg);
        let t = pair_correspondence(&model, &cfg, &pair).unwrap();
        let argmax = t.argmax();

        let fx = encode(&model.encoder_x, &pair.condition).unwrap();
        let fz = encode(&model.encoder_z, &pair.exemplar).unwrap();
        let ax = if cfg.scm {
            unimplemented!("probe covers scm off")
        } else {
            fx.clone()
        };
        let az = fz.clone();

        for i in 0..grid * grid {
            let p = pair.true_permutation[i];
            let (py, px) = (p / grid, p % grid);
            let dy = (py % block).min(block - 1 - py % block);
            let dx = (px % block).min(block - 1 - px % block);
            let dist = dy.min(dx).min(block / 2);
            by_dist[dist].1 += 1;
            if argmax[i] != p {
                by_dist[dist].0 += 1;
            }
            let dot = |a: &[f64], b: &[f64]| -> f64 {
                a.iter().zip(b).map(|(x, y)| x * y).sum()
            };
            pos_cos_sum += dot(ax.row(i), az.row(p));
            let mut best_wrong = -2.0;
            for j in 0..grid * grid {
                if j != p {
                    let c = dot(ax.row(i), az.row(j));
                    if c > best_wrong {
                        best_wrong = c;
                    }
                }
            }
            best_wrong_cos_sum += best_wrong;
            count += 1.0;
        }
    }

    println!(
        "final eval top1 {:.4}; mean cos(x_i, z_true) {:.4}; mean max cos(x_i, z_wrong) {:.4}",
        outcome.final_eval.top1,
        pos_cos_sum / count,
        best_wrong_cos_sum / count
    );
    for (d, (errs, total)) in by_dist.iter().enumerate() {
        if *total > 0 {
            println!(
                "distance-to-block-edge {d}: error rate {:.4} ({errs}/{total})",
                *errs as f64 / *total as f64
            );
        }
    }
}
