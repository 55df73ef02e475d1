//! Diagnostic probe: separability, train-pair vs fresh-pair accuracy.

use mcl::config::ExperimentConfig;
use mcl::contrastive::feature_separability_stats;
use mcl::dataset::generate_pair;
use mcl::encoder::encode;
use mcl::metrics::top1_accuracy;
use mcl::rng::SplitMix64;
use mcl::train::{pair_correspondence, train, Model};

fn main() {
    let path = std::env::args().nth(1).expect("usage: train_probe CONFIG");
    let cfg = ExperimentConfig::load(&path).unwrap();

    let train_seeds: Vec<u64> = {
        let mut rng = SplitMix64::new(cfg.seed).fork(101);
        (0..cfg.train_pairs).map(|_| rng.next_u64()).collect()
    };
    let fresh_seeds: Vec<u64> = {
        let mut rng = SplitMix64::new(cfg.seed).fork(999);
        (0..4).map(|_| rng.next_u64()).collect()
    };

    let accuracy = |model: &Model, seeds: &[u64]| -> f64 {
        let mut acc = 0.0;
        for &s in seeds {
            let pair = generate_pair(s, &cfg);
            let t = pair_correspondence(model, &cfg, &pair).unwrap();
            acc += top1_accuracy(&t.argmax(), &pair.true_permutation);
        }
        acc / seeds.len() as f64
    };

    let pair0 = generate_pair(train_seeds[0], &cfg);
    let report = |label: &str, model: &Model| {
        let fx = encode(&model.encoder_x, &pair0.condition).unwrap();
        let fy = encode(&model.encoder_z, &pair0.ground_truth).unwrap();
        let (pos, neg) = feature_separability_stats(&fx, &fy).unwrap();
        println!(
            "{label}: pos angle {pos:.4}, neg angle {neg:.4}, train-top1 {:.4}, fresh-top1 {:.4}",
            accuracy(model, &train_seeds),
            accuracy(model, &fresh_seeds)
        );
    };

    report("init ", &Model::init(&cfg));
    let outcome = train(&cfg, None).unwrap();
    for row in outcome.metrics.iter().rev().take(3).collect::<Vec<_>>().iter().rev() {
        println!(
            "step {:>5}: eval-top1 {:.4} loss {:.1} contrast {:.1} cyc {:.1} fcst {:.1} pse {:.1}",
            row.epoch, row.top1_accuracy, row.loss_total, row.loss_contrastive,
            row.loss_cycle, row.loss_fcst, row.loss_pse
        );
    }
    let trained = Model::from_params(&cfg, &outcome.params).unwrap();
    report("final", &trained);
}
