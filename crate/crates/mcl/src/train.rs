//! Training loop, evaluation, and the margin sweep.
//!
//! One training step records the whole batch on a single tape: encode the
//! condition, ground truth, and exemplar, optionally augment with projected
//! self-correlation maps, then combine the bidirectional contrastive loss
//! with the cycle, feature-consistency, and pseudo-pair terms. Gradients
//! flow through one backward pass and a shared Adam step. Identical
//! (config, seed) runs produce bit-identical metrics and checkpoints.

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint;
use crate::config::{ExperimentConfig, LossKind};
use crate::contrastive::{info_nce_traced, marginal_contrastive_traced, ContrastiveConfig};
use crate::correspondence::{
    build_correspondence, build_correspondence_traced, correspondence_objective_traced,
    cycle_loss_traced, feature_consistency_loss_traced, pseudo_pair_loss_traced, warp,
    ObjectiveParts, ObjectiveWeights,
};
use crate::dataset::{generate_pair, pseudo_target, training_view, SyntheticPair};
use crate::encoder::{
    encode, encode_traced, register_encoder, EncoderConfig, EncoderParams, TracedGrid,
};
use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::image::block_mean;
use crate::metrics::{l1_error, psnr, rows_to_csv, ssim, top1_accuracy, MetricsRow};
use crate::params::ParamSet;
use crate::rng::SplitMix64;
use crate::scm::{
    augment_features, augment_features_traced, compute_scm, compute_scm_traced, project_scm,
    project_scm_traced, ScmProjection,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use std::path::Path;

/// Trainable state: two encoders and, with SCM enabled, one projection per
/// branch (condition vs image; the image projection is shared between
/// exemplar and ground truth, mirroring the shared encoder).
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder_x: EncoderParams<f64>,
    pub encoder_z: EncoderParams<f64>,
    pub proj_x: Option<ScmProjection<f64>>,
    pub proj_z: Option<ScmProjection<f64>>,
}

fn encoder_config(config: &ExperimentConfig) -> EncoderConfig {
    EncoderConfig {
        input_channels: config.image_channels,
        hidden_channels: config.hidden_channels,
        feature_channels: config.feature_channels,
        ..EncoderConfig::default()
    }
}

impl Model {
    pub fn init(config: &ExperimentConfig) -> Model {
        let enc_cfg = encoder_config(config);
        let root = SplitMix64::new(config.seed ^ 0x6D63_6C5F_696E_6974);
        let n = config.positions();
        Model {
            encoder_x: EncoderParams::init(&enc_cfg, &mut root.fork(1)),
            encoder_z: EncoderParams::init(&enc_cfg, &mut root.fork(2)),
            proj_x: config
                .scm
                .then(|| ScmProjection::init(n, config.d_proj, &mut root.fork(3))),
            proj_z: config
                .scm
                .then(|| ScmProjection::init(n, config.d_proj, &mut root.fork(4))),
        }
    }

    pub fn to_params(&self) -> Result<ParamSet<f64>> {
        let mut set = ParamSet::new();
        self.encoder_x.export("ex", &mut set)?;
        self.encoder_z.export("ez", &mut set)?;
        if let Some(p) = &self.proj_x {
            set.insert("scm_x.weight", p.weight.clone())?;
            set.insert("scm_x.bias", p.bias.clone())?;
        }
        if let Some(p) = &self.proj_z {
            set.insert("scm_z.weight", p.weight.clone())?;
            set.insert("scm_z.bias", p.bias.clone())?;
        }
        Ok(set)
    }

    pub fn from_params(config: &ExperimentConfig, set: &ParamSet<f64>) -> Result<Model> {
        let mut model = Model::init(config);
        model.encoder_x.import("ex", set)?;
        model.encoder_z.import("ez", set)?;
        if config.scm {
            for (prefix, slot) in [("scm_x", &mut model.proj_x), ("scm_z", &mut model.proj_z)] {
                let weight = set
                    .get(&format!("{prefix}.weight"))
                    .ok_or_else(|| Error::Format(format!("missing tensor {prefix}.weight")))?;
                let bias = set
                    .get(&format!("{prefix}.bias"))
                    .ok_or_else(|| Error::Format(format!("missing tensor {prefix}.bias")))?;
                *slot = Some(ScmProjection::new(weight.clone(), bias.clone())?);
            }
        } else if set.get("scm_x.weight").is_some() {
            return Err(Error::Format(
                "checkpoint carries SCM projections but scm = off".into(),
            ));
        }
        Ok(model)
    }

    /// Features used for correspondence: encoder output, augmented with the
    /// projected self-correlation map when enabled.
    fn correspondence_features(
        &self,
        base: &FeatureGrid<f64>,
        proj: Option<&ScmProjection<f64>>,
    ) -> Result<FeatureGrid<f64>> {
        match proj {
            Some(p) => {
                let scm = compute_scm(base);
                let structure = project_scm(&scm, p)?;
                augment_features(base, &structure)
            }
            None => Ok(base.clone()),
        }
    }
}

/// Precomputed per-pair training data.
struct TrainPair {
    pair: SyntheticPair,
    /// Ground-truth view fed to the image encoder (augmented when
    /// `train_gt_augment` is on).
    gt_view: crate::image::Image,
    /// Exemplar content at feature resolution, [N, 3].
    exemplar_rows: Tensor<f64>,
    /// Pseudo-target Y' at feature resolution, [N, 3].
    pseudo_rows: Tensor<f64>,
}

struct TapeModel {
    ex: crate::encoder::EncoderNodes<f64>,
    ez: crate::encoder::EncoderNodes<f64>,
    proj_x: Option<(NodeId, NodeId)>,
    proj_z: Option<(NodeId, NodeId)>,
}

fn register_model(tape: &mut Tape<f64>, model: &Model) -> TapeModel {
    let ex = register_encoder(tape, "ex", &model.encoder_x);
    let ez = register_encoder(tape, "ez", &model.encoder_z);
    let mut reg_proj = |prefix: &str, p: &Option<ScmProjection<f64>>| {
        p.as_ref().map(|p| {
            (
                tape.parameter(&format!("{prefix}.weight"), p.weight.clone()),
                tape.parameter(&format!("{prefix}.bias"), p.bias.clone()),
            )
        })
    };
    let proj_x = reg_proj("scm_x", &model.proj_x);
    let proj_z = reg_proj("scm_z", &model.proj_z);
    TapeModel { ex, ez, proj_x, proj_z }
}

fn augment_on_tape(
    tape: &mut Tape<f64>,
    grid: &TracedGrid,
    proj: Option<(NodeId, NodeId)>,
) -> Result<NodeId> {
    match proj {
        Some((w, b)) => {
            let scm = compute_scm_traced(tape, grid.node);
            let structure = project_scm_traced(tape, scm, w, b)?;
            augment_features_traced(tape, grid.node, structure, 1e-8)
        }
        None => Ok(grid.node),
    }
}

struct PairLossNodes {
    objective: NodeId,
    contrastive: NodeId,
    cycle: NodeId,
    fcst: NodeId,
    pseudo: NodeId,
}

fn pair_objective(
    tape: &mut Tape<f64>,
    tm: &TapeModel,
    pair: &TrainPair,
    config: &ExperimentConfig,
    margin: f64,
) -> Result<PairLossNodes> {
    let cond = tape.input(pair.pair.condition.clone());
    let gt = tape.input(pair.gt_view.clone());
    let ex = tape.input(pair.pair.exemplar.clone());

    let fx = encode_traced(tape, &tm.ex, cond)?;
    let fy = encode_traced(tape, &tm.ez, gt)?;
    let fz = encode_traced(tape, &tm.ez, ex)?;

    let ax = augment_on_tape(tape, &fx, tm.proj_x)?;
    let ay = augment_on_tape(tape, &fy, tm.proj_z)?;
    let az = augment_on_tape(tape, &fz, tm.proj_z)?;

    let contrastive = match config.loss {
        LossKind::Mcl => {
            let cfg = ContrastiveConfig {
                margin,
                scale: config.scale,
                temperature: config.tau,
            };
            let xy = marginal_contrastive_traced(tape, ax, ay, &cfg)?;
            let yx = marginal_contrastive_traced(tape, ay, ax, &cfg)?;
            tape.add(xy.loss, yx.loss)
        }
        LossKind::InfoNce => {
            let xy = info_nce_traced(tape, ax, ay, config.tau)?;
            let yx = info_nce_traced(tape, ay, ax, config.tau)?;
            tape.add(xy.loss, yx.loss)
        }
    };

    let t = build_correspondence_traced(tape, ax, az, config.sharpness)?;
    let zimg = tape.input(pair.exemplar_rows.clone());
    let ytarget = tape.input(pair.pseudo_rows.clone());
    let cycle = cycle_loss_traced(tape, t, zimg)?;
    let pseudo = pseudo_pair_loss_traced(tape, t, zimg, ytarget)?;
    let fcst = feature_consistency_loss_traced(tape, fx.node, fy.node)?;

    let weights = ObjectiveWeights {
        cycle: config.lambda_cycle,
        feature_consistency: config.lambda_fcst,
        contrastive: config.lambda_contrastive,
        pseudo_pair: config.lambda_pse,
    };
    let objective = correspondence_objective_traced(
        tape,
        ObjectiveParts {
            cycle,
            feature_consistency: fcst,
            contrastive,
            pseudo_pair: pseudo,
        },
        &weights,
    )?;
    Ok(PairLossNodes { objective, contrastive, cycle, fcst, pseudo })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub contrastive: f64,
    pub cycle: f64,
    pub fcst: f64,
    pub pseudo: f64,
}

/// Forward the whole batch on one tape; returns the mean objective node and
/// the averaged component values.
fn batch_objective(
    tape: &mut Tape<f64>,
    tm: &TapeModel,
    batch: &[&TrainPair],
    config: &ExperimentConfig,
    margin: f64,
) -> Result<(NodeId, LossParts)> {
    let mut parts = LossParts::default();
    let mut total: Option<NodeId> = None;
    for pair in batch {
        let nodes = pair_objective(tape, tm, pair, config, margin)?;
        parts.contrastive += tape.value(nodes.contrastive).item();
        parts.cycle += tape.value(nodes.cycle).item();
        parts.fcst += tape.value(nodes.fcst).item();
        parts.pseudo += tape.value(nodes.pseudo).item();
        total = Some(match total {
            Some(acc) => tape.add(acc, nodes.objective),
            None => nodes.objective,
        });
    }
    let inv = 1.0 / batch.len() as f64;
    let mean = tape.scale(total.expect("non-empty batch"), inv);
    parts.contrastive *= inv;
    parts.cycle *= inv;
    parts.fcst *= inv;
    parts.pseudo *= inv;
    parts.total = tape.value(mean).item();
    Ok((mean, parts))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalResult {
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub top1: f64,
}

/// Build T for a pair from the model's correspondence features.
pub fn pair_correspondence(
    model: &Model,
    config: &ExperimentConfig,
    pair: &SyntheticPair,
) -> Result<crate::correspondence::CorrespondenceMatrix<f64>> {
    let fx = encode(&model.encoder_x, &pair.condition)?;
    let fz = encode(&model.encoder_z, &pair.exemplar)?;
    let ax = model.correspondence_features(&fx, model.proj_x.as_ref())?;
    let az = model.correspondence_features(&fz, model.proj_z.as_ref())?;
    build_correspondence(&ax, &az, config.sharpness)
}

/// Warp the exemplar at feature resolution and measure it against the
/// ground truth: L1 (8-bit scale), PSNR, SSIM, and top-1 accuracy of the
/// argmax matches. Averaged over pairs.
pub fn evaluate_pairs(
    model: &Model,
    config: &ExperimentConfig,
    pairs: &[SyntheticPair],
) -> Result<EvalResult> {
    let g = config.grid_size;
    let mut acc = EvalResult::default();
    for pair in pairs {
        let t = pair_correspondence(model, config, pair)?;
        let exemplar_rows = block_mean(&pair.exemplar, g, g)?;
        let gt_rows = block_mean(&pair.ground_truth, g, g)?;
        let warped = warp(&t, &exemplar_rows)?;
        let warped_img = warped.warped.reshaped(vec![g, g, 3])?;
        let gt_img = gt_rows.reshaped(vec![g, g, 3])?;
        acc.l1 += l1_error(&warped_img, &gt_img)?;
        acc.psnr += psnr(&warped_img, &gt_img, 1.0)?;
        acc.ssim += ssim(&warped_img, &gt_img)?;
        acc.top1 += top1_accuracy(&warped.source_argmax, &pair.true_permutation);
    }
    let inv = 1.0 / pairs.len() as f64;
    acc.l1 *= inv;
    acc.psnr *= inv;
    acc.ssim *= inv;
    acc.top1 *= inv;
    Ok(acc)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub final_eval: EvalResult,
    pub params: ParamSet<f64>,
    pub steps_run: u64,
}

fn metrics_row(
    config: &ExperimentConfig,
    epoch: u64,
    eval: &EvalResult,
    parts: &LossParts,
) -> MetricsRow {
    MetricsRow {
        run_id: config.run_id(),
        seed: config.seed,
        margin: config.margin,
        scm: config.scm,
        epoch,
        l1: eval.l1,
        psnr: eval.psnr,
        ssim: eval.ssim,
        top1_accuracy: eval.top1,
        loss_total: parts.total,
        loss_contrastive: parts.contrastive,
        loss_cycle: parts.cycle,
        loss_fcst: parts.fcst,
        loss_pse: parts.pseudo,
    }
}

/// Deterministic per-pair seeds derived from the master seed.
fn pair_seeds(master: u64, count: usize, tag: u64) -> Vec<u64> {
    let mut rng = SplitMix64::new(master).fork(tag);
    (0..count).map(|_| rng.next_u64()).collect()
}

fn prepare_train_pair(seed: u64, config: &ExperimentConfig) -> Result<TrainPair> {
    let pair = generate_pair(seed, config);
    let g = config.grid_size;
    let gt_view = if config.train_gt_augment {
        training_view(seed, &pair, config)
    } else {
        pair.ground_truth.clone()
    };
    let exemplar_rows = block_mean(&pair.exemplar, g, g)?;
    let pseudo = pseudo_target(seed, &pair, config);
    let pseudo_rows = block_mean(&pseudo, g, g)?;
    Ok(TrainPair { pair, gt_view, exemplar_rows, pseudo_rows })
}

/// Run training; when `out_dir` is given, writes `metrics.csv` and
/// `checkpoint.bin` there (plus a `last-good.bin` dump if the loss
/// diverges).
pub fn train(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let train_pairs: Vec<TrainPair> = pair_seeds(config.seed, config.train_pairs, 101)
        .into_iter()
        .map(|s| prepare_train_pair(s, config))
        .collect::<Result<_>>()?;
    let eval_pairs: Vec<SyntheticPair> = pair_seeds(config.seed, config.eval_pairs, 202)
        .into_iter()
        .map(|s| generate_pair(s, config))
        .collect();

    let mut model = Model::init(config);
    let mut params = model.to_params()?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
        },
        &params,
    );

    let mut metrics: Vec<MetricsRow> = Vec::new();
    let mut steps_run = 0u64;

    if config.steps == 0 {
        // Forward once for the loss snapshot; parameters stay at init.
        let mut tape = Tape::new();
        let tm = register_model(&mut tape, &model);
        let batch: Vec<&TrainPair> = train_pairs.iter().take(config.batch).collect();
        let (_, parts) = batch_objective(&mut tape, &tm, &batch, config, config.margin)?;
        let eval = evaluate_pairs(&model, config, &eval_pairs)?;
        metrics.push(metrics_row(config, 0, &eval, &parts));
    }

    let mut last_good = params.clone();
    for step in 1..=config.steps {
        let mut tape = Tape::new();
        let tm = register_model(&mut tape, &model);
        let batch: Vec<&TrainPair> = (0..config.batch)
            .map(|k| {
                let idx = ((step - 1) as usize * config.batch + k) % train_pairs.len();
                &train_pairs[idx]
            })
            .collect();
        let margin = if config.margin_warmup_steps > 0 && step <= config.margin_warmup_steps {
            config.margin * step as f64 / config.margin_warmup_steps as f64
        } else {
            config.margin
        };
        let (loss, parts) = batch_objective(&mut tape, &tm, &batch, config, margin)?;

        if !parts.total.is_finite() {
            if let Some(dir) = out_dir {
                checkpoint::write_checkpoint(dir.join("last-good.bin"), &last_good)?;
                std::fs::write(dir.join("metrics.csv"), rows_to_csv(&metrics))?;
            }
            return Err(Error::NonFinite(format!(
                "loss diverged at step {step}; last good state dumped"
            )));
        }

        tape.backward(loss)?;
        let mut grads = ParamSet::new();
        for name in params.names() {
            let g = tape
                .param_grad(&name)
                .ok_or_else(|| Error::Config(format!("parameter {name} missing from tape")))?;
            grads.insert(name, g)?;
        }

        if let Err(err) = adam.step(&mut params, &grads) {
            if let Some(dir) = out_dir {
                checkpoint::write_checkpoint(dir.join("last-good.bin"), &last_good)?;
                std::fs::write(dir.join("metrics.csv"), rows_to_csv(&metrics))?;
            }
            return Err(err);
        }
        last_good = params.clone();
        model = Model::from_params(config, &params)?;
        steps_run = step;

        let log_now = config.log_every > 0 && step % config.log_every == 0;
        if log_now || step == config.steps {
            let eval = evaluate_pairs(&model, config, &eval_pairs)?;
            metrics.push(metrics_row(config, step, &eval, &parts));
            if config.early_stop_top1 >= 0.0 && eval.top1 >= config.early_stop_top1 {
                break;
            }
        }
    }

    let final_eval = match metrics.last() {
        Some(row) => EvalResult {
            l1: row.l1,
            psnr: row.psnr,
            ssim: row.ssim,
            top1: row.top1_accuracy,
        },
        None => evaluate_pairs(&model, config, &eval_pairs)?,
    };

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("metrics.csv"), rows_to_csv(&metrics))?;
        checkpoint::write_checkpoint(dir.join("checkpoint.bin"), &params)?;
    }

    Ok(TrainOutcome { metrics, final_eval, params, steps_run })
}

// ── Margin sweep ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct SweepCell {
    pub margin: f64,
    pub seed: u64,
    pub eval: EvalResult,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub margin: f64,
    pub mean_top1: f64,
    pub std_top1: f64,
    pub mean_l1: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Train+evaluate every (margin, seed) cell. Cells are independent, so they
/// run on a small thread pool; results are aggregated in fixed order.
pub fn sweep_margin(
    config: &ExperimentConfig,
    margins: &[f64],
) -> Result<(Vec<SweepRow>, Vec<SweepCell>)> {
    let mut variants = Vec::new();
    for &margin in margins {
        for s in 0..config.sweep_seeds {
            let mut cfg = config.clone();
            cfg.margin = margin;
            cfg.seed = config.seed + s;
            variants.push(cfg);
        }
    }
    let cells = run_parallel(&variants, |cfg| {
        train(cfg, None).map(|outcome| SweepCell {
            margin: cfg.margin,
            seed: cfg.seed,
            eval: outcome.final_eval,
        })
    })?;

    let per_seed = config.sweep_seeds as usize;
    let rows = margins
        .iter()
        .enumerate()
        .map(|(i, &margin)| {
            let slice = &cells[i * per_seed..(i + 1) * per_seed];
            let mean = |f: fn(&SweepCell) -> f64| {
                slice.iter().map(f).sum::<f64>() / slice.len() as f64
            };
            let mean_top1 = mean(|c| c.eval.top1);
            let var = slice
                .iter()
                .map(|c| (c.eval.top1 - mean_top1).powi(2))
                .sum::<f64>()
                / slice.len() as f64;
            SweepRow {
                margin,
                mean_top1,
                std_top1: var.sqrt(),
                mean_l1: mean(|c| c.eval.l1),
                mean_psnr: mean(|c| c.eval.psnr),
                mean_ssim: mean(|c| c.eval.ssim),
            }
        })
        .collect();
    Ok((rows, cells))
}

/// Run independent jobs across available cores, preserving input order.
pub fn run_parallel<I, O, F>(inputs: &[I], job: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(inputs.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<O>>>> =
        (0..inputs.len()).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if idx >= inputs.len() {
                    break;
                }
                let result = job(&inputs[idx]);
                *slots[idx].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.image_size = 32;
        cfg.grid_size = 8;
        cfg.feature_channels = 8;
        cfg.hidden_channels = 8;
        cfg.d_proj = 8;
        cfg.steps = 3;
        cfg.batch = 2;
        cfg.train_pairs = 2;
        cfg.eval_pairs = 2;
        cfg.log_every = 2;
        cfg
    }

    #[test]
    fn zero_steps_returns_init_params() {
        let mut cfg = tiny_config();
        cfg.steps = 0;
        let outcome = train(&cfg, None).unwrap();
        let init = Model::init(&cfg).to_params().unwrap();
        assert_eq!(outcome.params, init);
        assert_eq!(outcome.metrics.len(), 1);
        assert_eq!(outcome.metrics[0].epoch, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let mut cfg = tiny_config();
        cfg.learning_rate = 0.0;
        cfg.steps = 4;
        cfg.log_every = 1;
        // One batch covering the whole pool makes every step identical.
        cfg.batch = 2;
        cfg.train_pairs = 2;
        let outcome = train(&cfg, None).unwrap();
        let first = outcome.metrics[0].loss_total;
        for row in &outcome.metrics {
            assert_eq!(row.loss_total, first);
        }
        let init = Model::init(&cfg).to_params().unwrap();
        assert_eq!(outcome.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(rows_to_csv(&a.metrics), rows_to_csv(&b.metrics));
    }

    #[test]
    fn training_with_scm_runs_and_is_deterministic() {
        let mut cfg = tiny_config();
        cfg.scm = true;
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.params.get("scm_x.weight").is_some());
    }

    #[test]
    fn loss_decreases_over_short_run() {
        let mut cfg = tiny_config();
        cfg.steps = 40;
        cfg.log_every = 1;
        cfg.learning_rate = 1e-3;
        let outcome = train(&cfg, None).unwrap();
        let first = outcome.metrics.first().unwrap().loss_total;
        let last = outcome.metrics.last().unwrap().loss_total;
        assert!(
            last < first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn infonce_baseline_runs() {
        let mut cfg = tiny_config();
        cfg.loss = LossKind::InfoNce;
        let outcome = train(&cfg, None).unwrap();
        assert_eq!(outcome.steps_run, 3);
    }

    #[test]
    fn checkpoint_files_roundtrip_exactly() {
        let cfg = tiny_config();
        let dir = std::env::temp_dir().join(format!("mcl-train-test-{}", std::process::id()));
        let outcome = train(&cfg, Some(&dir)).unwrap();
        let restored = checkpoint::read_checkpoint(dir.join("checkpoint.bin")).unwrap();
        assert_eq!(outcome.params, restored);
        let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        let rows = crate::metrics::parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), outcome.metrics.len());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn run_parallel_preserves_order() {
        let inputs: Vec<u64> = (0..17).collect();
        let out = run_parallel(&inputs, |&x| Ok(x * x)).unwrap();
        assert_eq!(out, inputs.iter().map(|x| x * x).collect::<Vec<_>>());
    }
}
