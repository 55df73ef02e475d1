//! Experiment CLI: train, eval, warp dumps, gradient checks, margin sweeps.

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcl::checkpoint;
use mcl::config::{ExperimentConfig, LossKind};
use mcl::correspondence::warp;
use mcl::dataset::generate_pair;
use mcl::error::{Error, Result};
use mcl::image::{block_mean, upsample_nearest, write_image, write_matrix_heatmap};
use mcl::metrics::{rows_to_csv, MetricsRow};
use mcl::rng::SplitMix64;
use mcl::scm::compute_scm;
use mcl::train::{evaluate_pairs, pair_correspondence, sweep_margin, train, Model};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "mcl",
    about = "Marginal contrastive correspondence on synthetic tasks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mcl,
    Infonce,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Angular margin in radians.
    #[arg(long)]
    margin: Option<f64>,
    /// Enable or disable self-correlation-map augmentation.
    #[arg(long, value_enum)]
    scm: Option<OnOff>,
    /// Contrastive loss for training.
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Run directory for checkpoints, metrics, and image dumps.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(margin) = self.margin {
            cfg.margin = margin;
        }
        if let Some(scm) = self.scm {
            cfg.scm = matches!(scm, OnOff::On);
        }
        if let Some(loss) = self.loss {
            cfg.loss = match loss {
                LossArg::Mcl => LossKind::Mcl,
                LossArg::Infonce => LossKind::InfoNce,
            };
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint.bin plus metrics.csv.
    Train(RunArgs),
    /// Evaluate the checkpoint in --out on freshly generated pairs.
    Eval(RunArgs),
    /// Dump warped-exemplar and correlation-map images for one pair.
    Warp(RunArgs),
    /// Run the finite-difference gradient suite; nonzero exit on failure.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train and evaluate across the configured margins and seeds.
    SweepMargin(RunArgs),
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let outcome = train(&cfg, Some(&args.out))?;
    for row in &outcome.metrics {
        println!("{}", row.to_csv_line());
    }
    println!(
        "done: {} steps, top1 {:.4}, l1 {:.3}, psnr {:.2} dB, ssim {:.4} -> {}",
        outcome.steps_run,
        outcome.final_eval.top1,
        outcome.final_eval.l1,
        outcome.final_eval.psnr,
        outcome.final_eval.ssim,
        args.out.display()
    );
    Ok(())
}

fn load_model(args: &RunArgs, cfg: &ExperimentConfig) -> Result<Model> {
    let path = args.out.join("checkpoint.bin");
    let params = checkpoint::read_checkpoint(&path)?;
    Model::from_params(cfg, &params)
}

fn eval_dataset(cfg: &ExperimentConfig) -> Vec<mcl::dataset::SyntheticPair> {
    let mut rng = SplitMix64::new(cfg.seed).fork(202);
    (0..cfg.eval_pairs)
        .map(|_| generate_pair(rng.next_u64(), cfg))
        .collect()
}

fn cmd_eval(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = load_model(args, &cfg)?;
    let pairs = eval_dataset(&cfg);
    let eval = evaluate_pairs(&model, &cfg, &pairs)?;
    let row = MetricsRow {
        run_id: cfg.run_id(),
        seed: cfg.seed,
        margin: cfg.margin,
        scm: cfg.scm,
        epoch: cfg.steps,
        l1: eval.l1,
        psnr: eval.psnr,
        ssim: eval.ssim,
        top1_accuracy: eval.top1,
        loss_total: 0.0,
        loss_contrastive: 0.0,
        loss_cycle: 0.0,
        loss_fcst: 0.0,
        loss_pse: 0.0,
    };
    std::fs::write(args.out.join("eval.csv"), rows_to_csv(&[row.clone()]))?;
    println!("{}", row.to_csv_line());
    println!(
        "top1 {:.4}, l1 {:.3}, psnr {:.2} dB, ssim {:.4} over {} pairs",
        eval.top1,
        eval.l1,
        eval.psnr,
        eval.ssim,
        pairs.len()
    );
    Ok(())
}

fn cmd_warp(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = load_model(args, &cfg)?;
    let pair = generate_pair(SplitMix64::new(cfg.seed).fork(303).next_u64(), &cfg);
    let t = pair_correspondence(&model, &cfg, &pair)?;
    let g = cfg.grid_size;
    let exemplar_rows = block_mean(&pair.exemplar, g, g)?;
    let warped = warp(&t, &exemplar_rows)?;

    write_image(args.out.join("condition.ppm"), &pair.condition)?;
    write_image(args.out.join("ground_truth.ppm"), &pair.ground_truth)?;
    write_image(args.out.join("exemplar.ppm"), &pair.exemplar)?;
    let upsampled = upsample_nearest(&warped.warped, g, g, cfg.cell_size());
    write_image(args.out.join("warped.ppm"), &upsampled)?;

    // Correlation structure of the exemplar branch, as a heatmap.
    let fz = mcl::encoder::encode(&model.encoder_z, &pair.exemplar)?;
    let scm = compute_scm(&fz);
    write_matrix_heatmap(args.out.join("scm_exemplar.pgm"), scm.grid(), -1.0, 1.0)?;
    write_matrix_heatmap(args.out.join("correspondence.pgm"), t.matrix(), 0.0, 1.0)?;

    let top1 = mcl::metrics::top1_accuracy(&warped.source_argmax, &pair.true_permutation);
    println!(
        "warp dump -> {} (top1 {:.4} on this pair)",
        args.out.display(),
        top1
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = mcl::gradcheck::run_suite(seed, 1.0);
    for r in &reports {
        println!("{r}");
    }
    if mcl::gradcheck::suite_passed(&reports) {
        println!("gradient suite: all {} operations PASS", reports.len());
        Ok(())
    } else {
        Err(Error::NonFinite("gradient suite failed".into()))
    }
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let margins = cfg.sweep_margins.clone();
    let (rows, cells) = sweep_margin(&cfg, &margins)?;

    std::fs::create_dir_all(&args.out)?;
    let mut csv = String::from("margin,seed,top1,l1,psnr,ssim\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.margin, c.seed, c.eval.top1, c.eval.l1, c.eval.psnr, c.eval.ssim
        ));
    }
    std::fs::write(args.out.join("sweep.csv"), csv)?;

    println!("margin  top1(mean+/-std)      l1      psnr    ssim");
    for row in &rows {
        println!(
            "{:<7.2} {:.4} +/- {:.4}    {:<7.3} {:<7.3} {:.4}",
            row.margin, row.mean_top1, row.std_top1, row.mean_l1, row.mean_psnr, row.mean_ssim
        );
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Warp(args) => cmd_warp(args),
        Command::Gradcheck { seed } => cmd_gradcheck(*seed),
        Command::SweepMargin(args) => cmd_sweep(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
