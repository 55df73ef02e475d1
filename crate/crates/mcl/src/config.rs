//! Experiment configuration: defaults, the flat `key = value` file format,
//! and CLI overrides.
//!
//! Unknown keys are errors so typos fail loudly. Lines starting with `#`
//! are comments.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Independent per-cell colors; condition is a posterized encoding.
    Mosaic,
    /// Few texture groups with distinct multiplicities and confusable base
    /// colors; layout statistics are needed to disambiguate.
    GradientShapes,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Mosaic => write!(f, "mosaic"),
            TaskKind::GradientShapes => write!(f, "gradient-shapes"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mcl,
    InfoNce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mcl => write!(f, "mcl"),
            LossKind::InfoNce => write!(f, "infonce"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationKind {
    /// Permute individual cells; destroys all local context.
    Random,
    Identity,
    /// Permute square blocks of cells, keeping layout inside each block
    /// coherent (exemplars are globally rearranged, locally intact).
    Blocks,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub image_size: usize,
    pub grid_size: usize,
    pub image_channels: usize,
    pub feature_channels: usize,
    pub hidden_channels: usize,
    pub scm: bool,
    pub d_proj: usize,
    pub loss: LossKind,
    pub margin: f64,
    pub scale: f64,
    pub tau: f64,
    pub sharpness: f64,
    pub lambda_cycle: f64,
    pub lambda_fcst: f64,
    pub lambda_contrastive: f64,
    pub lambda_pse: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub steps: u64,
    pub batch: usize,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub seed: u64,
    pub log_every: u64,
    pub permutation: PermutationKind,
    /// Block side in cells for `permutation = blocks`.
    pub block_cells: usize,
    pub exemplar_jitter_gain: f64,
    pub exemplar_jitter_noise: f64,
    /// Per-cell color noise on the exemplar (whole cells shift together),
    /// the main source of matching ambiguity at feature resolution.
    pub exemplar_cell_noise: f64,
    /// Feed E_Z an augmented view of the ground truth during training
    /// (same jitter recipe as the exemplar), so the contrastive loss sees
    /// the appearance variation it must become invariant to.
    pub train_gt_augment: bool,
    pub pseudo_jitter_gain: f64,
    pub pseudo_jitter_noise: f64,
    pub quant_levels: usize,
    pub texture_amplitude: f64,
    pub groups: usize,
    /// Ramp the margin linearly from zero over this many first steps; a
    /// cold-start margin can anti-align the two fresh encoders (the clamped
    /// positive logit has no gradient past pi), so the schedule lets the
    /// InfoNCE-like phase align them first.
    pub margin_warmup_steps: u64,
    /// Stop once eval top-1 reaches this value; negative disables.
    pub early_stop_top1: f64,
    pub sweep_margins: Vec<f64>,
    pub sweep_seeds: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Mosaic,
            image_size: 64,
            grid_size: 16,
            image_channels: 3,
            feature_channels: 16,
            hidden_channels: 16,
            scm: false,
            d_proj: 32,
            loss: LossKind::Mcl,
            margin: 0.4,
            scale: 10.0,
            tau: 0.1,
            sharpness: 100.0,
            lambda_cycle: 1.0,
            lambda_fcst: 1.0,
            lambda_contrastive: 1.0,
            lambda_pse: 1.0,
            learning_rate: 1e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            steps: 2000,
            batch: 4,
            train_pairs: 8,
            eval_pairs: 4,
            seed: 1,
            log_every: 100,
            permutation: PermutationKind::Blocks,
            block_cells: 4,
            exemplar_jitter_gain: 0.1,
            exemplar_jitter_noise: 0.02,
            exemplar_cell_noise: 0.06,
            train_gt_augment: true,
            pseudo_jitter_gain: 0.2,
            pseudo_jitter_noise: 0.02,
            quant_levels: 7,
            texture_amplitude: 0.03,
            groups: 8,
            margin_warmup_steps: 200,
            early_stop_top1: -1.0,
            sweep_margins: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            sweep_seeds: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn cell_size(&self) -> usize {
        self.image_size / self.grid_size
    }

    pub fn positions(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn validate(&self) -> Result<()> {
        // The encoder stack has total stride 4.
        if self.grid_size * 4 != self.image_size {
            return Err(Error::Config(format!(
                "image_size must be 4 * grid_size (encoder stride product), got {} and {}",
                self.image_size, self.grid_size
            )));
        }
        if self.image_size % self.grid_size != 0 || self.grid_size == 0 {
            return Err(Error::Config("grid_size must divide image_size".into()));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.margin) {
            return Err(Error::Config(format!(
                "margin must lie in [0, pi/2), got {}",
                self.margin
            )));
        }
        if self.scale <= 0.0 || self.tau <= 0.0 || self.sharpness <= 0.0 {
            return Err(Error::Config(
                "scale, tau and sharpness must be positive".into(),
            ));
        }
        for (name, v) in [
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_fcst", self.lambda_fcst),
            ("lambda_contrastive", self.lambda_contrastive),
            ("lambda_pse", self.lambda_pse),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if self.batch == 0 || self.train_pairs == 0 || self.eval_pairs == 0 {
            return Err(Error::Config(
                "batch, train_pairs and eval_pairs must be positive".into(),
            ));
        }
        if self.scm && self.d_proj == 0 {
            return Err(Error::Config("d_proj must be positive when scm is on".into()));
        }
        if self.quant_levels.pow(3) < self.positions() {
            return Err(Error::Config(format!(
                "quant_levels^3 = {} cannot give {} distinct cells",
                self.quant_levels.pow(3),
                self.positions()
            )));
        }
        if self.groups < 2 || self.groups % 2 != 0 || self.groups > self.positions() {
            return Err(Error::Config(
                "groups must be an even number of at least 2".into(),
            ));
        }
        for &m in &self.sweep_margins {
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&m) {
                return Err(Error::Config(format!("sweep margin {m} out of range")));
            }
        }
        if self.sweep_seeds == 0 {
            return Err(Error::Config("sweep_seeds must be positive".into()));
        }
        if self.permutation == PermutationKind::Blocks
            && (self.block_cells == 0 || self.grid_size % self.block_cells != 0)
        {
            return Err(Error::Config(format!(
                "block_cells {} must divide grid_size {}",
                self.block_cells, self.grid_size
            )));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(v: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad float value '{v}'")))
        }
        fn us(v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad integer value '{v}'")))
        }
        fn u(v: &str) -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad integer value '{v}'")))
        }
        match key {
            "task" => {
                self.task = match value {
                    "mosaic" => TaskKind::Mosaic,
                    "gradient-shapes" => TaskKind::GradientShapes,
                    other => return Err(Error::Config(format!("unknown task '{other}'"))),
                }
            }
            "image_size" => self.image_size = us(value)?,
            "grid_size" => self.grid_size = us(value)?,
            "image_channels" => self.image_channels = us(value)?,
            "feature_channels" => self.feature_channels = us(value)?,
            "hidden_channels" => self.hidden_channels = us(value)?,
            "scm" => self.scm = parse_on_off(value)?,
            "d_proj" => self.d_proj = us(value)?,
            "loss" => {
                self.loss = match value {
                    "mcl" => LossKind::Mcl,
                    "infonce" => LossKind::InfoNce,
                    other => return Err(Error::Config(format!("unknown loss '{other}'"))),
                }
            }
            "margin" => self.margin = f(value)?,
            "scale" => self.scale = f(value)?,
            "tau" => self.tau = f(value)?,
            "sharpness" => self.sharpness = f(value)?,
            "lambda_cycle" => self.lambda_cycle = f(value)?,
            "lambda_fcst" => self.lambda_fcst = f(value)?,
            "lambda_contrastive" => self.lambda_contrastive = f(value)?,
            "lambda_pse" => self.lambda_pse = f(value)?,
            "learning_rate" => self.learning_rate = f(value)?,
            "adam_beta1" => self.adam_beta1 = f(value)?,
            "adam_beta2" => self.adam_beta2 = f(value)?,
            "adam_epsilon" => self.adam_epsilon = f(value)?,
            "steps" => self.steps = u(value)?,
            "batch" => self.batch = us(value)?,
            "train_pairs" => self.train_pairs = us(value)?,
            "eval_pairs" => self.eval_pairs = us(value)?,
            "seed" => self.seed = u(value)?,
            "log_every" => self.log_every = u(value)?,
            "permutation" => {
                self.permutation = match value {
                    "random" => PermutationKind::Random,
                    "identity" => PermutationKind::Identity,
                    "blocks" => PermutationKind::Blocks,
                    other => return Err(Error::Config(format!("unknown permutation '{other}'"))),
                }
            }
            "block_cells" => self.block_cells = us(value)?,
            "exemplar_jitter_gain" => self.exemplar_jitter_gain = f(value)?,
            "exemplar_jitter_noise" => self.exemplar_jitter_noise = f(value)?,
            "exemplar_cell_noise" => self.exemplar_cell_noise = f(value)?,
            "train_gt_augment" => self.train_gt_augment = parse_on_off(value)?,
            "pseudo_jitter_gain" => self.pseudo_jitter_gain = f(value)?,
            "pseudo_jitter_noise" => self.pseudo_jitter_noise = f(value)?,
            "quant_levels" => self.quant_levels = us(value)?,
            "texture_amplitude" => self.texture_amplitude = f(value)?,
            "groups" => self.groups = us(value)?,
            "margin_warmup_steps" => self.margin_warmup_steps = u(value)?,
            "early_stop_top1" => {
                self.early_stop_top1 = if value == "off" { -1.0 } else { f(value)? }
            }
            "sweep_margins" => {
                self.sweep_margins = value
                    .split(',')
                    .map(|s| f(s.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "sweep_seeds" => self.sweep_seeds = u(value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file applied over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Identifier used in metrics rows and file names.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-m{:.2}-scm_{}-seed{}",
            self.task,
            self.loss,
            self.margin,
            if self.scm { "on" } else { "off" },
            self.seed
        )
    }
}

fn parse_on_off(value: &str) -> Result<bool> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!("expected on/off, got '{other}'"))),
    }
}
