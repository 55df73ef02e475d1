//! Warp-quality metrics (L1, PSNR, SSIM, top-1 accuracy) and the metrics
//! CSV schema.

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR cap reported when the MSE is exactly zero, keeping the CSV free of
/// infinities.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM window side; windows slide with stride 1.
pub const SSIM_WINDOW: usize = 8;

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference on the 8-bit scale (values in [0,1] times 255).
pub fn l1_error(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(255.0 * sum / a.len() as f64)
}

/// 10 log10(max_value^2 / MSE); zero MSE reports the documented cap.
pub fn psnr(a: &Image, b: &Image, max_value: f64) -> Result<f64> {
    check_same_dims(a, b)?;
    if max_value <= 0.0 {
        return Err(Error::Config(format!(
            "max_value must be positive, got {max_value}"
        )));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

/// Windowed SSIM: 8x8 windows, stride 1, stabilizers C1 = (0.01 L)^2 and
/// C2 = (0.03 L)^2 with L = 1 for unit-range images, population moments,
/// mean over windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_dims(a, b)?;
    let (h, w, c) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let norm = 1.0 / (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for ch in 0..c {
        for oy in 0..=(h - SSIM_WINDOW) {
            for ox in 0..=(w - SSIM_WINDOW) {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let idx = ((oy + dy) * w + ox + dx) * c + ch;
                        let (x, y) = (a.data()[idx], b.data()[idx]);
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxy += x * y;
                    }
                }
                let (mx, my) = (sx * norm, sy * norm);
                let vx = sxx * norm - mx * mx;
                let vy = syy * norm - my * my;
                let cov = sxy * norm - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// Fraction of positions whose argmax match equals the true correspondence.
pub fn top1_accuracy(argmax: &[usize], true_permutation: &[usize]) -> f64 {
    debug_assert_eq!(argmax.len(), true_permutation.len());
    if argmax.is_empty() {
        return 0.0;
    }
    let hits = argmax
        .iter()
        .zip(true_permutation)
        .filter(|(a, t)| a == t)
        .count();
    hits as f64 / argmax.len() as f64
}

// ── Metrics CSV ──────────────────────────────────────────────────────

pub const CSV_HEADER: &str =
    "run_id,seed,margin,scm,epoch,l1,psnr,ssim,top1_accuracy,loss_total,loss_contrastive,loss_cycle,loss_fcst,loss_pse";

/// One logged evaluation point of one run. Serialized floats use Rust's
/// shortest round-trip formatting with '.' decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub margin: f64,
    pub scm: bool,
    pub epoch: u64,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub top1_accuracy: f64,
    pub loss_total: f64,
    pub loss_contrastive: f64,
    pub loss_cycle: f64,
    pub loss_fcst: f64,
    pub loss_pse: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.margin,
            if self.scm { "on" } else { "off" },
            self.epoch,
            self.l1,
            self.psnr,
            self.ssim,
            self.top1_accuracy,
            self.loss_total,
            self.loss_contrastive,
            self.loss_cycle,
            self.loss_fcst,
            self.loss_pse
        )
    }

    pub fn parse(line: &str) -> Result<MetricsRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(Error::Format(format!(
                "metrics row needs 14 fields, got {}",
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad float field {i}: {}", fields[i])))
        };
        let u = |i: usize| -> Result<u64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad int field {i}: {}", fields[i])))
        };
        let scm = match fields[3] {
            "on" => true,
            "off" => false,
            other => return Err(Error::Format(format!("bad scm flag {other}"))),
        };
        let row = MetricsRow {
            run_id: fields[0].to_string(),
            seed: u(1)?,
            margin: f(2)?,
            scm,
            epoch: u(4)?,
            l1: f(5)?,
            psnr: f(6)?,
            ssim: f(7)?,
            top1_accuracy: f(8)?,
            loss_total: f(9)?,
            loss_contrastive: f(10)?,
            loss_cycle: f(11)?,
            loss_fcst: f(12)?,
            loss_pse: f(13)?,
        };
        row.validate()?;
        Ok(row)
    }

    pub fn validate(&self) -> Result<()> {
        if self.psnr < 0.0 || self.psnr > PSNR_CAP_DB {
            return Err(Error::Format(format!("psnr out of range: {}", self.psnr)));
        }
        if !(-1.0..=1.0).contains(&self.ssim) {
            return Err(Error::Format(format!("ssim out of range: {}", self.ssim)));
        }
        if !(0.0..=1.0).contains(&self.top1_accuracy) {
            return Err(Error::Format(format!(
                "top1 out of range: {}",
                self.top1_accuracy
            )));
        }
        Ok(())
    }
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(Error::Format("missing metrics CSV header".into())),
    }
    lines.map(MetricsRow::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Tensor;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Image {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(vec![h, w, c], (0..h * w * c).map(|_| rng.next_f64()).collect()).unwrap()
    }

    fn constant_image(h: usize, w: usize, c: usize, v: f64) -> Image {
        Tensor::new(vec![h, w, c], vec![v; h * w * c]).unwrap()
    }

    #[test]
    fn psnr_of_identical_images_is_capped() {
        let img = random_image(1, 8, 8, 3);
        assert_eq!(psnr(&img, &img, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_of_full_range_difference_is_zero() {
        let a = constant_image(8, 8, 1, 0.0);
        let b = constant_image(8, 8, 1, 1.0);
        assert!(psnr(&a, &b, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn psnr_matches_scalar_oracle() {
        let a = random_image(2, 6, 5, 3);
        let b = random_image(3, 6, 5, 3);
        let mut mse = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            mse += (x - y) * (x - y);
        }
        mse /= a.len() as f64;
        let expect = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = random_image(4, 12, 10, 3);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_penalizes_inversion_around_mean() {
        // b mirrors a around 0.5: means match, covariance is negative.
        let a = random_image(5, 10, 10, 1);
        let b = Tensor::new(vec![10, 10, 1], a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let score = ssim(&a, &b).unwrap();
        assert!(score < 1.0);
        assert!(score < 0.5);
    }

    /// Independent SSIM oracle: two-pass centered moments per window.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (h, w, c) = (a.dims()[0], a.dims()[1], a.dims()[2]);
        let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
        let (c1, c2) = (0.0001, 0.0009);
        let mut scores = Vec::new();
        for ch in 0..c {
            for oy in 0..=(h - SSIM_WINDOW) {
                for ox in 0..=(w - SSIM_WINDOW) {
                    let mut xs = Vec::with_capacity(64);
                    let mut ys = Vec::with_capacity(64);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let idx = ((oy + dy) * w + ox + dx) * c + ch;
                            xs.push(a.data()[idx]);
                            ys.push(b.data()[idx]);
                        }
                    }
                    let mx = xs.iter().sum::<f64>() / n;
                    let my = ys.iter().sum::<f64>() / n;
                    let vx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
                    let vy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
                    let cov = xs
                        .iter()
                        .zip(&ys)
                        .map(|(x, y)| (x - mx) * (y - my))
                        .sum::<f64>()
                        / n;
                    scores.push(
                        ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)),
                    );
                }
            }
        }
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    #[test]
    fn ssim_matches_two_pass_oracle() {
        for seed in 0..5 {
            let a = random_image(100 + seed, 12, 12, 3);
            let b = random_image(200 + seed, 12, 12, 3);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(6, 4, 4, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn l1_matches_scalar_oracle() {
        let a = random_image(7, 5, 5, 3);
        let b = random_image(8, 5, 5, 3);
        let mut acc = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (x - y).abs();
        }
        let expect = 255.0 * acc / 75.0;
        assert!((l1_error(&a, &b).unwrap() - expect).abs() < 1e-10);
        assert_eq!(l1_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn top1_counts_matches() {
        assert_eq!(top1_accuracy(&[0, 1, 2, 3], &[0, 1, 2, 3]), 1.0);
        assert_eq!(top1_accuracy(&[0, 1, 2, 3], &[3, 1, 2, 0]), 0.5);
        assert_eq!(top1_accuracy(&[1, 0], &[0, 1]), 0.0);
    }

    #[test]
    fn metrics_row_roundtrip() {
        let row = MetricsRow {
            run_id: "m0.40-scm_on-seed3".into(),
            seed: 3,
            margin: 0.4,
            scm: true,
            epoch: 1500,
            l1: 12.345678901234,
            psnr: 31.09,
            ssim: 0.87654321,
            top1_accuracy: 0.9921875,
            loss_total: 1234.5678,
            loss_contrastive: 1000.1,
            loss_cycle: 100.25,
            loss_fcst: 84.0,
            loss_pse: 50.2175,
        };
        let line = row.to_csv_line();
        let back = MetricsRow::parse(&line).unwrap();
        assert_eq!(row, back);

        let csv = rows_to_csv(&[row.clone()]);
        let rows = parse_csv(&csv).unwrap();
        assert_eq!(rows, vec![row]);
    }

    #[test]
    fn metrics_row_rejects_out_of_range() {
        let mut row = MetricsRow {
            run_id: "r".into(),
            seed: 0,
            margin: 0.0,
            scm: false,
            epoch: 0,
            l1: 0.0,
            psnr: 10.0,
            ssim: 0.5,
            top1_accuracy: 0.5,
            loss_total: 0.0,
            loss_contrastive: 0.0,
            loss_cycle: 0.0,
            loss_fcst: 0.0,
            loss_pse: 0.0,
        };
        assert!(row.validate().is_ok());
        row.ssim = 1.5;
        assert!(row.validate().is_err());
    }
}
