//! Image grids and binary netpbm I/O.
//!
//! Images are [H, W, C] f64 tensors with values in [0, 1]; C = 1 maps to
//! PGM (P5) and C = 3 to PPM (P6), both with maxval 255.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

pub type Image = Tensor<f64>;

fn quantize_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as P5 (1 channel) or P6 (3 channels), maxval 255.
pub fn encode_netpbm(img: &Image) -> Result<Vec<u8>> {
    if img.dims().len() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "image must be [H,W,C], got {:?}",
            img.dims()
        )));
    }
    let (h, w, c) = (img.dims()[0], img.dims()[1], img.dims()[2]);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::DimensionMismatch(format!(
                "netpbm supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = Vec::with_capacity(h * w * c + 32);
    write!(&mut out, "{magic}\n{w} {h}\n255\n")?;
    out.extend(img.data().iter().map(|&v| quantize_byte(v)));
    Ok(out)
}

pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    std::fs::write(path, encode_netpbm(img)?)?;
    Ok(())
}

/// Parse a binary P5/P6 image back to a [H,W,C] tensor scaled to [0, 1].
pub fn decode_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // Skip whitespace and '#' comment lines between header fields.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported netpbm magic {other}"))),
    };
    let w: usize = token()?
        .parse()
        .map_err(|_| Error::Format("bad width".into()))?;
    let h: usize = token()?
        .parse()
        .map_err(|_| Error::Format("bad height".into()))?;
    let maxval: usize = token()?
        .parse()
        .map_err(|_| Error::Format("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("expected maxval 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = h * w * channels;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data: Vec<f64> = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Tensor::new(vec![h, w, channels], data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_netpbm(&std::fs::read(path)?)
}

/// Dump an arbitrary matrix as a PGM heatmap, linearly rescaled so that
/// [lo, hi] spans the full gray range.
pub fn write_matrix_heatmap(
    path: impl AsRef<Path>,
    m: &Tensor<f64>,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if m.dims().len() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "heatmap expects a matrix, got {:?}",
            m.dims()
        )));
    }
    let span = (hi - lo).max(1e-12);
    let img = Tensor::new(
        vec![m.dims()[0], m.dims()[1], 1],
        m.data().iter().map(|&v| (v - lo) / span).collect(),
    )?;
    write_image(path, &img)
}

/// Mean color of each grid cell: [H,W,C] -> [grid_h * grid_w, C] rows in
/// grid row-major order.
pub fn block_mean(img: &Image, grid_h: usize, grid_w: usize) -> Result<Tensor<f64>> {
    let (h, w, c) = (img.dims()[0], img.dims()[1], img.dims()[2]);
    if h % grid_h != 0 || w % grid_w != 0 {
        return Err(Error::DimensionMismatch(format!(
            "image {h}x{w} not divisible into {grid_h}x{grid_w} cells"
        )));
    }
    let (ch, cw) = (h / grid_h, w / grid_w);
    let inv = 1.0 / (ch * cw) as f64;
    let mut out = vec![0.0; grid_h * grid_w * c];
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let acc = &mut out[(gy * grid_w + gx) * c..(gy * grid_w + gx + 1) * c];
            for dy in 0..ch {
                for dx in 0..cw {
                    let px = &img.data()[((gy * ch + dy) * w + gx * cw + dx) * c..][..c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v;
                    }
                }
            }
            for a in acc.iter_mut() {
                *a *= inv;
            }
        }
    }
    Tensor::new(vec![grid_h * grid_w, c], out)
}

/// Nearest-neighbor upsampling of grid rows back to image resolution, for
/// visualization dumps.
pub fn upsample_nearest(rows: &Tensor<f64>, grid_h: usize, grid_w: usize, cell: usize) -> Image {
    let c = rows.dims()[1];
    let (h, w) = (grid_h * cell, grid_w * cell);
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let row = (y / cell) * grid_w + x / cell;
            let src = &rows.data()[row * c..(row + 1) * c];
            out[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(src);
        }
    }
    Tensor::new(vec![h, w, c], out).unwrap()
}

/// Photometric jitter: one gain per channel drawn from [1-gain, 1+gain],
/// plus per-pixel Gaussian noise, clamped back to [0, 1].
pub fn photometric_jitter(img: &Image, gain: f64, noise_sigma: f64, rng: &mut SplitMix64) -> Image {
    let c = img.dims()[2];
    let gains: Vec<f64> = (0..c).map(|_| rng.uniform(1.0 - gain, 1.0 + gain)).collect();
    let data: Vec<f64> = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let g = gains[i % c];
            (v * g + noise_sigma * rng.normal()).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(img.dims().to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(
            vec![h, w, c],
            (0..h * w * c).map(|_| rng.next_f64()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ppm_roundtrip_is_exact_at_byte_level() {
        let img = test_image(5, 7, 3, 1);
        let bytes = encode_netpbm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        let back = decode_netpbm(&bytes).unwrap();
        let again = encode_netpbm(&back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn pgm_roundtrip() {
        let img = test_image(4, 4, 1, 2);
        let bytes = encode_netpbm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n"));
        let back = decode_netpbm(&bytes).unwrap();
        assert_eq!(back.dims(), &[4, 4, 1]);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_netpbm(b"P4\n2 2\n255\n....").is_err());
        assert!(decode_netpbm(b"P6\n2 2\n255\nab").is_err());
        assert!(decode_netpbm(b"P6\n2 2\n63\naaaaaaaaaaaa").is_err());
    }

    #[test]
    fn decode_skips_comments() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x10\x20";
        let img = decode_netpbm(bytes).unwrap();
        assert_eq!(img.dims(), &[1, 2, 1]);
        assert!((img.data()[0] - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn block_mean_averages_cells() {
        // 4x4 single channel, 2x2 grid: each 2x2 cell constant.
        let mut data = vec![0.0; 16];
        for y in 0..4 {
            for x in 0..4 {
                let cell = (y / 2) * 2 + x / 2;
                data[y * 4 + x] = cell as f64 * 0.25;
            }
        }
        let img = Tensor::new(vec![4, 4, 1], data).unwrap();
        let rows = block_mean(&img, 2, 2).unwrap();
        assert_eq!(rows.data(), &[0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn upsample_inverts_block_mean_for_cellwise_constant_images() {
        let rows = Tensor::new(vec![4, 2], (0..8).map(|i| i as f64 / 8.0).collect()).unwrap();
        let img = upsample_nearest(&rows, 2, 2, 3);
        assert_eq!(img.dims(), &[6, 6, 2]);
        let back = block_mean(&img, 2, 2).unwrap();
        for (a, b) in rows.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let img = test_image(6, 6, 3, 3);
        let a = photometric_jitter(&img, 0.2, 0.02, &mut SplitMix64::new(9));
        let b = photometric_jitter(&img, 0.2, 0.02, &mut SplitMix64::new(9));
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.data() != img.data());
    }
}
