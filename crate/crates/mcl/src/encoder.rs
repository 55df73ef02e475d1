//! Convolutional feature encoders.
//!
//! An encoder is a short stack of strided 3x3 convolutions with a leaky
//! activation between layers (the final layer is linear), followed by
//! flattening to a feature grid and row normalization. The condition
//! encoder and the image encoder share this architecture but never share
//! weights.

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::params::ParamSet;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::{conv2d_output_dims, NodeId, Tape};
use crate::tensor::Tensor;

pub const NORMALIZE_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub feature_channels: usize,
    pub kernel: usize,
    pub strides: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_channels: 3,
            hidden_channels: 16,
            feature_channels: 16,
            kernel: 3,
            strides: vec![2, 2, 1],
            leaky_slope: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    fn layer_channels(&self) -> Vec<(usize, usize)> {
        let n = self.strides.len();
        (0..n)
            .map(|i| {
                let cin = if i == 0 { self.input_channels } else { self.hidden_channels };
                let cout = if i + 1 == n { self.feature_channels } else { self.hidden_channels };
                (cin, cout)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    pub kernel: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<F> {
    pub layers: Vec<ConvLayer<F>>,
    pub leaky_slope: F,
}

impl<F: Scalar> EncoderParams<F> {
    /// Fan-in scaled uniform init (bound sqrt(6/fan_in), fan_in = k*k*Cin),
    /// zero biases. Identical seeds give bit-identical parameters.
    pub fn init(config: &EncoderConfig, rng: &mut SplitMix64) -> Self {
        let k = config.kernel;
        let layers = config
            .layer_channels()
            .iter()
            .zip(&config.strides)
            .map(|(&(cin, cout), &stride)| {
                let fan_in = k * k * cin;
                let bound = (6.0 / fan_in as f64).sqrt();
                let data: Vec<F> = (0..k * k * cin * cout)
                    .map(|_| F::from_f64(rng.uniform(-bound, bound)))
                    .collect();
                ConvLayer {
                    kernel: Tensor::new(vec![k, k, cin, cout], data).unwrap(),
                    bias: Tensor::zeros(vec![cout]),
                    stride,
                }
            })
            .collect();
        EncoderParams {
            layers,
            leaky_slope: F::from_f64(config.leaky_slope),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].kernel.dims()[2]
    }

    pub fn feature_channels(&self) -> usize {
        self.layers.last().unwrap().kernel.dims()[3]
    }

    /// Register every tensor under `prefix.convK.{kernel,bias}`.
    pub fn export(&self, prefix: &str, out: &mut ParamSet<F>) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            out.insert(format!("{prefix}.conv{i}.kernel"), layer.kernel.clone())?;
            out.insert(format!("{prefix}.conv{i}.bias"), layer.bias.clone())?;
        }
        Ok(())
    }

    /// Inverse of [`EncoderParams::export`]: pull tensors back by name.
    pub fn import(&mut self, prefix: &str, set: &ParamSet<F>) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kname = format!("{prefix}.conv{i}.kernel");
            let bname = format!("{prefix}.conv{i}.bias");
            let kernel = set
                .get(&kname)
                .ok_or_else(|| Error::Format(format!("missing tensor {kname}")))?;
            let bias = set
                .get(&bname)
                .ok_or_else(|| Error::Format(format!("missing tensor {bname}")))?;
            if kernel.dims() != layer.kernel.dims() || bias.dims() != layer.bias.dims() {
                return Err(Error::Format(format!("tensor {kname} has unexpected shape")));
            }
            layer.kernel = kernel.clone();
            layer.bias = bias.clone();
        }
        Ok(())
    }
}

/// Tape handles for one encoder's parameters.
#[derive(Debug, Clone)]
pub struct EncoderNodes<F> {
    layers: Vec<(NodeId, NodeId, usize)>,
    leaky_slope: F,
}

/// Register encoder parameters on the tape under `prefix.convK.*` names.
pub fn register_encoder<F: Scalar>(
    tape: &mut Tape<F>,
    prefix: &str,
    params: &EncoderParams<F>,
) -> EncoderNodes<F> {
    let layers = params
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let k = tape.parameter(&format!("{prefix}.conv{i}.kernel"), layer.kernel.clone());
            let b = tape.parameter(&format!("{prefix}.conv{i}.bias"), layer.bias.clone());
            (k, b, layer.stride)
        })
        .collect();
    EncoderNodes {
        layers,
        leaky_slope: params.leaky_slope,
    }
}

/// A feature grid living on the tape.
#[derive(Debug, Clone, Copy)]
pub struct TracedGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub node: NodeId,
}

/// Run the conv stack over an [H,W,Cin] image node: strided convolutions
/// with leaky activations between layers, flatten, then row-normalize.
pub fn encode_traced<F: Scalar>(
    tape: &mut Tape<F>,
    encoder: &EncoderNodes<F>,
    image: NodeId,
) -> Result<TracedGrid> {
    let dims = tape.value(image).dims().to_vec();
    if dims.len() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "encoder input must be [H,W,C], got {dims:?}"
        )));
    }
    let (mut h, mut w) = (dims[0], dims[1]);
    let mut x = image;
    let num_layers = encoder.layers.len();
    for (i, &(kernel, bias, stride)) in encoder.layers.iter().enumerate() {
        let kd = tape.value(kernel).dims().to_vec();
        let cin = tape.value(x).dims()[2];
        if kd[2] != cin {
            return Err(Error::DimensionMismatch(format!(
                "conv{i} expects {} input channels, got {cin}",
                kd[2]
            )));
        }
        let pad = (kd[0] - 1) / 2;
        x = tape.conv2d(x, kernel, bias, stride, pad);
        if i + 1 < num_layers {
            x = tape.leaky_relu(x, encoder.leaky_slope);
        }
        let (nh, nw) = conv2d_output_dims(h, w, kd[0], kd[1], stride, pad);
        h = nh;
        w = nw;
    }
    let channels = tape.value(x).dims()[2];
    let flat = tape.reshape(x, vec![h * w, channels]);
    let node = tape.normalize_rows(flat, F::from_f64(NORMALIZE_EPSILON));
    Ok(TracedGrid { height: h, width: w, channels, node })
}

/// Untraced convenience wrapper around [`encode_traced`].
pub fn encode<F: Scalar>(params: &EncoderParams<F>, image: &Tensor<F>) -> Result<FeatureGrid<F>> {
    let mut tape = Tape::new();
    let nodes = register_encoder(&mut tape, "enc", params);
    let img = tape.input(image.clone());
    let traced = encode_traced(&mut tape, &nodes, img)?;
    FeatureGrid::new(
        traced.height,
        traced.width,
        traced.channels,
        tape.value(traced.node).clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_by_one_layer_passes_channels_through() {
        // 1x1 kernel, identity over 2 channels, stride 1, no bias:
        // features are the normalized input pixels.
        let kernel = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = EncoderParams {
            layers: vec![ConvLayer { kernel, bias: Tensor::zeros(vec![2]), stride: 1 }],
            leaky_slope: 0.2,
        };
        let image = Tensor::new(vec![1, 2, 2], vec![3.0, 4.0, 0.5, 0.0]).unwrap();
        let grid = encode(&params, &image).unwrap();
        for (got, want) in grid.row(0).iter().zip([0.6, 0.8]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in grid.row(1).iter().zip([1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kernels_give_constant_normalized_bias() {
        let params = EncoderParams::<f64> {
            layers: vec![ConvLayer {
                kernel: Tensor::zeros(vec![3, 3, 1, 2]),
                bias: Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(),
                stride: 2,
            }],
            leaky_slope: 0.2,
        };
        let image = Tensor::new(vec![4, 4, 1], vec![0.7; 16]).unwrap();
        let grid = encode(&params, &image).unwrap();
        assert_eq!(grid.len(), 4);
        for i in 0..grid.len() {
            assert!((grid.row(i)[0] - 0.6).abs() < 1e-12);
            assert!((grid.row(i)[1] - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn random_two_layer_net_matches_direct_convolution_oracle() {
        let mut rng = SplitMix64::new(101);
        let config = EncoderConfig {
            input_channels: 1,
            hidden_channels: 3,
            feature_channels: 2,
            kernel: 3,
            strides: vec![2, 2],
            leaky_slope: 0.2,
        };
        let params = EncoderParams::<f64>::init(&config, &mut rng);
        let image_data: Vec<f64> = (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let image = Tensor::new(vec![8, 8, 1], image_data).unwrap();
        let grid = encode(&params, &image).unwrap();
        assert_eq!((grid.height(), grid.width(), grid.channels()), (2, 2, 2));

        // Independent oracle: naive convolution loops, then leaky, then conv,
        // then manual normalization.
        let conv = |input: &[f64], h: usize, w: usize, cin: usize, layer: &ConvLayer<f64>| {
            let k = layer.kernel.dims()[0];
            let cout = layer.kernel.dims()[3];
            let pad = (k - 1) / 2;
            let ho = (h + 2 * pad - k) / layer.stride + 1;
            let wo = (w + 2 * pad - k) / layer.stride + 1;
            let mut out = vec![0.0; ho * wo * cout];
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = layer.bias.data()[co];
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * layer.stride + ky) as isize - pad as isize;
                                let ix = (ox * layer.stride + kx) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += input[((iy as usize) * w + ix as usize) * cin + ci]
                                        * layer.kernel.data()
                                            [((ky * k + kx) * cin + ci) * cout + co];
                                }
                            }
                        }
                        out[(oy * wo + ox) * cout + co] = acc;
                    }
                }
            }
            (out, ho, wo, cout)
        };

        let (mut cur, mut h, mut w, mut c) = conv(image.data(), 8, 8, 1, &params.layers[0]);
        for v in &mut cur {
            if *v < 0.0 {
                *v *= 0.2;
            }
        }
        let r = conv(&cur, h, w, c, &params.layers[1]);
        cur = r.0;
        h = r.1;
        w = r.2;
        c = r.3;
        for (i, px) in cur.chunks_exact(c).enumerate() {
            let norm: f64 = px.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORMALIZE_EPSILON);
            for (j, &v) in px.iter().enumerate() {
                assert!(
                    (grid.tensor().at(i, j) - v / norm).abs() < 1e-10,
                    "position {i} channel {j}"
                );
            }
        }
        assert_eq!(h * w, grid.len());
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let config = EncoderConfig::default();
        let a = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(7));
        let b = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(7));
        let c = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(8));
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.kernel.data(), lb.kernel.data());
        }
        assert!(a
            .layers
            .iter()
            .zip(&c.layers)
            .any(|(la, lc)| la.kernel.data() != lc.kernel.data()));
        for layer in &a.layers {
            let fan_in = layer.kernel.dims()[0] * layer.kernel.dims()[1] * layer.kernel.dims()[2];
            let bound = (6.0 / fan_in as f64).sqrt();
            assert!(layer.kernel.data().iter().all(|v| v.abs() <= bound));
            assert!(layer.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn export_import_roundtrip() {
        let config = EncoderConfig::default();
        let params = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(9));
        let mut set = ParamSet::new();
        params.export("ex", &mut set).unwrap();
        let mut restored = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(10));
        restored.import("ex", &set).unwrap();
        for (a, b) in params.layers.iter().zip(&restored.layers) {
            assert_eq!(a.kernel.data(), b.kernel.data());
            assert_eq!(a.bias.data(), b.bias.data());
        }
    }

    #[test]
    fn wrong_input_channels_error() {
        let config = EncoderConfig::default();
        let params = EncoderParams::<f64>::init(&config, &mut SplitMix64::new(11));
        let image = Tensor::zeros(vec![8, 8, 2]);
        assert!(encode(&params, &image).is_err());
    }
}
