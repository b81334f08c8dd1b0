//! Forward-only convolutions and the segmentation-guided denoising block.
//!
//! The block runs `N` dilated 3×3 convolutions and a 1×1 fusion (each
//! followed by ReLU), then two parallel 1×1 heads: one produces
//! segmentation logits over categories plus background, the other a weight
//! map squashed by a logistic function and multiplied into the input.

use ndarray::{s, Array1, Array3, Array4};
use rand::Rng;

use super::FeatureMap;
use crate::error::{Error, Result};

/// Dilated convolutions per pyramid level P3–P7.
pub const DEFAULT_DILATED_PER_LEVEL: [usize; 5] = [1, 1, 1, 1, 1];

/// Heavier per-level configuration used in ablations.
pub const ABLATION_DILATED_PER_LEVEL: [usize; 5] = [4, 4, 3, 2, 2];

/// Dilation rates `1, 2, ..., n` for a stack of `n` convolutions.
pub fn dilation_schedule(n: usize) -> Vec<usize> {
    (1..=n).collect()
}

/// Zero-padded "same" cross-correlation with an odd `k × k` kernel of shape
/// `(out, in, k, k)`.
pub fn dilated_conv2d(x: &FeatureMap, kernel: &Array4<f64>, dilation: usize) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    let (co, ci, kh, kw) = kernel.dim();
    if ci != c {
        return Err(Error::argument(format!("kernel expects {ci} input channels, map has {c}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::argument(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if dilation == 0 {
        return Err(Error::argument("dilation must be at least 1"));
    }
    if co == 0 {
        return Err(Error::argument("kernel has no output channels"));
    }
    let r = (kh / 2) as isize;
    let d = dilation as isize;
    let xd = x.data();
    let mut out = Array3::<f64>::zeros((co, h, w));

    for ky in 0..kh {
        let dy = (ky as isize - r) * d;
        // output rows whose shifted input row stays inside the map
        let (y0, y1) = valid_range(dy, h);
        if y0 >= y1 {
            continue;
        }
        for kx in 0..kw {
            let dx = (kx as isize - r) * d;
            let (x0, x1) = valid_range(dx, w);
            if x0 >= x1 {
                continue;
            }
            for o in 0..co {
                let mut dst = out.slice_mut(s![o, y0..y1, x0..x1]);
                for i in 0..c {
                    let k = kernel[[o, i, ky, kx]];
                    if k == 0.0 {
                        continue;
                    }
                    let src = xd.slice(s![
                        i,
                        (y0 as isize + dy) as usize..(y1 as isize + dy) as usize,
                        (x0 as isize + dx) as usize..(x1 as isize + dx) as usize
                    ]);
                    dst.scaled_add(k, &src);
                }
            }
        }
    }
    FeatureMap::new(out)
}

fn valid_range(shift: isize, n: usize) -> (usize, usize) {
    let n = n as isize;
    let lo = (-shift).clamp(0, n);
    let hi = (n - shift).clamp(0, n);
    (lo as usize, hi as usize)
}

/// Convolution layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
}

impl Conv2d {
    pub fn new(weight: Array4<f64>, bias: Array1<f64>, dilation: usize) -> Result<Self> {
        if bias.len() != weight.dim().0 {
            return Err(Error::argument("bias length must equal output channels"));
        }
        Ok(Self { weight, bias, dilation })
    }

    /// Identity `k × k` convolution on `channels` channels.
    pub fn identity(channels: usize, k: usize, dilation: usize) -> Self {
        let mut weight = Array4::zeros((channels, channels, k, k));
        for c in 0..channels {
            weight[[c, c, k / 2, k / 2]] = 1.0;
        }
        Self { weight, bias: Array1::zeros(channels), dilation }
    }

    /// Zero kernel with a constant bias.
    pub fn constant(out: usize, inp: usize, k: usize, bias: f64) -> Self {
        Self { weight: Array4::zeros((out, inp, k, k)), bias: Array1::from_elem(out, bias), dilation: 1 }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, bias uniform in `±0.1`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, out: usize, inp: usize, k: usize, dilation: usize) -> Self {
        let bound = 1.0 / ((inp * k * k) as f64).sqrt();
        let weight = Array4::from_shape_simple_fn((out, inp, k, k), || rng.random_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(out, || rng.random_range(-0.1..0.1));
        Self { weight, bias, dilation }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        let mut y = dilated_conv2d(x, &self.weight, self.dilation)?.into_inner();
        for (mut plane, &b) in y.outer_iter_mut().zip(&self.bias) {
            plane += b;
        }
        FeatureMap::new(y)
    }
}

/// Bias that drives the logistic weight head to exactly 1.0 in f64.
const SATURATED_ON: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct InldBlockParams {
    /// Dilated 3×3 convolutions, applied in order.
    pub dilated: Vec<Conv2d>,
    /// 1×1 fusion after the dilated stack.
    pub fuse: Conv2d,
    /// 1×1 head producing `categories + 1` segmentation logits.
    pub seg_head: Conv2d,
    /// 1×1 head producing one weight per input channel.
    pub weight_head: Conv2d,
}

impl InldBlockParams {
    /// Parameters under which the block passes its input through unchanged:
    /// identity trunk, zero segmentation head and a saturated weight head.
    pub fn identity(channels: usize, classes_with_bg: usize, n_dilated: usize) -> Self {
        Self {
            dilated: dilation_schedule(n_dilated)
                .into_iter()
                .map(|d| Conv2d::identity(channels, 3, d))
                .collect(),
            fuse: Conv2d::identity(channels, 1, 1),
            seg_head: Conv2d::constant(classes_with_bg, channels, 1, 0.0),
            weight_head: Conv2d::constant(channels, channels, 1, SATURATED_ON),
        }
    }

    /// Random parameters with the default dilation schedule.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, channels: usize, classes_with_bg: usize, n_dilated: usize) -> Self {
        Self::random_with_dilations(rng, channels, classes_with_bg, &dilation_schedule(n_dilated))
    }

    pub fn random_with_dilations<R: Rng + ?Sized>(
        rng: &mut R,
        channels: usize,
        classes_with_bg: usize,
        dilations: &[usize],
    ) -> Self {
        Self {
            dilated: dilations.iter().map(|&d| Conv2d::random(rng, channels, channels, 3, d)).collect(),
            fuse: Conv2d::random(rng, channels, channels, 1, 1),
            seg_head: Conv2d::random(rng, classes_with_bg, channels, 1, 1),
            weight_head: Conv2d::random(rng, channels, channels, 1, 1),
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        let mut c = channels;
        for conv in self.dilated.iter().chain(std::iter::once(&self.fuse)) {
            if conv.in_channels() != c {
                return Err(Error::argument(format!("layer expects {} channels, got {c}", conv.in_channels())));
            }
            c = conv.out_channels();
        }
        if self.seg_head.in_channels() != c || self.weight_head.in_channels() != c {
            return Err(Error::argument("head input channels do not match the trunk"));
        }
        if self.weight_head.out_channels() != channels {
            return Err(Error::argument("weight head must produce one map per input channel"));
        }
        if self.weight_head.weight.dim().2 != 1 || self.seg_head.weight.dim().2 != 1 || self.fuse.weight.dim().2 != 1 {
            return Err(Error::argument("fusion and heads must be 1x1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InldOutput {
    /// `(categories + 1) × H × W`, trained against a rasterized label map.
    pub seg_logits: FeatureMap,
    /// Logistic weights in `[0, 1]`, same shape as the input.
    pub weights: FeatureMap,
    /// `weights ⊙ input`.
    pub denoised: FeatureMap,
}

fn relu(x: FeatureMap) -> Result<FeatureMap> {
    FeatureMap::new(x.into_inner().mapv_into(|v| v.max(0.0)))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn inld_block_forward(x: &FeatureMap, params: &InldBlockParams) -> Result<InldOutput> {
    params.validate(x.shape().0)?;
    let mut t = x.clone();
    for conv in &params.dilated {
        t = relu(conv.forward(&t)?)?;
    }
    let t = relu(params.fuse.forward(&t)?)?;
    let seg_logits = params.seg_head.forward(&t)?;
    let weights = FeatureMap::new(params.weight_head.forward(&t)?.into_inner().mapv_into(sigmoid))?;
    let denoised = FeatureMap::new(weights.data() * x.data())?;
    Ok(InldOutput { seg_logits, weights, denoised })
}
