//! Feature-map denoising algebra.
//!
//! Feature maps are `C × H × W` arrays. Instance-level denoising multiplies
//! a hierarchical weight map into the features, where contiguous channel
//! groups belong to individual categories plus a background group; image-level
//! denoising adds a filtered copy of the map back onto itself.

mod block;
mod imld;
pub mod io;
mod mask;

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::{Array1, Array2, Array3, Zip};

use crate::error::{Error, Result};

pub use self::block::{
    dilated_conv2d, dilation_schedule, inld_block_forward, Conv2d, InldBlockParams, InldOutput,
    ABLATION_DILATED_PER_LEVEL, DEFAULT_DILATED_PER_LEVEL,
};
pub use self::imld::{imld_filter, imld_residual, nonlocal_weights_at, ImldFilter};
pub use self::mask::rasterize_masks;

/// `C × H × W` array of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Array3<f64>);

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::argument(format!("feature map shape {c}x{h}x{w} has an empty axis")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::argument("feature map contains non-finite values"));
        }
        Ok(Self(data))
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(Array3::zeros((c, h, w)))
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f64 {
        Zip::from(&self.0)
            .and(&other.0)
            .fold(0.0f64, |m, a, b| m.max((a - b).abs()))
    }
}

/// `H × W` category map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap(Array2<u32>);

impl LabelMap {
    pub fn new(labels: Array2<u32>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.0
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.0[[i, j]]
    }

    /// Distinct non-background labels present.
    pub fn present(&self) -> BTreeSet<usize> {
        self.0.iter().filter(|&&l| l > 0).map(|&l| l as usize).collect()
    }
}

/// Spatial `H × W` and channel `C` weights, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub spatial: Array2<f64>,
    pub channel: Array1<f64>,
}

impl AttentionWeights {
    pub fn new(spatial: Array2<f64>, channel: Array1<f64>) -> Result<Self> {
        if !spatial.iter().chain(channel.iter()).all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::argument("attention weights must lie in [0, 1]"));
        }
        Ok(Self { spatial, channel })
    }
}

/// Assignment of contiguous channel ranges to categories and background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelGroups {
    /// `categories[i]` holds the channels of category `i + 1`.
    categories: Vec<Range<usize>>,
    background: Range<usize>,
    channels: usize,
}

impl ChannelGroups {
    /// Explicit grouping; the ranges must be disjoint and cover `0..channels`.
    pub fn new(categories: Vec<Range<usize>>, background: Range<usize>, channels: usize) -> Result<Self> {
        let mut seen = vec![false; channels];
        for r in categories.iter().chain(std::iter::once(&background)) {
            if r.end > channels || r.start > r.end {
                return Err(Error::argument(format!("channel range {r:?} outside 0..{channels}")));
            }
            for c in r.clone() {
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::argument(format!("channel {c} assigned twice")));
                }
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::argument(format!("channel {c} not assigned")));
        }
        Ok(Self { categories, background, channels })
    }

    /// `channels / (categories + 1)` channels per category, the rest to
    /// background (which is last).
    pub fn equal_split(channels: usize, categories: usize) -> Result<Self> {
        let per = channels / (categories + 1);
        if per == 0 {
            return Err(Error::argument(format!(
                "{channels} channels cannot cover {categories} categories plus background"
            )));
        }
        let cats = (0..categories).map(|i| i * per..(i + 1) * per).collect();
        Self::new(cats, categories * per..channels, channels)
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Channel range of a 1-based category.
    pub fn category(&self, label: usize) -> Option<Range<usize>> {
        label.checked_sub(1).and_then(|i| self.categories.get(i)).cloned()
    }

    pub fn background(&self) -> Range<usize> {
        self.background.clone()
    }
}

/// Hierarchical weight map with its channel grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseWeights {
    data: Array3<f64>,
    groups: ChannelGroups,
}

impl DenoiseWeights {
    pub fn new(data: Array3<f64>, groups: ChannelGroups) -> Result<Self> {
        if data.dim().0 != groups.channels() {
            return Err(Error::argument(format!(
                "weights have {} channels, grouping covers {}",
                data.dim().0,
                groups.channels()
            )));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::argument("denoising weights must lie in [0, 1]"));
        }
        Ok(Self { data, groups })
    }

    /// Per-category spatial masks broadcast over each group's channels:
    /// channel `c` of category `k` gets `masks[k][h, w]`, background gets
    /// `masks[0]`.
    pub fn from_category_masks(masks: &[Array2<f64>], groups: ChannelGroups) -> Result<Self> {
        if masks.len() != groups.num_categories() + 1 {
            return Err(Error::argument("need one mask per category plus background"));
        }
        let (h, w) = masks[0].dim();
        let mut data = Array3::zeros((groups.channels(), h, w));
        for (k, m) in masks.iter().enumerate() {
            if m.dim() != (h, w) {
                return Err(Error::argument("category masks differ in shape"));
            }
            let range = if k == 0 { groups.background() } else { groups.category(k).unwrap_or(0..0) };
            for c in range {
                data.index_axis_mut(ndarray::Axis(0), c).assign(m);
            }
        }
        Self::new(data, groups)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn groups(&self) -> &ChannelGroups {
        &self.groups
    }
}

/// `Y[c,h,w] = spatial[h,w] · X[c,h,w] · channel[c]`.
pub fn attention_reweight(x: &FeatureMap, a: &AttentionWeights) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    if a.spatial.dim() != (h, w) || a.channel.len() != c {
        return Err(Error::argument(format!(
            "attention weights {:?}/{} do not match map {c}x{h}x{w}",
            a.spatial.dim(),
            a.channel.len()
        )));
    }
    let mut y = x.data().clone();
    for (ci, mut plane) in y.outer_iter_mut().enumerate() {
        let wc = a.channel[ci];
        Zip::from(&mut plane).and(&a.spatial).for_each(|v, &s| *v = s * *v * wc);
    }
    FeatureMap::new(y)
}

/// `Y = W ⊙ X`.
pub fn inld_reweight(x: &FeatureMap, weights: &DenoiseWeights) -> Result<FeatureMap> {
    if weights.data().dim() != x.shape() {
        return Err(Error::argument(format!(
            "weights {:?} do not match map {:?}",
            weights.data().dim(),
            x.shape()
        )));
    }
    FeatureMap::new(x.data() * weights.data())
}

/// Mean absolute response of channel groups.
///
/// Group means are `None` when the group has no channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupleReport {
    /// Indexed by category - 1.
    pub per_category: Vec<f64>,
    pub present: Option<f64>,
    pub absent: Option<f64>,
    pub background: Option<f64>,
}

impl DecoupleReport {
    /// Present-category energy over absent-category energy.
    pub fn present_to_absent(&self) -> Option<f64> {
        Some(self.present? / self.absent?)
    }

    /// Present-category energy over background energy.
    pub fn present_to_background(&self) -> Option<f64> {
        Some(self.present? / self.background?)
    }
}

/// Splits `y` into present-category, absent-category and background channel
/// groups and reports the mean absolute response of each.
pub fn decouple_report(y: &FeatureMap, groups: &ChannelGroups, present: &BTreeSet<usize>) -> Result<DecoupleReport> {
    let (c, h, w) = y.shape();
    if c != groups.channels() {
        return Err(Error::argument(format!("map has {c} channels, grouping covers {}", groups.channels())));
    }
    let plane = (h * w) as f64;
    let channel_sum = |ch: usize| y.data().index_axis(ndarray::Axis(0), ch).iter().map(|v| v.abs()).sum::<f64>();

    let mut per_category = Vec::with_capacity(groups.num_categories());
    let (mut pres, mut pres_n, mut abs, mut abs_n) = (0.0, 0usize, 0.0, 0usize);
    for k in 1..=groups.num_categories() {
        let range = groups.category(k).unwrap_or(0..0);
        let n = range.len();
        let s: f64 = range.map(channel_sum).sum();
        per_category.push(if n > 0 { s / (n as f64 * plane) } else { 0.0 });
        if present.contains(&k) {
            pres += s;
            pres_n += n;
        } else {
            abs += s;
            abs_n += n;
        }
    }
    let bg = groups.background();
    let bg_n = bg.len();
    let bg_sum: f64 = bg.map(channel_sum).sum();
    let mean = |s: f64, n: usize| (n > 0).then(|| s / (n as f64 * plane));
    Ok(DecoupleReport {
        per_category,
        present: mean(pres, pres_n),
        absent: mean(abs, abs_n),
        background: mean(bg_sum, bg_n),
    })
}

/// `P(class, object) = P(class | object) · P(object)` per anchor.
///
/// `class_given_object` is `N × I`, `objectness` has length `N`.
pub fn objectness_coproduct(class_given_object: &Array2<f64>, objectness: &Array1<f64>) -> Result<Array2<f64>> {
    if class_given_object.nrows() != objectness.len() {
        return Err(Error::argument(format!(
            "{} class rows but {} objectness scores",
            class_given_object.nrows(),
            objectness.len()
        )));
    }
    if !class_given_object.iter().chain(objectness.iter()).all(|p| (0.0..=1.0).contains(p)) {
        return Err(Error::argument("probabilities must lie in [0, 1]"));
    }
    let mut out = class_given_object.clone();
    for (mut row, &p) in out.outer_iter_mut().zip(objectness) {
        row.mapv_inplace(|v| v * p);
    }
    Ok(out)
}
