use std::fmt;
use std::str::FromStr;

use ndarray::Array3;

use super::FeatureMap;
use crate::error::{Error, Result};

/// Image-level denoising filters.
///
/// Non-local filters weight every spatial position by the similarity of
/// the channel vectors; bilateral filters are the same restricted to the
/// 3×3 neighbourhood. The gaussian variants use a softmax over
/// `x_i·x_j / sqrt(C)`, the dot variants use `x_i·x_j / n` with `n` the number
/// of positions in the support. Mean and median act per channel on the valid
/// part of the 3×3 window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImldFilter {
    None,
    Mean3x3,
    Median3x3,
    NonlocalGaussian,
    NonlocalDot,
    BilateralGaussian,
    BilateralDot,
}

impl ImldFilter {
    pub const ALL: [ImldFilter; 7] = [
        ImldFilter::None,
        ImldFilter::Mean3x3,
        ImldFilter::Median3x3,
        ImldFilter::NonlocalGaussian,
        ImldFilter::NonlocalDot,
        ImldFilter::BilateralGaussian,
        ImldFilter::BilateralDot,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ImldFilter::None => "none",
            ImldFilter::Mean3x3 => "mean3x3",
            ImldFilter::Median3x3 => "median3x3",
            ImldFilter::NonlocalGaussian => "nonlocal_gaussian",
            ImldFilter::NonlocalDot => "nonlocal_dot",
            ImldFilter::BilateralGaussian => "bilateral_gaussian",
            ImldFilter::BilateralDot => "bilateral_dot",
        }
    }

    fn similarity(&self) -> Option<(Similarity, Support)> {
        match self {
            ImldFilter::NonlocalGaussian => Some((Similarity::Softmax, Support::Global)),
            ImldFilter::NonlocalDot => Some((Similarity::Dot, Support::Global)),
            ImldFilter::BilateralGaussian => Some((Similarity::Softmax, Support::Window3)),
            ImldFilter::BilateralDot => Some((Similarity::Dot, Support::Window3)),
            _ => None,
        }
    }
}

impl fmt::Display for ImldFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ImldFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::argument(format!("unknown filter '{s}'")))
    }
}

#[derive(Clone, Copy)]
enum Similarity {
    Softmax,
    Dot,
}

#[derive(Clone, Copy)]
enum Support {
    Global,
    Window3,
}

fn support_positions(support: Support, h: usize, w: usize, i: usize, j: usize) -> Vec<(usize, usize)> {
    match support {
        Support::Global => (0..h).flat_map(|a| (0..w).map(move |b| (a, b))).collect(),
        Support::Window3 => window3(h, w, i, j).collect(),
    }
}

fn window3(h: usize, w: usize, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = i.saturating_sub(1)..(i + 2).min(h);
    rows.flat_map(move |a| (j.saturating_sub(1)..(j + 2).min(w)).map(move |b| (a, b)))
}

/// Aggregation weights of a non-local or bilateral filter at output
/// position `(i, j)`, as `((row, col), weight)` pairs.
pub fn nonlocal_weights_at(x: &FeatureMap, filter: ImldFilter, pos: (usize, usize)) -> Result<Vec<((usize, usize), f64)>> {
    let (sim, support) = filter
        .similarity()
        .ok_or_else(|| Error::argument(format!("{filter} has no similarity weights")))?;
    let (c, h, w) = x.shape();
    if pos.0 >= h || pos.1 >= w {
        return Err(Error::argument("position outside the map"));
    }
    let d = x.data();
    let positions = support_positions(support, h, w, pos.0, pos.1);
    let dot = |(a, b): (usize, usize)| (0..c).map(|k| d[[k, pos.0, pos.1]] * d[[k, a, b]]).sum::<f64>();
    let n = positions.len() as f64;
    let weights: Vec<f64> = match sim {
        Similarity::Dot => positions.iter().map(|&p| dot(p) / n).collect(),
        Similarity::Softmax => {
            let scale = 1.0 / (c as f64).sqrt();
            let logits: Vec<f64> = positions.iter().map(|&p| dot(p) * scale).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        }
    };
    Ok(positions.into_iter().zip(weights).collect())
}

/// The filter response `F(X)`.
pub fn imld_filter(x: &FeatureMap, filter: ImldFilter) -> Result<FeatureMap> {
    let (c, h, w) = x.shape();
    let d = x.data();
    let mut out = Array3::<f64>::zeros((c, h, w));
    match filter {
        ImldFilter::None => {}
        ImldFilter::Mean3x3 | ImldFilter::Median3x3 => {
            let mut buf = Vec::with_capacity(9);
            for k in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        buf.clear();
                        buf.extend(window3(h, w, i, j).map(|(a, b)| d[[k, a, b]]));
                        out[[k, i, j]] = if filter == ImldFilter::Mean3x3 {
                            buf.iter().sum::<f64>() / buf.len() as f64
                        } else {
                            median(&mut buf)
                        };
                    }
                }
            }
        }
        _ => {
            for i in 0..h {
                for j in 0..w {
                    for ((a, b), wt) in nonlocal_weights_at(x, filter, (i, j))? {
                        for k in 0..c {
                            out[[k, i, j]] += wt * d[[k, a, b]];
                        }
                    }
                }
            }
        }
    }
    FeatureMap::new(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `Y = F(X) + X`.
pub fn imld_residual(x: &FeatureMap, filter: ImldFilter) -> Result<FeatureMap> {
    let f = imld_filter(x, filter)?;
    FeatureMap::new(f.into_inner() + x.data())
}
