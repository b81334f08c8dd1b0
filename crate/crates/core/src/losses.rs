//! Training losses evaluated on given predictions: smooth L1, focal loss,
//! pixel-wise softmax cross-entropy, the IoU-smooth L1 regression loss and
//! the multi-task assembly, plus the angle-sweep landscape used to expose the
//! boundary discontinuity of plain angle regression.
//!
//! Sums are accumulated sequentially in index order, so results are
//! reproducible bit-for-bit for identical inputs.

use std::io::Write;

use crate::anchors::{BoxCodec, RegressionTarget};
use crate::error::{Error, Result};
use crate::geometry::riou;
use crate::inld::{FeatureMap, LabelMap};
use crate::rbox::RBox5;

/// Angle residuals (degrees) are divided by this before entering smooth L1,
/// so a quarter turn weighs like a unit offset in the other coordinates.
pub const ANGLE_SCALE: f64 = 90.0;

/// Lower clamp for the IoU inside `-ln(IoU)`.
pub const IOU_FLOOR: f64 = 1e-6;

/// Probability clamp for the focal loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_reg: f64,
    pub lambda_cls: f64,
    pub lambda_inld: f64,
    pub smooth_l1_beta: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1.0,
            lambda_cls: 1.0,
            lambda_inld: 1.0,
            smooth_l1_beta: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_reg,
            self.lambda_cls,
            self.lambda_inld,
            self.smooth_l1_beta,
            self.focal_alpha,
            self.focal_gamma,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::argument("loss weights must be finite and non-negative"));
        }
        if self.smooth_l1_beta <= 0.0 {
            return Err(Error::argument("smooth L1 beta must be positive"));
        }
        Ok(())
    }
}

/// `0.5 x² / beta` inside `|x| < beta`, `|x| - 0.5 beta` outside.
#[inline]
pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64, beta: f64) -> f64 {
    if x.abs() < beta {
        x / beta
    } else {
        x.signum()
    }
}

/// Binary focal loss on a probability `p` (clamped to `[1e-7, 1 - 1e-7]`).
pub fn focal_loss(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_loss`] with respect to `p`, at the clamped point.
pub fn focal_loss_grad(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if positive {
        let q = 1.0 - p;
        alpha * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p)
    } else {
        let q = 1.0 - p;
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q)
    }
}

fn check_labels(logits: &FeatureMap, labels: &LabelMap) -> Result<()> {
    let (k, h, w) = logits.shape();
    if labels.shape() != (h, w) {
        return Err(Error::argument(format!(
            "label map {:?} does not match logits {h}x{w}",
            labels.shape()
        )));
    }
    if let Some(&bad) = labels.labels().iter().find(|&&l| l as usize >= k) {
        return Err(Error::argument(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Mean over pixels of `-log softmax(logits)[label]`.
pub fn pixelwise_ce(logits: &FeatureMap, labels: &LabelMap) -> Result<f64> {
    check_labels(logits, labels)?;
    let (k, h, w) = logits.shape();
    let x = logits.data();
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let m = (0..k).map(|c| x[[c, i, j]]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (x[[c, i, j]] - m).exp()).sum::<f64>().ln();
            total += lse - x[[labels.get(i, j) as usize, i, j]];
        }
    }
    Ok(total / (h * w) as f64)
}

/// Gradient of [`pixelwise_ce`] with respect to the logits.
pub fn pixelwise_ce_grad(logits: &FeatureMap, labels: &LabelMap) -> Result<FeatureMap> {
    check_labels(logits, labels)?;
    let (k, h, w) = logits.shape();
    let x = logits.data();
    let n = (h * w) as f64;
    let mut g = ndarray::Array3::<f64>::zeros((k, h, w));
    for i in 0..h {
        for j in 0..w {
            let m = (0..k).map(|c| x[[c, i, j]]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|c| (x[[c, i, j]] - m).exp()).sum();
            for c in 0..k {
                g[[c, i, j]] = (x[[c, i, j]] - m).exp() / z / n;
            }
            g[[labels.get(i, j) as usize, i, j]] -= 1.0 / n;
        }
    }
    FeatureMap::new(g)
}

/// Per-coordinate residuals `pred - target`, angle scaled by [`ANGLE_SCALE`].
/// Horizontal targets yield four coordinates.
pub fn regression_residuals(pred: &RegressionTarget, target: &RegressionTarget) -> Vec<f64> {
    let mut r = vec![pred.dx - target.dx, pred.dy - target.dy, pred.dw - target.dw, pred.dh - target.dh];
    if let (Some(a), Some(b)) = (pred.dtheta, target.dtheta) {
        r.push((a - b) / ANGLE_SCALE);
    }
    r
}

/// Smooth-L1 regression loss summed over coordinates, with its gradient
/// with respect to the prediction in `[dx, dy, dw, dh, dtheta]` order.
pub fn smooth_l1_regression(pred: &RegressionTarget, target: &RegressionTarget, beta: f64) -> (f64, [f64; 5]) {
    let r = regression_residuals(pred, target);
    let mut value = 0.0;
    let mut grad = [0.0; 5];
    for (j, &x) in r.iter().enumerate() {
        value += smooth_l1(x, beta);
        grad[j] = smooth_l1_grad(x, beta);
    }
    if r.len() == 5 {
        grad[4] /= ANGLE_SCALE;
    }
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouSmoothL1 {
    /// `|-ln IoU|` with the IoU clamped to `[1e-6, 1]`.
    pub value: f64,
    /// Smooth-L1 direction scaled to the IoU magnitude.
    pub grad: [f64; 5],
    /// Plain smooth-L1 total on the same pair.
    pub smooth_l1: f64,
    /// Unclamped rotated IoU between the decoded boxes.
    pub iou: f64,
}

/// IoU-smooth L1 loss for one rotated regression pair.
///
/// The smooth-L1 gradient supplies the direction and `|-ln IoU|` the
/// magnitude; both `|L|` and `|-ln IoU|` are treated as constants under
/// differentiation. The forward value is `|-ln IoU|`, which stays near zero
/// when the prediction describes the ground-truth rectangle through a
/// different (w, h, theta) parametrization.
pub fn iou_smooth_l1(
    pred: &RegressionTarget,
    target: &RegressionTarget,
    anchor: &RBox5,
    beta: f64,
) -> Result<IouSmoothL1> {
    if pred.dtheta.is_none() || target.dtheta.is_none() {
        return Err(Error::argument("IoU-smooth L1 needs rotated targets"));
    }
    let pred_box = RBox5::decode(pred, anchor)?;
    let gt_box = RBox5::decode(target, anchor)?;
    let iou = riou(&pred_box, &gt_box);
    let magnitude = -iou.clamp(IOU_FLOOR, 1.0).ln();
    let magnitude = magnitude.abs();

    let (l, g) = smooth_l1_regression(pred, target, beta);
    if l == 0.0 {
        if magnitude > 0.0 {
            return Err(Error::DegeneratePair { iou });
        }
        return Ok(IouSmoothL1 { value: 0.0, grad: [0.0; 5], smooth_l1: 0.0, iou });
    }
    let scale = magnitude / l.abs();
    Ok(IouSmoothL1 {
        value: magnitude,
        grad: g.map(|v| v * scale),
        smooth_l1: l,
        iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionMode {
    /// Smooth L1 over (x, y, w, h).
    Horizontal,
    /// IoU-smooth L1 over (x, y, w, h, theta).
    Rotated,
}

/// One anchor's predictions and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSample {
    /// 0 for background, otherwise a 1-based category index.
    pub label: usize,
    /// Objectness probability, used to weight the regression term.
    pub objectness: f64,
    /// Per-category sigmoid probabilities, length = number of categories.
    pub class_probs: Vec<f64>,
    pub pred: RegressionTarget,
    pub target: RegressionTarget,
    /// Needed in rotated mode to decode boxes for the IoU factor.
    pub anchor: Option<RBox5>,
}

impl AnchorSample {
    pub fn is_foreground(&self) -> bool {
        self.label > 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    pub samples: Vec<AnchorSample>,
}

impl SampleBatch {
    pub fn new(samples: Vec<AnchorSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.samples.first().map_or(0, |s| s.class_probs.len());
        for (n, s) in self.samples.iter().enumerate() {
            if s.class_probs.len() != classes {
                return Err(Error::argument(format!("sample {n}: inconsistent class count")));
            }
            if s.label > classes {
                return Err(Error::argument(format!("sample {n}: label {} out of range", s.label)));
            }
            let probs_ok = s.class_probs.iter().chain(std::iter::once(&s.objectness)).all(|p| (0.0..=1.0).contains(p));
            if !probs_ok {
                return Err(Error::argument(format!("sample {n}: probability outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// The three weighted terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultitaskLoss {
    pub regression: f64,
    pub classification: f64,
    pub inld: f64,
    pub total: f64,
}

/// `λ_reg/N Σ fg·p(obj)·Reg + λ_cls/N Σ focal + λ_InLD · mean CE`.
///
/// `Reg` is the smooth-L1 sum in horizontal mode and the IoU-smooth L1 value
/// in rotated mode. The classification term sums the binary focal loss over
/// every category of every anchor.
pub fn multitask_loss(
    batch: &SampleBatch,
    mode: RegressionMode,
    cfg: &LossConfig,
    inld_term: Option<(&FeatureMap, &LabelMap)>,
) -> Result<MultitaskLoss> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch.validate()?;
    let n = batch.len() as f64;

    let mut reg = 0.0;
    let mut cls = 0.0;
    for (i, s) in batch.samples.iter().enumerate() {
        for (c, &p) in s.class_probs.iter().enumerate() {
            cls += focal_loss(p, s.label == c + 1, cfg.focal_alpha, cfg.focal_gamma);
        }
        if !s.is_foreground() {
            continue;
        }
        let term = match mode {
            RegressionMode::Horizontal => smooth_l1_regression(&s.pred, &s.target, cfg.smooth_l1_beta).0,
            RegressionMode::Rotated => {
                let anchor = s
                    .anchor
                    .ok_or_else(|| Error::argument(format!("sample {i}: rotated mode needs an anchor")))?;
                iou_smooth_l1(&s.pred, &s.target, &anchor, cfg.smooth_l1_beta)?.value
            }
        };
        reg += s.objectness * term;
    }

    let regression = cfg.lambda_reg / n * reg;
    let classification = cfg.lambda_cls / n * cls;
    let inld = match inld_term {
        Some((logits, labels)) => cfg.lambda_inld * pixelwise_ce(logits, labels)?,
        None => 0.0,
    };
    Ok(MultitaskLoss {
        regression,
        classification,
        inld,
        total: regression + classification + inld,
    })
}

/// Inclusive angle range swept with a fixed step, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSweep {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl AngleSweep {
    pub fn angles(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::argument("sweep step must be positive"));
        }
        if !(self.start.is_finite() && self.end.is_finite()) || self.end < self.start {
            return Err(Error::argument("sweep range must be finite and non-decreasing"));
        }
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeRow {
    pub theta_pred: f64,
    pub smooth_l1: f64,
    pub iou_smooth: f64,
    pub riou: f64,
}

/// Sweeps the predicted angle with every other parameter at its
/// ground-truth value. The predicted box is canonicalized before encoding,
/// exactly as a detector would represent it, so crossing the `[-90, 0)`
/// boundary shows up as a jump in the plain smooth-L1 column.
pub fn loss_landscape(anchor: &RBox5, gt: &RBox5, sweep: &AngleSweep, beta: f64) -> Result<Vec<LandscapeRow>> {
    let gt = gt.canonical()?;
    let target = gt.encode(anchor)?;
    sweep
        .angles()?
        .into_iter()
        .map(|theta| {
            let pred_box = RBox5::new(gt.cx, gt.cy, gt.w, gt.h, theta)?;
            let pred = pred_box.encode(anchor)?;
            let r = iou_smooth_l1(&pred, &target, anchor, beta)?;
            let (l, _) = smooth_l1_regression(&pred, &target, beta);
            Ok(LandscapeRow { theta_pred: theta, smooth_l1: l, iou_smooth: r.value, riou: r.iou })
        })
        .collect()
}

pub const LANDSCAPE_HEADER: &str = "theta_pred,smooth_l1,iou_smooth,riou";

pub fn write_landscape_csv<W: Write>(rows: &[LandscapeRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LANDSCAPE_HEADER}")?;
    for r in rows {
        writeln!(out, "{:.6},{:.9},{:.9},{:.9}", r.theta_pred, r.smooth_l1, r.iou_smooth, r.riou)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0, 1.0), 0.0);
        assert_eq!(smooth_l1(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1(2.0, 1.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 1.0), 1.5);
        // continuity and C1 at the knee
        let b = 0.7;
        assert!((smooth_l1(b - 1e-12, b) - smooth_l1(b, b)).abs() < 1e-11);
        assert!((smooth_l1_grad(b - 1e-12, b) - smooth_l1_grad(b, b)).abs() < 1e-11);
    }

    #[test]
    fn focal_values() {
        assert!(focal_loss(1.0 - 1e-7, true, 0.25, 2.0) < 1e-12);
        let want = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((focal_loss(0.9, true, 0.25, 2.0) - want).abs() < 1e-15);
        assert!((want - 2.634e-4).abs() < 1e-7);
        let neg = focal_loss(0.1, false, 0.25, 2.0);
        assert!((neg - 0.75 * 0.01 * -(0.9f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn ce_one_hot_and_uniform() {
        let labels = LabelMap::new(Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) % 16) as u32));
        let logits = FeatureMap::new(Array3::from_shape_fn((16, 3, 4), |(c, i, j)| {
            if c == (i + j) % 16 { 100.0 } else { 0.0 }
        }))
        .unwrap();
        assert!(pixelwise_ce(&logits, &labels).unwrap() <= 1e-6);

        let flat = FeatureMap::new(Array3::from_elem((16, 3, 4), 0.3)).unwrap();
        assert!((pixelwise_ce(&flat, &labels).unwrap() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_labels() {
        let logits = FeatureMap::new(Array3::zeros((2, 2, 2))).unwrap();
        let labels = LabelMap::new(Array2::from_elem((2, 2), 2u32));
        assert!(matches!(pixelwise_ce(&logits, &labels), Err(Error::Argument(_))));
        let labels = LabelMap::new(Array2::zeros((3, 2)));
        assert!(pixelwise_ce(&logits, &labels).is_err());
    }

    #[test]
    fn iou_smooth_zero_at_target() {
        let anchor = RBox5::raw(50.0, 50.0, 20.0, 40.0, -45.0);
        let t = RegressionTarget::rotated(0.1, -0.2, 0.3, 0.1, 5.0);
        let r = iou_smooth_l1(&t, &t, &anchor, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad, [0.0; 5]);
    }

    #[test]
    fn iou_smooth_direction_matches_smooth_l1() {
        let anchor = RBox5::raw(50.0, 50.0, 20.0, 40.0, -45.0);
        let gt = RegressionTarget::rotated(0.1, -0.2, 0.3, 0.1, 5.0);
        let pred = RegressionTarget::rotated(0.3, 0.1, -0.2, 0.4, -12.0);
        let r = iou_smooth_l1(&pred, &gt, &anchor, 1.0).unwrap();
        let (_, g) = smooth_l1_regression(&pred, &gt, 1.0);
        let dot: f64 = r.grad.iter().zip(&g).map(|(a, b)| a * b).sum();
        let na = r.grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - 1.0).abs() < 1e-9);
        assert!((r.value + r.iou.ln()).abs() < 1e-12);
    }

    #[test]
    fn iou_smooth_needs_angles() {
        let anchor = RBox5::raw(0.0, 0.0, 1.0, 1.0, -90.0);
        let h = RegressionTarget::horizontal(0.0, 0.0, 0.0, 0.0);
        assert!(iou_smooth_l1(&h, &h, &anchor, 1.0).is_err());
    }

    #[test]
    fn empty_batch() {
        let err = multitask_loss(&SampleBatch::default(), RegressionMode::Horizontal, &LossConfig::default(), None);
        assert!(matches!(err, Err(Error::EmptyBatch)));
    }

    #[test]
    fn background_batch_with_perfect_scores() {
        let s = AnchorSample {
            label: 0,
            objectness: 0.0,
            class_probs: vec![0.0, 0.0],
            pred: RegressionTarget::rotated(1.0, 1.0, 1.0, 1.0, 1.0),
            target: RegressionTarget::default(),
            anchor: None,
        };
        let l = multitask_loss(&SampleBatch::new(vec![s.clone(), s]), RegressionMode::Rotated, &LossConfig::default(), None)
            .unwrap();
        assert!(l.total < 1e-12);
    }

    #[test]
    fn objectness_scales_regression_linearly() {
        let mk = |obj: f64| AnchorSample {
            label: 1,
            objectness: obj,
            class_probs: vec![1.0],
            pred: RegressionTarget::horizontal(0.5, -0.2, 0.1, 0.0),
            target: RegressionTarget::horizontal(0.0, 0.0, 0.0, 0.0),
            anchor: None,
        };
        let cfg = LossConfig::default();
        let full = multitask_loss(&SampleBatch::new(vec![mk(1.0)]), RegressionMode::Horizontal, &cfg, None).unwrap();
        let half = multitask_loss(&SampleBatch::new(vec![mk(0.5)]), RegressionMode::Horizontal, &cfg, None).unwrap();
        assert_eq!(half.regression, full.regression / 2.0);
    }

    #[test]
    fn sweep_rejects_bad_step() {
        let s = AngleSweep { start: 0.0, end: 1.0, step: 0.0 };
        assert!(s.angles().is_err());
        let s = AngleSweep { start: -1.0, end: 1.0, step: 0.5 };
        assert_eq!(s.angles().unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn landscape_far_from_boundary() {
        let anchor = RBox5::raw(0.0, 0.0, 20.0, 40.0, -45.0);
        let gt = RBox5::raw(0.0, 0.0, 20.0, 40.0, -45.0);
        let rows = loss_landscape(&anchor, &gt, &AngleSweep { start: -60.0, end: -30.0, step: 0.5 }, 1.0).unwrap();
        let argmin = |f: fn(&LandscapeRow) -> f64| {
            rows.iter().min_by(|a, b| f(a).total_cmp(&f(b))).unwrap().theta_pred
        };
        assert_eq!(argmin(|r| r.smooth_l1), -45.0);
        assert_eq!(argmin(|r| r.iou_smooth), -45.0);
        for w in rows.windows(2) {
            assert!((w[1].smooth_l1 - w[0].smooth_l1).abs() < 0.01);
            assert!((w[1].riou - w[0].riou).abs() < 0.05);
        }
    }
}
