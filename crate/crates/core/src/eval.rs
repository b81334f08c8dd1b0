//! VOC-style average precision for oriented (OBB) and horizontal (HBB)
//! detections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::dota::{Annotation, Detection, Task};
use crate::error::{Error, Result};
use crate::geometry::{hiou, polygon_iou, score_order, ConvexPolygon};
use crate::rbox::HBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMetric {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    Voc07,
    /// Area under the interpolated precision/recall curve.
    AllPoint,
}

impl FromStr for ApMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc07" | "voc07_11point" => Ok(ApMetric::Voc07),
            "all_point" | "allpoint" => Ok(ApMetric::AllPoint),
            _ => Err(Error::argument(format!("unknown metric '{s}'"))),
        }
    }
}

impl fmt::Display for ApMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApMetric::Voc07 => "voc07_11point",
            ApMetric::AllPoint => "all_point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub metric: ApMetric,
    pub ignore_difficult: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            metric: ApMetric::Voc07,
            ignore_difficult: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::argument(format!("IoU threshold {} outside (0, 1)", self.iou_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched a difficult ground truth; counts as neither TP nor FP.
    Ignored,
}

/// Greedy matching of detections (already in descending score order) to
/// ground truths.
///
/// `iou(d, g)` is the overlap of detection `d` and ground truth `g`; it
/// should be 0 for pairs from different images. Each detection takes the
/// highest-IoU unmatched ground truth with IoU at or above `threshold`,
/// ties to the lower index. With `ignore_difficult`, difficult ground truths
/// are never matched; a detection that reaches one instead is `Ignored`.
pub fn match_detections<F>(num_dets: usize, difficult: &[bool], iou: F, threshold: f64, ignore_difficult: bool) -> Vec<MatchFlag>
where
    F: Fn(usize, usize) -> f64,
{
    let mut matched = vec![false; difficult.len()];
    let mut flags = Vec::with_capacity(num_dets);
    for d in 0..num_dets {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_difficult = false;
        for (g, &diff) in difficult.iter().enumerate() {
            let v = iou(d, g);
            if v < threshold {
                continue;
            }
            if ignore_difficult && diff {
                hits_difficult = true;
                continue;
            }
            if !matched[g] && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        flags.push(match best {
            Some((g, _)) => {
                matched[g] = true;
                MatchFlag::Tp
            }
            None if hits_difficult => MatchFlag::Ignored,
            None => MatchFlag::Fp,
        });
    }
    flags
}

/// Precision/recall points after each counted detection.
pub fn pr_curve(flags: &[MatchFlag], num_gt: usize) -> Vec<(f64, f64)> {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = Vec::with_capacity(flags.len());
    for f in flags {
        match f {
            MatchFlag::Tp => tp += 1,
            MatchFlag::Fp => fp += 1,
            MatchFlag::Ignored => continue,
        }
        out.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    out
}

/// Average precision of a ranked TP/FP sequence. With no ground truth the
/// AP is 0.
pub fn average_precision(flags: &[MatchFlag], num_gt: usize, metric: ApMetric) -> f64 {
    if num_gt == 0 {
        if flags.iter().any(|f| *f != MatchFlag::Ignored) {
            log::warn!("{} detections but no ground truth; AP set to 0", flags.len());
        }
        return 0.0;
    }
    let pr = pr_curve(flags, num_gt);
    match metric {
        ApMetric::Voc07 => {
            let sum: f64 = (0..=10)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    pr.iter().filter(|(r, _)| *r >= t).map(|(_, p)| *p).fold(0.0, f64::max)
                })
                .sum();
            sum / 11.0
        }
        ApMetric::AllPoint => {
            let mut rec = Vec::with_capacity(pr.len() + 2);
            let mut pre = Vec::with_capacity(pr.len() + 2);
            rec.push(0.0);
            pre.push(0.0);
            for &(r, p) in &pr {
                rec.push(r);
                pre.push(p);
            }
            rec.push(1.0);
            pre.push(0.0);
            for i in (0..pre.len() - 1).rev() {
                pre[i] = pre[i].max(pre[i + 1]);
            }
            (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * pre[i]).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAp {
    pub category: String,
    pub ap: f64,
    pub num_gt: usize,
    pub num_dets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub categories: Vec<CategoryAp>,
    /// Mean AP over categories with at least one counted ground truth.
    pub map: f64,
}

impl MapReport {
    pub const CSV_HEADER: &'static str = "category,num_gt,num_dets,ap";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for c in &self.categories {
            s.push_str(&format!("{},{},{},{:.6}\n", c.category, c.num_gt, c.num_dets, c.ap));
        }
        s.push_str(&format!("mAP,,,{:.6}\n", self.map));
        s
    }
}

impl fmt::Display for MapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.categories.iter().map(|c| c.category.len()).max().unwrap_or(0).max(8);
        writeln!(f, "{:<width$} {:>7} {:>7} {:>8}", "category", "gt", "dets", "AP")?;
        for c in &self.categories {
            writeln!(f, "{:<width$} {:>7} {:>7} {:>8.4}", c.category, c.num_gt, c.num_dets, c.ap)?;
        }
        write!(f, "{:<width$} {:>7} {:>7} {:>8.4}", "mAP", "", "", self.map)
    }
}

enum Shape {
    Poly(Option<ConvexPolygon>),
    Rect(Option<HBox>),
}

fn overlap(a: &Shape, b: &Shape) -> f64 {
    match (a, b) {
        (Shape::Poly(Some(a)), Shape::Poly(Some(b))) => polygon_iou(a, b),
        (Shape::Rect(Some(a)), Shape::Rect(Some(b))) => hiou(a, b),
        _ => 0.0,
    }
}

/// Per-category AP and mAP. `gts` maps image id to its annotations; OBB
/// uses polygon IoU and HBB axis-aligned IoU of the enclosing rectangles.
pub fn map_report(dets: &[Detection], gts: &BTreeMap<String, Vec<Annotation>>, task: Task, cfg: &EvalConfig) -> Result<MapReport> {
    cfg.validate()?;
    let det_shape = |d: &Detection| match task {
        Task::Obb => Shape::Poly(d.bbox.to_polygon()),
        Task::Hbb => Shape::Rect(d.bbox.to_hbox().ok()),
    };
    let gt_shape = |a: &Annotation| match task {
        Task::Obb => Shape::Poly(a.quad.to_polygon()),
        Task::Hbb => Shape::Rect(a.quad.to_hbox().ok()),
    };

    let mut names: BTreeSet<&str> = dets.iter().map(|d| d.category.as_str()).collect();
    names.extend(gts.values().flatten().map(|a| a.category.as_str()));

    let mut categories = Vec::with_capacity(names.len());
    for cat in names {
        let cat_gts: Vec<(&str, &Annotation)> = gts
            .iter()
            .flat_map(|(img, anns)| anns.iter().filter(|a| a.category == cat).map(move |a| (img.as_str(), a)))
            .collect();
        let cat_dets: Vec<&Detection> = dets.iter().filter(|d| d.category == cat).collect();
        let scores: Vec<f64> = cat_dets.iter().map(|d| d.score).collect();
        let order = score_order(&scores);
        let ranked: Vec<&Detection> = order.iter().map(|&i| cat_dets[i]).collect();

        let gt_shapes: Vec<Shape> = cat_gts.iter().map(|(_, a)| gt_shape(a)).collect();
        let det_shapes: Vec<Shape> = ranked.iter().map(|d| det_shape(d)).collect();
        let difficult: Vec<bool> = cat_gts.iter().map(|(_, a)| a.difficult).collect();
        let flags = match_detections(
            ranked.len(),
            &difficult,
            |d, g| {
                if ranked[d].image_id == cat_gts[g].0 {
                    overlap(&det_shapes[d], &gt_shapes[g])
                } else {
                    0.0
                }
            },
            cfg.iou_threshold,
            cfg.ignore_difficult,
        );
        let num_gt = difficult.iter().filter(|&&d| !(d && cfg.ignore_difficult)).count();
        categories.push(CategoryAp {
            category: cat.to_string(),
            ap: average_precision(&flags, num_gt, cfg.metric),
            num_gt,
            num_dets: ranked.len(),
        });
    }
    let counted: Vec<f64> = categories.iter().filter(|c| c.num_gt > 0).map(|c| c.ap).collect();
    let map = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(MapReport { categories, map })
}
