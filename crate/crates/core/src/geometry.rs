//! Planar primitives, convex clipping, overlap ratios and greedy NMS.

use std::cmp::Ordering;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::rbox::{HBox, RBox5};

/// On-edge tolerance for vertex classification and vertex deduplication, in pixels.
pub const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    #[inline]
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

impl Neg for Point {
    type Output = Point;
    #[inline]
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

/// Shoelace formula; positive for counter-clockwise order.
pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += vertices[i].cross(vertices[(i + 1) % n]);
    }
    acc / 2.0
}

/// Andrew's monotone chain. Counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    /// Wraps vertices already known to be convex and counter-clockwise.
    pub fn from_ccw(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    /// Convex hull of arbitrary points, or `None` when it has no area.
    pub fn hull_of(points: &[Point]) -> Option<Self> {
        let hull = convex_hull(points);
        (hull.len() >= 3).then_some(Self { vertices: hull })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }
}

impl From<&RBox5> for ConvexPolygon {
    fn from(b: &RBox5) -> Self {
        Self::from_ccw(b.to_quad().vertices.to_vec())
    }
}

impl From<&HBox> for ConvexPolygon {
    fn from(b: &HBox) -> Self {
        Self::from_ccw(b.to_quad().vertices.to_vec())
    }
}

pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    signed_area(&p.vertices).abs()
}

/// Sutherland–Hodgman clipping of `subject` against each edge of `clip`.
///
/// Both inputs must be counter-clockwise; `clip` must be convex. Returns
/// `None` when the intersection has fewer than three distinct vertices.
pub fn convex_clip(subject: &ConvexPolygon, clip: &ConvexPolygon) -> Option<ConvexPolygon> {
    let mut out: Vec<Point> = subject.vertices.clone();
    let mut input: Vec<Point> = Vec::with_capacity(out.len() + 4);
    let c = &clip.vertices;
    for i in 0..c.len() {
        if out.is_empty() {
            break;
        }
        std::mem::swap(&mut out, &mut input);
        out.clear();

        let a = c[i];
        let edge = c[(i + 1) % c.len()] - a;
        let len = edge.norm();
        if len == 0.0 {
            out.extend_from_slice(&input);
            continue;
        }
        let dist = |p: Point| edge.cross(p - a) / len;

        let mut prev = input[input.len() - 1];
        let mut d_prev = dist(prev);
        for &cur in &input {
            let d_cur = dist(cur);
            let cur_in = d_cur >= -CLIP_EPS;
            let prev_in = d_prev >= -CLIP_EPS;
            if cur_in {
                if !prev_in {
                    out.push(crossing(prev, cur, d_prev, d_cur));
                }
                out.push(cur);
            } else if prev_in {
                out.push(crossing(prev, cur, d_prev, d_cur));
            }
            prev = cur;
            d_prev = d_cur;
        }
    }

    let mut verts: Vec<Point> = Vec::with_capacity(out.len());
    for p in out {
        if verts.last().is_none_or(|q: &Point| q.dist(p) > CLIP_EPS) {
            verts.push(p);
        }
    }
    while verts.len() > 1 && verts[0].dist(verts[verts.len() - 1]) <= CLIP_EPS {
        verts.pop();
    }
    if verts.len() < 3 {
        return None;
    }
    Some(ConvexPolygon::from_ccw(verts))
}

#[inline]
fn crossing(p: Point, q: Point, dp: f64, dq: f64) -> Point {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Intersection-over-union of two convex polygons.
pub fn polygon_iou(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    let inter = convex_clip(a, b).map_or(0.0, |p| p.area());
    ratio(inter, a.area(), b.area())
}

#[inline]
fn ratio(inter: f64, area_a: f64, area_b: f64) -> f64 {
    if inter <= 0.0 {
        return 0.0;
    }
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// A rotated box with its corners, bounds and area computed once.
#[derive(Debug, Clone)]
pub struct PreparedRBox {
    rbox: RBox5,
    poly: ConvexPolygon,
    bounds: HBox,
    area: f64,
}

impl PreparedRBox {
    pub fn new(rbox: &RBox5) -> Self {
        Self {
            rbox: *rbox,
            poly: ConvexPolygon::from(rbox),
            bounds: rbox.to_hbox(),
            area: rbox.area(),
        }
    }

    pub fn rbox(&self) -> &RBox5 {
        &self.rbox
    }

    /// Rotated IoU. The argument order is normalized internally so the
    /// result is bitwise symmetric.
    pub fn iou(&self, other: &PreparedRBox) -> f64 {
        if self.rbox == other.rbox {
            return 1.0;
        }
        if !bounds_overlap(&self.bounds, &other.bounds) {
            return 0.0;
        }
        let (a, b) = if field_order(&self.rbox, &other.rbox) == Ordering::Greater {
            (other, self)
        } else {
            (self, other)
        };
        let inter = convex_clip(&a.poly, &b.poly).map_or(0.0, |p| p.area());
        ratio(inter, a.area, b.area)
    }
}

fn field_order(a: &RBox5, b: &RBox5) -> Ordering {
    a.cx.total_cmp(&b.cx)
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then(a.theta.total_cmp(&b.theta))
}

#[inline]
fn bounds_overlap(a: &HBox, b: &HBox) -> bool {
    a.xmin < b.xmax && b.xmin < a.xmax && a.ymin < b.ymax && b.ymin < a.ymax
}

/// Rotated IoU `|A∩B| / (|A| + |B| − |A∩B|)`.
pub fn riou(a: &RBox5, b: &RBox5) -> f64 {
    PreparedRBox::new(a).iou(&PreparedRBox::new(b))
}

/// Axis-aligned IoU.
pub fn hiou(a: &HBox, b: &HBox) -> f64 {
    let iw = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let ih = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    ratio(iw * ih, a.area(), b.area())
}

/// Indices sorted by descending score, ties by ascending index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order
}

/// Greedy NMS over an arbitrary pairwise overlap function.
///
/// A candidate is kept when its overlap with every previously kept index is
/// at most `threshold`. Returned indices are in descending-score order.
pub fn nms_by<F>(scores: &[f64], threshold: f64, overlap: F) -> Result<Vec<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::argument(format!("score {i} is not finite")));
    }
    let mut keep: Vec<usize> = Vec::new();
    for i in score_order(scores) {
        if keep.iter().all(|&k| overlap(k, i) <= threshold) {
            keep.push(i);
        }
    }
    Ok(keep)
}

fn check_lengths(boxes: usize, scores: usize) -> Result<()> {
    if boxes != scores {
        return Err(Error::argument(format!(
            "{boxes} boxes but {scores} scores"
        )));
    }
    Ok(())
}

/// Rotated NMS.
pub fn rnms(boxes: &[RBox5], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    check_lengths(boxes.len(), scores.len())?;
    let prepared: Vec<PreparedRBox> = boxes.iter().map(PreparedRBox::new).collect();
    nms_by(scores, iou_threshold, |i, j| prepared[i].iou(&prepared[j]))
}

/// Horizontal NMS.
pub fn hnms(boxes: &[HBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    check_lengths(boxes.len(), scores.len())?;
    nms_by(scores, iou_threshold, |i, j| hiou(&boxes[i], &boxes[j]))
}

/// NMS over convex polygons (e.g. quadrilateral detections).
pub fn polygon_nms(polys: &[ConvexPolygon], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    check_lengths(polys.len(), scores.len())?;
    nms_by(scores, iou_threshold, |i, j| polygon_iou(&polys[i], &polys[j]))
}
