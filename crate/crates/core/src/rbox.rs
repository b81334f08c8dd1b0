//! Box representations and conversions between them.
//!
//! Rotated boxes follow the OpenCV convention: `theta` is the angle in degrees
//! from the x-axis to the side called `w`, and the canonical range is
//! `[-90, 0)`. Any rotated rectangle has exactly one canonical description;
//! the other descriptions of the same point set differ by multiples of 90° in
//! `theta`, with `w` and `h` exchanged at every odd multiple. That many-to-one
//! mapping is what makes naive angle regression discontinuous.

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, ConvexPolygon, Point};

/// Extents below this many pixels are rejected rather than clamped.
pub const MIN_EXTENT: f64 = 1e-6;

/// Canonical angles this close below 0 are folded onto -90 so that
/// axis-aligned rectangles always use the `theta = -90` form.
const AXIS_SNAP_DEG: f64 = 1e-11;

/// Five-parameter rotated box `(cx, cy, w, h, theta)` with `theta` in degrees.
///
/// Constructors canonicalize. The fields are public for cheap access; code
/// that writes them directly is responsible for calling [`RBox5::canonical`]
/// before handing the box to anything that expects the `[-90, 0)` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RBox5 {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RBox5 {
    /// Builds a canonical box from an arbitrary-angle description.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        canonicalize(cx, cy, w, h, theta)
    }

    /// Wraps the fields as given, without validation or canonicalization.
    pub const fn raw(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { cx, cy, w, h, theta }
    }

    pub fn canonical(&self) -> Result<Self> {
        canonicalize(self.cx, self.cy, self.w, self.h, self.theta)
    }

    pub fn is_canonical(&self) -> bool {
        self.theta >= -90.0 && self.theta < 0.0 && validate(self).is_ok()
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Unit vectors along the `w` side and the `h` side.
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.theta.to_radians().sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    pub fn to_quad(&self) -> Quad {
        rbox_to_quad(self)
    }

    pub fn to_hbox(&self) -> HBox {
        rbox_to_hbox(self)
    }

    /// The same point set with `w`/`h` exchanged and `theta` shifted by +90°.
    /// The result is deliberately left non-canonical.
    pub fn swapped(&self) -> Self {
        Self::raw(self.cx, self.cy, self.h, self.w, self.theta + 90.0)
    }
}

/// Four-vertex quadrilateral, DOTA's native annotation form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub vertices: [Point; 4],
}

impl Quad {
    pub fn new(vertices: [Point; 4]) -> Self {
        Self { vertices }
    }

    pub fn from_coords(c: [f64; 8]) -> Self {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    pub fn coords(&self) -> [f64; 8] {
        let v = &self.vertices;
        [v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y]
    }

    /// Shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        crate::geometry::signed_area(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Same quad in counter-clockwise order, starting from the same vertex.
    pub fn canonical_order(&self) -> Self {
        if self.signed_area() < 0.0 {
            let v = self.vertices;
            Self::new([v[0], v[3], v[2], v[1]])
        } else {
            *self
        }
    }

    /// True when no two non-adjacent edges cross.
    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        !(segments_intersect(v[0], v[1], v[2], v[3]) || segments_intersect(v[1], v[2], v[3], v[0]))
    }

    pub fn to_hbox(&self) -> Result<HBox> {
        HBox::enclosing(&self.vertices)
    }

    /// Convex hull of the vertices; `None` for a zero-area quad.
    pub fn to_polygon(&self) -> Option<ConvexPolygon> {
        ConvexPolygon::hull_of(&self.vertices)
    }

    pub fn centroid(&self) -> Point {
        let v = &self.vertices;
        Point::new(
            (v[0].x + v[1].x + v[2].x + v[3].x) / 4.0,
            (v[0].y + v[1].y + v[2].y + v[3].y) / 4.0,
        )
    }

    /// Point-in-polygon by crossing number; points on the boundary may go
    /// either way.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = 3;
        for i in 0..4 {
            let (a, b) = (v[i], v[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = (q2 - q1).cross(p1 - q1);
    let d2 = (q2 - q1).cross(p2 - q1);
    let d3 = (p2 - p1).cross(q1 - p1);
    let d4 = (p2 - p1).cross(q2 - p1);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0
}

/// Axis-aligned box `(xmin, ymin, xmax, ymax)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl HBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = Self { xmin, ymin, xmax, ymax };
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_box(format!("non-finite horizontal box {b:?}")));
        }
        if !(xmax - xmin >= MIN_EXTENT && ymax - ymin >= MIN_EXTENT) {
            return Err(Error::invalid_box(format!("empty horizontal box {b:?}")));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn enclosing(points: &[Point]) -> Result<Self> {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            xmin = xmin.min(p.x);
            ymin = ymin.min(p.y);
            xmax = xmax.max(p.x);
            ymax = ymax.max(p.y);
        }
        Self::new(xmin, ymin, xmax, ymax)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Rotated form with `theta = -90`, where `w` is the vertical extent.
    pub fn to_rbox(&self) -> RBox5 {
        let c = self.center();
        RBox5::raw(c.x, c.y, self.height(), self.width(), -90.0)
    }

    pub fn to_quad(&self) -> Quad {
        Quad::new([
            Point::new(self.xmin, self.ymin),
            Point::new(self.xmax, self.ymin),
            Point::new(self.xmax, self.ymax),
            Point::new(self.xmin, self.ymax),
        ])
    }
}

fn validate(b: &RBox5) -> Result<()> {
    if ![b.cx, b.cy, b.w, b.h, b.theta].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid_box(format!("non-finite field in {b:?}")));
    }
    if !(b.w >= MIN_EXTENT && b.h >= MIN_EXTENT) {
        return Err(Error::invalid_box(format!("extent below {MIN_EXTENT} px in {b:?}")));
    }
    Ok(())
}

/// Normal form of a rotated box: `theta` reduced into `[-90, 0)`, with `w`
/// and `h` exchanged once per 90° shift.
pub fn canonicalize(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<RBox5> {
    let raw = RBox5::raw(cx, cy, w, h, theta);
    validate(&raw)?;
    if (-90.0..0.0).contains(&theta) && theta < -AXIS_SNAP_DEG {
        return Ok(raw);
    }
    let mut turns = (theta / 90.0).floor() + 1.0;
    let mut t = theta - 90.0 * turns;
    // floor() on a rounded quotient can land one step off
    if t >= 0.0 {
        t -= 90.0;
        turns += 1.0;
    } else if t < -90.0 {
        t += 90.0;
        turns -= 1.0;
    }
    if t >= -AXIS_SNAP_DEG {
        t = -90.0;
        turns += 1.0;
    }
    let odd = turns.rem_euclid(2.0) == 1.0;
    let (w, h) = if odd { (h, w) } else { (w, h) };
    Ok(RBox5::raw(cx, cy, w, h, t))
}

/// Corners in counter-clockwise order (in a y-up frame).
pub fn rbox_to_quad(b: &RBox5) -> Quad {
    let (u, v) = b.axes();
    let c = b.center();
    let a = u * (b.w / 2.0);
    let d = v * (b.h / 2.0);
    Quad::new([c - a - d, c + a - d, c + a + d, c - a + d])
}

/// Minimum-area enclosing rotated rectangle of the quad's convex hull.
///
/// Every hull edge is tried as the direction of `w`; the optimal rectangle
/// always has a side collinear with some hull edge. Ties in area prefer the
/// candidate whose canonical angle has the smallest magnitude.
pub fn quad_to_rbox(q: &Quad) -> Result<RBox5> {
    min_area_rect(&q.vertices)
}

/// See [`quad_to_rbox`]; accepts any point set.
pub fn min_area_rect(points: &[Point]) -> Result<RBox5> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::invalid_box("non-finite vertex"));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::invalid_box("degenerate polygon: zero area"));
    }

    let mut best: Option<(f64, RBox5)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let phi = edge.y.atan2(edge.x);
        let (s, c) = phi.sin_cos();
        let u = Point::new(c, s);
        let v = Point::new(-s, c);

        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &hull {
            let a = p.dot(u);
            let b = p.dot(v);
            amin = amin.min(a);
            amax = amax.max(a);
            bmin = bmin.min(b);
            bmax = bmax.max(b);
        }
        let (w, h) = (amax - amin, bmax - bmin);
        let area = w * h;
        let center = u * ((amin + amax) / 2.0) + v * ((bmin + bmax) / 2.0);
        let cand = match canonicalize(center.x, center.y, w, h, phi.to_degrees()) {
            Ok(b) => b,
            Err(_) => continue,
        };

        let better = match &best {
            None => true,
            Some((best_area, best_box)) => {
                let tol = 1e-9 * best_area.max(area);
                area < best_area - tol
                    || (area <= best_area + tol && cand.theta.abs() < best_box.theta.abs())
            }
        };
        if better {
            best = Some((area, cand));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::invalid_box("degenerate polygon: zero area"))
}

pub fn rbox_to_hbox(b: &RBox5) -> HBox {
    let (u, v) = b.axes();
    let ex = (u.x * b.w).abs() / 2.0 + (v.x * b.h).abs() / 2.0;
    let ey = (u.y * b.w).abs() / 2.0 + (v.y * b.h).abs() / 2.0;
    HBox {
        xmin: b.cx - ex,
        ymin: b.cy - ey,
        xmax: b.cx + ex,
        ymax: b.cy + ey,
    }
}
