//! Reference implementations used as test oracles. They are deliberately
//! naive and share no code paths with the library beyond its data types.
#![allow(dead_code)]

use ndarray::{Array2, Array3, Array4};
use obbkit::rbox::RBox5;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rbox<R: Rng>(rng: &mut R, center: (f64, f64), spread: f64, size: (f64, f64)) -> RBox5 {
    RBox5::new(
        center.0 + rng.random_range(-spread..=spread),
        center.1 + rng.random_range(-spread..=spread),
        rng.random_range(size.0..size.1),
        rng.random_range(size.0..size.1),
        rng.random_range(-90.0..0.0),
    )
    .unwrap()
}

/// Rectangle as center, unit axes and half extents, computed directly from
/// the angle in degrees.
struct Rect {
    c: (f64, f64),
    u: (f64, f64),
    v: (f64, f64),
    a: f64,
    b: f64,
}

impl Rect {
    fn new(r: &RBox5) -> Self {
        let t = r.theta.to_radians();
        Rect {
            c: (r.cx, r.cy),
            u: (t.cos(), t.sin()),
            v: (-t.sin(), t.cos()),
            a: r.w / 2.0,
            b: r.h / 2.0,
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let ex = self.a * self.u.0.abs() + self.b * self.v.0.abs();
        let ey = self.a * self.u.1.abs() + self.b * self.v.1.abs();
        (self.c.0 - ex, self.c.1 - ey, self.c.0 + ex, self.c.1 + ey)
    }

    /// x-interval of the horizontal line at `y` inside the rectangle.
    fn row(&self, y: f64) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (axis, half) in [(self.u, self.a), (self.v, self.b)] {
            // |(x - cx) * axis.0 + (y - cy) * axis.1| <= half
            let k = (y - self.c.1) * axis.1;
            if axis.0.abs() < 1e-15 {
                if k.abs() > half {
                    return None;
                }
                continue;
            }
            let x1 = self.c.0 + (-half - k) / axis.0;
            let x2 = self.c.0 + (half - k) / axis.0;
            lo = lo.max(x1.min(x2));
            hi = hi.min(x1.max(x2));
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Number of sample centers `x0 + (j + 0.5) * dx`, `j < n`, inside `[lo, hi]`.
fn count_centers(lo: f64, hi: f64, x0: f64, dx: f64, n: usize) -> usize {
    let first = ((lo - x0) / dx - 0.5).ceil().max(0.0);
    let last = ((hi - x0) / dx - 0.5).floor().min(n as f64 - 1.0);
    if last < first {
        0
    } else {
        (last - first) as usize + 1
    }
}

/// IoU estimated by sampling an `n × n` grid of points over the union of
/// the two boxes' bounding rectangles, one scanline at a time.
pub fn raster_iou(a: &RBox5, b: &RBox5, n: usize) -> f64 {
    let (ra, rb) = (Rect::new(a), Rect::new(b));
    let (ax0, ay0, ax1, ay1) = ra.bounds();
    let (bx0, by0, bx1, by1) = rb.bounds();
    let (x0, y0) = (ax0.min(bx0), ay0.min(by0));
    let (x1, y1) = (ax1.max(bx1), ay1.max(by1));
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut ca, mut cb, mut ci) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let y = y0 + (i as f64 + 0.5) * dy;
        let ia = ra.row(y);
        let ib = rb.row(y);
        if let Some((l, h)) = ia {
            ca += count_centers(l, h, x0, dx, n);
        }
        if let Some((l, h)) = ib {
            cb += count_centers(l, h, x0, dx, n);
        }
        if let (Some((l1, h1)), Some((l2, h2))) = (ia, ib) {
            let (l, h) = (l1.max(l2), h1.min(h2));
            if l <= h {
                ci += count_centers(l, h, x0, dx, n);
            }
        }
    }
    let union = ca + cb - ci;
    if union == 0 {
        0.0
    } else {
        ci as f64 / union as f64
    }
}

/// Classic suppression-flag NMS over a precomputed overlap matrix.
pub fn brute_nms(scores: &[f64], overlap: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| match scores[j].partial_cmp(&scores[i]).unwrap() {
        std::cmp::Ordering::Equal => i.cmp(&j),
        o => o,
    });
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if overlap[i][j] > threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_map<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
}

/// Six nested loops, zero padding, odd square kernel.
pub fn conv_oracle(x: &Array3<f64>, k: &Array4<f64>, bias: Option<&[f64]>, dilation: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (co, _, kk, _) = k.dim();
    let r = (kk / 2) as isize;
    let d = dilation as isize;
    let mut y = Array3::zeros((co, h, w));
    for o in 0..co {
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ci in 0..c {
                    for ky in 0..kk as isize {
                        for kx in 0..kk as isize {
                            let (yy, xx) = (i + (ky - r) * d, j + (kx - r) * d);
                            if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                                acc += k[[o, ci, ky as usize, kx as usize]] * x[[ci, yy as usize, xx as usize]];
                            }
                        }
                    }
                }
                y[[o, i as usize, j as usize]] = acc;
            }
        }
    }
    y
}

fn neighbours(h: usize, w: usize, i: usize, j: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w {
                v.push((a as usize, b as usize));
            }
        }
    }
    v
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OracleFilter {
    Mean,
    Median,
    NonlocalGaussian,
    NonlocalDot,
    BilateralGaussian,
    BilateralDot,
}

/// Similarity weights of position `(i, j)` over its support.
pub fn weights_oracle(x: &Array3<f64>, f: OracleFilter, i: usize, j: usize) -> Vec<((usize, usize), f64)> {
    let (c, h, w) = x.dim();
    let support: Vec<(usize, usize)> = match f {
        OracleFilter::NonlocalGaussian | OracleFilter::NonlocalDot => {
            let mut s = Vec::new();
            for a in 0..h {
                for b in 0..w {
                    s.push((a, b));
                }
            }
            s
        }
        _ => neighbours(h, w, i, j),
    };
    let dots: Vec<f64> = support
        .iter()
        .map(|&(a, b)| {
            let mut s = 0.0;
            for k in 0..c {
                s += x[[k, i, j]] * x[[k, a, b]];
            }
            s
        })
        .collect();
    let ws: Vec<f64> = match f {
        OracleFilter::NonlocalGaussian | OracleFilter::BilateralGaussian => {
            let e: Vec<f64> = dots.iter().map(|d| (d / (c as f64).sqrt()).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        }
        _ => dots.iter().map(|d| d / support.len() as f64).collect(),
    };
    support.into_iter().zip(ws).collect()
}

/// `F(X) + X` by direct loops.
pub fn residual_oracle(x: &Array3<f64>, f: OracleFilter) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = x.clone();
    for i in 0..h {
        for j in 0..w {
            match f {
                OracleFilter::Mean | OracleFilter::Median => {
                    let nb = neighbours(h, w, i, j);
                    for k in 0..c {
                        let mut vals: Vec<f64> = nb.iter().map(|&(a, b)| x[[k, a, b]]).collect();
                        let v = if f == OracleFilter::Mean {
                            vals.iter().sum::<f64>() / vals.len() as f64
                        } else {
                            vals.sort_by(|p, q| p.partial_cmp(q).unwrap());
                            let m = vals.len();
                            if m % 2 == 1 {
                                vals[m / 2]
                            } else {
                                0.5 * (vals[m / 2 - 1] + vals[m / 2])
                            }
                        };
                        y[[k, i, j]] += v;
                    }
                }
                _ => {
                    for ((a, b), wt) in weights_oracle(x, f, i, j) {
                        for k in 0..c {
                            y[[k, i, j]] += wt * x[[k, a, b]];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Point-in-convex-quad test by edge signs (vertices in either winding).
pub fn inside_quad(q: &[(f64, f64); 4], p: (f64, f64)) -> bool {
    let mut pos = false;
    let mut neg = false;
    for k in 0..4 {
        let (a, b) = (q[k], q[(k + 1) % 4]);
        let cr = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        pos |= cr > 0.0;
        neg |= cr < 0.0;
    }
    !(pos && neg)
}

/// Greedy VOC matching written as an exhaustive scan over an explicit IoU
/// matrix. `None` is an ignored detection.
pub fn matching_oracle(iou: &Array2<f64>, difficult: &[bool], thr: f64) -> Vec<Option<bool>> {
    let (nd, ng) = iou.dim();
    let mut taken = vec![false; ng];
    let mut out = Vec::new();
    for d in 0..nd {
        let candidates: Vec<usize> = (0..ng).filter(|&g| !difficult[g] && !taken[g] && iou[[d, g]] >= thr).collect();
        if let Some(&best) = candidates
            .iter()
            .max_by(|&&a, &&b| iou[[d, a]].partial_cmp(&iou[[d, b]]).unwrap().then(b.cmp(&a)))
        {
            taken[best] = true;
            out.push(Some(true));
        } else if (0..ng).any(|g| difficult[g] && iou[[d, g]] >= thr) {
            out.push(None);
        } else {
            out.push(Some(false));
        }
    }
    out
}
