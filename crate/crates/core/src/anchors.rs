//! Multi-level anchor generation, the box regression codec, and IoU-based
//! anchor assignment.

use crate::error::{Error, Result};
use crate::geometry::{hiou, PreparedRBox};
use crate::rbox::{HBox, RBox5};

/// Decoded extents beyond this many pixels are treated as overflow.
pub const MAX_DECODED_EXTENT: f64 = 1e6;

/// One pyramid level: feature stride and the anchor area at scale 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorLevel {
    /// Pyramid index, e.g. 3 for P3. Only used for labelling.
    pub pyramid: u32,
    pub stride: f64,
    pub base_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub levels: Vec<AnchorLevel>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
    pub scales: Vec<f64>,
    /// Degrees; crossed with every shape in rotated mode, ignored otherwise.
    pub angles: Option<Vec<f64>>,
}

impl Default for AnchorSpec {
    /// RetinaNet configuration on P3–P7: areas 32² to 512², seven aspect
    /// ratios, three octave scales and six angles from -90° to -15°.
    fn default() -> Self {
        let levels = (3..=7)
            .map(|p| {
                let stride = f64::from(1u32 << p);
                let side = 4.0 * stride;
                AnchorLevel { pyramid: p, stride, base_area: side * side }
            })
            .collect();
        Self {
            levels,
            aspect_ratios: vec![1.0, 0.5, 2.0, 1.0 / 3.0, 3.0, 5.0, 0.2],
            scales: vec![1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            angles: Some(default_angles()),
        }
    }
}

/// -90, -75, ..., -15.
pub fn default_angles() -> Vec<f64> {
    (0..6).map(|i| -90.0 + 15.0 * f64::from(i)).collect()
}

impl AnchorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::argument("no pyramid levels"));
        }
        if self.aspect_ratios.is_empty() {
            return Err(Error::argument("empty aspect ratio list"));
        }
        if self.scales.is_empty() {
            return Err(Error::argument("empty scale list"));
        }
        for w in self.levels.windows(2) {
            if w[1].stride <= w[0].stride {
                return Err(Error::argument("strides must be strictly increasing"));
            }
        }
        if self.levels.iter().any(|l| !(l.stride > 0.0 && l.base_area > 0.0)) {
            return Err(Error::argument("strides and base areas must be positive"));
        }
        if self.aspect_ratios.iter().chain(&self.scales).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::argument("ratios and scales must be positive"));
        }
        if let Some(angles) = &self.angles {
            if angles.iter().any(|a| !(-90.0..0.0).contains(a)) {
                return Err(Error::argument("anchor angles must lie in [-90, 0)"));
            }
        }
        Ok(())
    }

    /// Anchors per feature-map location.
    pub fn per_location(&self, mode: AnchorMode) -> usize {
        let base = self.aspect_ratios.len() * self.scales.len();
        match mode {
            AnchorMode::Horizontal => base,
            AnchorMode::Rotated => base * self.angles.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn grid_size(level: &AnchorLevel, image_size: (u32, u32)) -> (usize, usize) {
        let gx = (f64::from(image_size.0) / level.stride).ceil() as usize;
        let gy = (f64::from(image_size.1) / level.stride).ceil() as usize;
        (gx, gy)
    }

    pub fn anchor_count(&self, image_size: (u32, u32), mode: AnchorMode) -> usize {
        let cells: usize = self
            .levels
            .iter()
            .map(|l| {
                let (gx, gy) = Self::grid_size(l, image_size);
                gx * gy
            })
            .sum();
        cells * self.per_location(mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMode {
    Horizontal,
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorShape {
    Horizontal(HBox),
    Rotated(RBox5),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub level: u32,
    pub shape: AnchorShape,
}

impl Anchor {
    /// Rotated form; horizontal anchors map to `theta = -90`.
    pub fn to_rbox(&self) -> RBox5 {
        match self.shape {
            AnchorShape::Horizontal(h) => h.to_rbox(),
            AnchorShape::Rotated(r) => r,
        }
    }
}

/// `(w, h)` with `w * h = base_area * scale²` and `w / h = ratio`.
pub fn anchor_extent(base_area: f64, ratio: f64, scale: f64) -> (f64, f64) {
    let h = (base_area * scale * scale / ratio).sqrt();
    (ratio * h, h)
}

/// Anchors for every level, ordered by level, row, column, ratio, scale and
/// angle. Grids are `ceil(size / stride)` cells with centers at half-stride
/// offsets.
pub fn generate_anchors(spec: &AnchorSpec, image_size: (u32, u32), mode: AnchorMode) -> Result<Vec<Anchor>> {
    spec.validate()?;
    if image_size.0 == 0 || image_size.1 == 0 {
        return Err(Error::argument("image dimensions must be positive"));
    }
    let angles: &[f64] = match (mode, &spec.angles) {
        (AnchorMode::Rotated, Some(a)) if !a.is_empty() => a,
        (AnchorMode::Rotated, _) => return Err(Error::argument("rotated mode needs anchor angles")),
        (AnchorMode::Horizontal, _) => &[],
    };

    let mut out = Vec::with_capacity(spec.anchor_count(image_size, mode));
    for level in &spec.levels {
        let shapes: Vec<(f64, f64)> = spec
            .aspect_ratios
            .iter()
            .flat_map(|&r| spec.scales.iter().map(move |&s| anchor_extent(level.base_area, r, s)))
            .collect();
        let (gx, gy) = AnchorSpec::grid_size(level, image_size);
        for j in 0..gy {
            let cy = (j as f64 + 0.5) * level.stride;
            for i in 0..gx {
                let cx = (i as f64 + 0.5) * level.stride;
                for &(w, h) in &shapes {
                    match mode {
                        AnchorMode::Horizontal => out.push(Anchor {
                            level: level.pyramid,
                            shape: AnchorShape::Horizontal(HBox::from_center(cx, cy, w, h)?),
                        }),
                        AnchorMode::Rotated => {
                            for &theta in angles {
                                out.push(Anchor {
                                    level: level.pyramid,
                                    shape: AnchorShape::Rotated(RBox5::raw(cx, cy, w, h, theta)),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Offsets between a box and its anchor.
///
/// `dx`, `dy` are center offsets in anchor widths/heights, `dw`, `dh` are log
/// extent ratios, and `dtheta` is the raw angle difference in degrees
/// (rotated boxes only). The angle difference is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionTarget {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: Option<f64>,
}

impl RegressionTarget {
    pub fn rotated(dx: f64, dy: f64, dw: f64, dh: f64, dtheta: f64) -> Self {
        Self { dx, dy, dw, dh, dtheta: Some(dtheta) }
    }

    pub fn horizontal(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh, dtheta: None }
    }

    /// `[dx, dy, dw, dh, dtheta]`, with 0 for a missing angle.
    pub fn to_array(&self) -> [f64; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta.unwrap_or(0.0)]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Encode/decode between a box type and regression targets.
pub trait BoxCodec: Sized {
    fn encode(&self, anchor: &Self) -> Result<RegressionTarget>;
    fn decode(target: &RegressionTarget, anchor: &Self) -> Result<Self>;
}

fn check_anchor(w: f64, h: f64) -> Result<()> {
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err(Error::invalid_box(format!("anchor extent ({w}, {h}) must be positive")));
    }
    Ok(())
}

fn decoded_extent(anchor_extent: f64, log_ratio: f64) -> Result<f64> {
    let extent = anchor_extent * log_ratio.exp();
    if !(extent.is_finite() && extent <= MAX_DECODED_EXTENT) {
        return Err(Error::DecodeOverflow { extent });
    }
    Ok(extent)
}

impl BoxCodec for RBox5 {
    fn encode(&self, anchor: &RBox5) -> Result<RegressionTarget> {
        check_anchor(anchor.w, anchor.h)?;
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::invalid_box(format!("non-positive extent in {self:?}")));
        }
        Ok(RegressionTarget::rotated(
            (self.cx - anchor.cx) / anchor.w,
            (self.cy - anchor.cy) / anchor.h,
            (self.w / anchor.w).ln(),
            (self.h / anchor.h).ln(),
            self.theta - anchor.theta,
        ))
    }

    /// The decoded box is canonicalized.
    fn decode(t: &RegressionTarget, anchor: &RBox5) -> Result<RBox5> {
        check_anchor(anchor.w, anchor.h)?;
        if !t.is_finite() {
            return Err(Error::argument("non-finite regression target"));
        }
        let dtheta = t.dtheta.ok_or_else(|| Error::argument("rotated decode needs an angle offset"))?;
        RBox5::new(
            t.dx * anchor.w + anchor.cx,
            t.dy * anchor.h + anchor.cy,
            decoded_extent(anchor.w, t.dw)?,
            decoded_extent(anchor.h, t.dh)?,
            dtheta + anchor.theta,
        )
    }
}

impl BoxCodec for HBox {
    fn encode(&self, anchor: &HBox) -> Result<RegressionTarget> {
        check_anchor(anchor.width(), anchor.height())?;
        if !(self.width() > 0.0 && self.height() > 0.0) {
            return Err(Error::invalid_box(format!("non-positive extent in {self:?}")));
        }
        let (c, ca) = (self.center(), anchor.center());
        Ok(RegressionTarget::horizontal(
            (c.x - ca.x) / anchor.width(),
            (c.y - ca.y) / anchor.height(),
            (self.width() / anchor.width()).ln(),
            (self.height() / anchor.height()).ln(),
        ))
    }

    fn decode(t: &RegressionTarget, anchor: &HBox) -> Result<HBox> {
        check_anchor(anchor.width(), anchor.height())?;
        if !t.is_finite() {
            return Err(Error::argument("non-finite regression target"));
        }
        let ca = anchor.center();
        HBox::from_center(
            t.dx * anchor.width() + ca.x,
            t.dy * anchor.height() + ca.y,
            decoded_extent(anchor.width(), t.dw)?,
            decoded_extent(anchor.height(), t.dh)?,
        )
    }
}

pub fn encode<B: BoxCodec>(gt: &B, anchor: &B) -> Result<RegressionTarget> {
    gt.encode(anchor)
}

pub fn decode<B: BoxCodec>(target: &RegressionTarget, anchor: &B) -> Result<B> {
    B::decode(target, anchor)
}

/// IoU thresholds for labelling anchors against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignConfig {
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self { positive_iou: 0.5, negative_iou: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignore,
}

/// Labels each anchor by its best-overlapping ground truth. Ties go to the
/// lower ground-truth index.
pub fn assign_by<F>(num_anchors: usize, num_gts: usize, cfg: &AssignConfig, iou: F) -> Vec<Assignment>
where
    F: Fn(usize, usize) -> f64,
{
    (0..num_anchors)
        .map(|a| {
            let mut best = (0.0, None);
            for g in 0..num_gts {
                let v = iou(a, g);
                if best.1.is_none() || v > best.0 {
                    best = (v, Some(g));
                }
            }
            match best {
                (v, Some(g)) if v >= cfg.positive_iou => Assignment::Positive(g),
                (v, _) if v < cfg.negative_iou => Assignment::Negative,
                _ => Assignment::Ignore,
            }
        })
        .collect()
}

pub fn assign_rotated(anchors: &[RBox5], gts: &[RBox5], cfg: &AssignConfig) -> Vec<Assignment> {
    let a: Vec<PreparedRBox> = anchors.iter().map(PreparedRBox::new).collect();
    let g: Vec<PreparedRBox> = gts.iter().map(PreparedRBox::new).collect();
    assign_by(a.len(), g.len(), cfg, |i, j| a[i].iou(&g[j]))
}

pub fn assign_horizontal(anchors: &[HBox], gts: &[HBox], cfg: &AssignConfig) -> Vec<Assignment> {
    assign_by(anchors.len(), gts.len(), cfg, |i, j| hiou(&anchors[i], &gts[j]))
}
