//! DOTA annotation files, image tiling, cross-tile merging and submission
//! files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{convex_clip, polygon_nms, rnms, ConvexPolygon, Point};
use crate::rbox::{rbox_to_hbox, rbox_to_quad, HBox, Quad, RBox5};

pub const DEFAULT_WINDOW: u32 = 600;
pub const DEFAULT_OVERLAP: u32 = 150;
pub const DEFAULT_OUT_SIZE: u32 = 800;
/// Fraction of a ground-truth box that must remain inside a tile for it to
/// be kept there.
pub const DEFAULT_MIN_VISIBLE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub quad: Quad,
    pub category: String,
    pub difficult: bool,
}

const HEADER_PREFIXES: [&str; 2] = ["imagesource", "gsd"];

/// Parses a DOTA label file: `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`
/// per line. Blank lines and `imagesource:`/`gsd:` headers are skipped.
pub fn parse_dota(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || HEADER_PREFIXES.iter().any(|p| line.starts_with(p)) {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(err(format!("expected 10 fields, found {}", fields.len())));
        }
        let mut c = [0.0; 8];
        for (k, f) in fields[..8].iter().enumerate() {
            c[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad coordinate '{f}'")))?;
        }
        let difficult = match fields[9] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("bad difficult flag '{other}'"))),
        };
        out.push(Annotation {
            quad: Quad::from_coords(c),
            category: fields[8].to_string(),
            difficult,
        });
    }
    Ok(out)
}

/// Reads every `*.txt` label file in `dir`, keyed by file stem (image id).
pub fn read_annotation_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Annotation>>> {
    let mut out = BTreeMap::new();
    for path in txt_files(dir)? {
        let text = fs::read_to_string(&path).map_err(|e| Error::from(e).in_file(&path))?;
        let anns = parse_dota(&text).map_err(|e| e.in_file(&path))?;
        out.insert(file_stem(&path), anns);
    }
    Ok(out)
}

fn txt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// One crop window in image pixels. `scale` maps crop pixels to network
/// input pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tile {
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    pub scale: f64,
}

impl Tile {
    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.origin_x && x < self.origin_x + self.width && y >= self.origin_y && y < self.origin_y + self.height
    }

    /// Image coordinates to tile coordinates.
    pub fn to_tile(&self, p: Point) -> Point {
        Point::new((p.x - self.origin_x as f64) * self.scale, (p.y - self.origin_y as f64) * self.scale)
    }

    /// Tile coordinates to image coordinates.
    pub fn to_image(&self, p: Point) -> Point {
        Point::new(p.x / self.scale + self.origin_x as f64, p.y / self.scale + self.origin_y as f64)
    }

    pub fn bounds(&self) -> HBox {
        HBox {
            xmin: self.origin_x as f64,
            ymin: self.origin_y as f64,
            xmax: (self.origin_x + self.width) as f64,
            ymax: (self.origin_y + self.height) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub window: u32,
    pub overlap: u32,
    pub out_size: u32,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn stride(&self) -> u32 {
        self.window - self.overlap
    }
}

fn axis_origins(len: u32, window: u32, stride: u32) -> Vec<u32> {
    if len <= window {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + window >= len {
            origins.push(len - window);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins.dedup();
    origins
}

/// Sliding-window tiling of a `W × H` image. Windows that would cross the
/// right or bottom edge are shifted back to end at the edge; images smaller
/// than the window give a single tile covering the whole image.
pub fn plan_tiles(image_size: (u32, u32), window: u32, overlap: u32, out_size: u32) -> Result<TilePlan> {
    let (w, h) = image_size;
    if w == 0 || h == 0 {
        return Err(Error::argument("empty image"));
    }
    if window == 0 || out_size == 0 {
        return Err(Error::argument("window and output size must be positive"));
    }
    if overlap >= window {
        return Err(Error::argument(format!("overlap {overlap} must be smaller than window {window}")));
    }
    let stride = window - overlap;
    let scale = out_size as f64 / window as f64;
    let xs = axis_origins(w, window, stride);
    let ys = axis_origins(h, window, stride);
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            tiles.push(Tile {
                origin_x: ox,
                origin_y: oy,
                width: window.min(w - ox),
                height: window.min(h - oy),
                scale,
            });
        }
    }
    Ok(TilePlan { window, overlap, out_size, tiles })
}

/// Image id of a tile: `<stem>__<origin_x>__<origin_y>`.
pub fn tile_image_id(stem: &str, tile: &Tile) -> String {
    format!("{stem}__{}__{}", tile.origin_x, tile.origin_y)
}

/// Splits a tile image id into the source image id and tile origin.
pub fn parse_tile_image_id(id: &str) -> Option<(&str, u32, u32)> {
    let mut parts = id.rsplitn(3, "__");
    let oy = parts.next()?.parse().ok()?;
    let ox = parts.next()?.parse().ok()?;
    let stem = parts.next()?;
    Some((stem, ox, oy))
}

/// Annotations of the image visible in `tile`, in tile coordinates.
///
/// A box is kept when at least `min_visible` of its area lies inside the
/// tile; the kept quad is not clipped.
pub fn crop_annotations(anns: &[Annotation], tile: &Tile, min_visible: f64) -> Vec<Annotation> {
    let window = ConvexPolygon::from(&tile.bounds());
    anns.iter()
        .filter(|a| {
            let Some(poly) = a.quad.to_polygon() else { return false };
            let inside = convex_clip(&poly, &window).map_or(0.0, |p| p.area());
            inside >= min_visible * poly.area()
        })
        .map(|a| Annotation {
            quad: Quad::new(a.quad.vertices.map(|p| tile.to_tile(p))),
            ..a.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetBox {
    Rotated(RBox5),
    Quad(Quad),
}

impl DetBox {
    pub fn to_quad(&self) -> Quad {
        match self {
            DetBox::Rotated(b) => rbox_to_quad(b),
            DetBox::Quad(q) => *q,
        }
    }

    pub fn to_hbox(&self) -> Result<HBox> {
        match self {
            DetBox::Rotated(b) => Ok(rbox_to_hbox(b)),
            DetBox::Quad(q) => q.to_hbox(),
        }
    }

    pub fn to_polygon(&self) -> Option<ConvexPolygon> {
        match self {
            DetBox::Rotated(b) => Some(ConvexPolygon::from(b)),
            DetBox::Quad(q) => q.to_polygon(),
        }
    }

    fn map_points(&self, f: impl Fn(Point) -> Point, extent_scale: f64) -> DetBox {
        match self {
            DetBox::Rotated(b) => {
                let c = f(b.center());
                DetBox::Rotated(RBox5::raw(c.x, c.y, b.w * extent_scale, b.h * extent_scale, b.theta))
            }
            DetBox::Quad(q) => DetBox::Quad(Quad::new(q.vertices.map(f))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub category: String,
    pub score: f64,
    pub bbox: DetBox,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, category: impl Into<String>, score: f64, bbox: DetBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::argument(format!("score {score} outside [0, 1]")));
        }
        let category = category.into();
        if category.is_empty() {
            return Err(Error::argument("empty category"));
        }
        match &bbox {
            DetBox::Rotated(b) => {
                RBox5::new(b.cx, b.cy, b.w, b.h, b.theta)?;
            }
            DetBox::Quad(q) => {
                if q.coords().iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid_box("non-finite quad"));
                }
            }
        }
        Ok(Detection { image_id: image_id.into(), category, score, bbox })
    }
}

/// Maps a detection from tile coordinates back to image coordinates.
pub fn remap_detection(d: &Detection, tile: &Tile) -> Detection {
    Detection {
        bbox: d.bbox.map_points(|p| tile.to_image(p), 1.0 / tile.scale),
        ..d.clone()
    }
}

/// The forward crop transform, image coordinates to tile coordinates.
pub fn crop_detection(d: &Detection, tile: &Tile) -> Detection {
    Detection {
        bbox: d.bbox.map_points(|p| tile.to_tile(p), tile.scale),
        ..d.clone()
    }
}

/// Concatenates per-tile detections (already in image coordinates) and runs
/// NMS per image and category. Output is sorted by descending score, ties by
/// input order.
pub fn merge_detections(per_tile: &[Vec<Detection>], nms_threshold: f64) -> Result<Vec<Detection>> {
    let all: Vec<&Detection> = per_tile.iter().flatten().collect();
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, d) in all.iter().enumerate() {
        groups.entry((d.image_id.as_str(), d.category.as_str())).or_default().push(i);
    }
    let mut kept = Vec::new();
    for idx in groups.values() {
        let scores: Vec<f64> = idx.iter().map(|&i| all[i].score).collect();
        let rotated: Option<Vec<RBox5>> = idx
            .iter()
            .map(|&i| match all[i].bbox {
                DetBox::Rotated(b) => Some(b),
                DetBox::Quad(_) => None,
            })
            .collect();
        let keep = match rotated {
            Some(boxes) => rnms(&boxes, &scores, nms_threshold)?,
            None => {
                let polys = idx
                    .iter()
                    .map(|&i| {
                        all[i]
                            .bbox
                            .to_polygon()
                            .ok_or_else(|| Error::invalid_box("degenerate quad in merge"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                polygon_nms(&polys, &scores, nms_threshold)?
            }
        };
        kept.extend(keep.into_iter().map(|k| idx[k]));
    }
    kept.sort_by(|&a, &b| all[b].score.total_cmp(&all[a].score).then(a.cmp(&b)));
    Ok(kept.into_iter().map(|i| all[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Oriented boxes, `Task1_<category>.txt`.
    Obb,
    /// Horizontal boxes, `Task2_<category>.txt`.
    Hbb,
}

impl Task {
    pub fn file_prefix(&self) -> &'static str {
        match self {
            Task::Obb => "Task1_",
            Task::Hbb => "Task2_",
        }
    }

    pub fn file_name(&self, category: &str) -> String {
        format!("{}{category}.txt", self.file_prefix())
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Obb => "obb",
            Task::Hbb => "hbb",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obb" => Ok(Task::Obb),
            "hbb" => Ok(Task::Hbb),
            _ => Err(Error::argument(format!("unknown task '{s}', expected obb or hbb"))),
        }
    }
}

/// One submission line for `d`, without the trailing newline.
pub fn submission_line(d: &Detection, task: Task) -> Result<String> {
    let coords: Vec<f64> = match task {
        Task::Obb => d.bbox.to_quad().coords().to_vec(),
        Task::Hbb => {
            let h = d.bbox.to_hbox()?;
            vec![h.xmin, h.ymin, h.xmax, h.ymax]
        }
    };
    let mut line = format!("{} {:.6}", d.image_id, d.score);
    for c in coords {
        line.push_str(&format!(" {c:.6}"));
    }
    Ok(line)
}

/// Writes one file per category. Every category in `categories` gets a file
/// even when it has no detections; categories found only in `dets` are
/// written as well. Returns the written paths in category order.
pub fn write_submission(dets: &[Detection], task: Task, categories: &[String], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_cat: BTreeMap<&str, Vec<&Detection>> =
        categories.iter().map(|c| (c.as_str(), Vec::new())).collect();
    for d in dets {
        by_cat.entry(d.category.as_str()).or_default().push(d);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;
    let mut paths = Vec::with_capacity(by_cat.len());
    for (cat, list) in by_cat {
        let mut text = String::new();
        for d in list {
            text.push_str(&submission_line(d, task)?);
            text.push('\n');
        }
        let path = out_dir.join(task.file_name(cat));
        fs::write(&path, text).map_err(|e| Error::from(e).in_file(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parses the contents of one submission file. HBB rectangles come back as
/// axis-aligned quads.
pub fn parse_submission(text: &str, category: &str, task: Task) -> Result<Vec<Detection>> {
    let n_coords = match task {
        Task::Obb => 8,
        Task::Hbb => 4,
    };
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line: idx + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 + n_coords {
            return Err(err(format!("expected {} fields, found {}", 2 + n_coords, fields.len())));
        }
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(format!("bad number '{f}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let quad = match task {
            Task::Obb => Quad::from_coords(nums[1..9].try_into().expect("8 coordinates")),
            Task::Hbb => HBox::new(nums[1], nums[2], nums[3], nums[4]).map_err(|e| err(e.to_string()))?.to_quad(),
        };
        let d = Detection::new(fields[0], category, nums[0], DetBox::Quad(quad)).map_err(|e| err(e.to_string()))?;
        out.push(d);
    }
    Ok(out)
}

/// Reads every `Task1_*.txt` (OBB) or `Task2_*.txt` (HBB) file in `dir`.
pub fn read_submission_dir(dir: &Path, task: Task) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for path in txt_files(dir)? {
        let stem = file_stem(&path);
        let Some(category) = stem.strip_prefix(task.file_prefix()) else { continue };
        let text = fs::read_to_string(&path).map_err(|e| Error::from(e).in_file(&path))?;
        out.extend(parse_submission(&text, category, task).map_err(|e| e.in_file(&path))?);
    }
    Ok(out)
}

/// Sorted set of categories in a set of annotations.
pub fn categories<'a>(anns: impl IntoIterator<Item = &'a Annotation>) -> BTreeSet<String> {
    anns.into_iter().map(|a| a.category.clone()).collect()
}
