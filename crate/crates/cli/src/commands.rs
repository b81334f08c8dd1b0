use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use ndarray::{Array2, Array3};
use obbkit::anchors::{generate_anchors, AnchorMode, AnchorSpec};
use obbkit::dota::{
    crop_annotations, merge_detections, parse_dota, parse_tile_image_id, plan_tiles, read_annotation_dir,
    read_submission_dir, remap_detection, tile_image_id, write_submission, Task, Tile, DEFAULT_MIN_VISIBLE,
    DEFAULT_OUT_SIZE, DEFAULT_OVERLAP, DEFAULT_WINDOW,
};
use obbkit::eval::{map_report, ApMetric, EvalConfig};
use obbkit::geometry::{hiou, hnms, riou, rnms};
use obbkit::inld::io::{read_feature_map, write_feature_map};
use obbkit::inld::{
    decouple_report, imld_residual, inld_block_forward, inld_reweight, rasterize_masks, ChannelGroups, DecoupleReport,
    DenoiseWeights, FeatureMap, ImldFilter, InldBlockParams,
};
use obbkit::losses::{loss_landscape as landscape_rows, pixelwise_ce, write_landscape_csv, AngleSweep};
use obbkit::rbox::{rbox_to_hbox, HBox, RBox5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parses `cx,cy,w,h,theta` into a canonical box.
pub fn parse_rbox(s: &str) -> Result<RBox5, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|_| format!("bad number '{}'", f.trim())))
        .collect::<Result<_, _>>()?;
    let [cx, cy, w, h, theta] = v[..] else {
        return Err(format!("expected cx,cy,w,h,theta, got {} values", v.len()));
    };
    RBox5::new(cx, cy, w, h, theta).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Obb,
    Hbb,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Obb => Task::Obb,
            TaskArg::Hbb => Task::Hbb,
        }
    }
}

fn default_nms_thresh(task: Task) -> f64 {
    match task {
        Task::Obb => 0.3,
        Task::Hbb => 0.5,
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Debug, Args)]
pub struct IouArgs {
    /// First box as cx,cy,w,h,theta.
    #[arg(long, value_parser = parse_rbox, allow_hyphen_values = true)]
    a: RBox5,
    /// Second box as cx,cy,w,h,theta.
    #[arg(long, value_parser = parse_rbox, allow_hyphen_values = true)]
    b: RBox5,
    /// IoU of the enclosing axis-aligned rectangles instead.
    #[arg(long)]
    horizontal: bool,
}

pub fn iou(a: IouArgs) -> Result<()> {
    let v = if a.horizontal {
        hiou(&rbox_to_hbox(&a.a), &rbox_to_hbox(&a.b))
    } else {
        riou(&a.a, &a.b)
    };
    println!("{v:.6}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// CSV with rows cx,cy,w,h,theta,score; a non-numeric first row is a header.
    #[arg(long)]
    input: PathBuf,
    /// IoU threshold [default: 0.3 rotated, 0.5 horizontal].
    #[arg(long)]
    nms_thresh: Option<f64>,
    /// Suppress on the enclosing axis-aligned rectangles.
    #[arg(long)]
    horizontal: bool,
}

fn read_box_csv(path: &Path) -> Result<(Vec<RBox5>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut boxes, mut scores) = (Vec::new(), Vec::new());
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        let Some(nums) = nums else {
            if boxes.is_empty() && idx == 0 {
                continue;
            }
            bail!("{}:{}: non-numeric field", path.display(), idx + 1);
        };
        if nums.len() != 6 {
            bail!("{}:{}: expected 6 fields, found {}", path.display(), idx + 1, nums.len());
        }
        let b = RBox5::new(nums[0], nums[1], nums[2], nums[3], nums[4])
            .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        boxes.push(b);
        scores.push(nums[5]);
    }
    Ok((boxes, scores))
}

pub fn nms(a: NmsArgs) -> Result<()> {
    let (boxes, scores) = read_box_csv(&a.input)?;
    let keep = if a.horizontal {
        let h: Vec<HBox> = boxes.iter().map(rbox_to_hbox).collect();
        hnms(&h, &scores, a.nms_thresh.unwrap_or(default_nms_thresh(Task::Hbb)))?
    } else {
        rnms(&boxes, &scores, a.nms_thresh.unwrap_or(default_nms_thresh(Task::Obb)))?
    };
    let mut out = io::stdout().lock();
    for k in keep {
        writeln!(out, "{k}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Horizontal,
    Rotated,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    #[arg(long, value_enum, default_value = "horizontal")]
    mode: ModeArg,
    /// Only this pyramid level (3..=7).
    #[arg(long)]
    level: Option<u32>,
    /// Print per-level and total counts instead of the anchors.
    #[arg(long)]
    count: bool,
    /// Output CSV path [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn anchors(a: AnchorsArgs) -> Result<()> {
    let mut spec = AnchorSpec::default();
    if let Some(l) = a.level {
        spec.levels.retain(|lv| lv.pyramid == l);
        if spec.levels.is_empty() {
            bail!("no pyramid level P{l}");
        }
    }
    let mode = match a.mode {
        ModeArg::Horizontal => AnchorMode::Horizontal,
        ModeArg::Rotated => AnchorMode::Rotated,
    };
    let mut out = open_output(a.output.as_deref())?;
    let size = (a.width, a.height);
    if a.count {
        writeln!(out, "level,count")?;
        for lv in &spec.levels {
            let one = AnchorSpec { levels: vec![*lv], ..spec.clone() };
            writeln!(out, "{},{}", lv.pyramid, one.anchor_count(size, mode))?;
        }
        writeln!(out, "total,{}", spec.anchor_count(size, mode))?;
    } else {
        writeln!(out, "level,cx,cy,w,h,theta")?;
        for anchor in generate_anchors(&spec, size, mode)? {
            let b = anchor.to_rbox();
            writeln!(out, "{},{},{},{},{},{}", anchor.level, b.cx, b.cy, b.w, b.h, b.theta)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: u32,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: u32,
    #[arg(long, default_value_t = DEFAULT_OUT_SIZE)]
    out_size: u32,
    /// DOTA label file of the image; its stem names the tiles.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory for per-tile label files (requires --labels).
    #[arg(long, requires = "labels")]
    out_dir: Option<PathBuf>,
    /// Minimum visible area fraction for a cropped box to be kept.
    #[arg(long, default_value_t = DEFAULT_MIN_VISIBLE)]
    min_visible: f64,
}

pub fn tile(a: TileArgs) -> Result<()> {
    let plan = plan_tiles((a.width, a.height), a.window, a.overlap, a.out_size)?;
    let stem = a
        .labels
        .as_deref()
        .and_then(|p| p.file_stem())
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    let anns = match &a.labels {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_dota(&text).with_context(|| p.display().to_string())?
        }
        None => Vec::new(),
    };
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut out = io::stdout().lock();
    writeln!(out, "image_id,origin_x,origin_y,width,height,scale,boxes")?;
    for t in &plan.tiles {
        let id = tile_image_id(&stem, t);
        let kept = crop_annotations(&anns, t, a.min_visible);
        if let Some(dir) = &a.out_dir {
            let mut text = String::new();
            for k in &kept {
                for c in k.quad.coords() {
                    text.push_str(&format!("{c} "));
                }
                text.push_str(&format!("{} {}\n", k.category, u8::from(k.difficult)));
            }
            let path = dir.join(format!("{id}.txt"));
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        writeln!(out, "{id},{},{},{},{},{:.6},{}", t.origin_x, t.origin_y, t.width, t.height, t.scale, kept.len())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Directory of per-tile submission files; image ids are `<image>__<x>__<y>`.
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, value_enum, default_value = "obb")]
    task: TaskArg,
    /// Output directory for merged submission files.
    #[arg(long)]
    out: PathBuf,
    /// IoU threshold [default: 0.3 obb, 0.5 hbb].
    #[arg(long)]
    nms_thresh: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: u32,
    #[arg(long, default_value_t = DEFAULT_OUT_SIZE)]
    out_size: u32,
}

pub fn merge(a: MergeArgs) -> Result<()> {
    if a.window == 0 || a.out_size == 0 {
        bail!("window and out-size must be positive");
    }
    let task = Task::from(a.task);
    let scale = a.out_size as f64 / a.window as f64;
    let tile_dets = read_submission_dir(&a.dets, task)?;
    let mut global = Vec::with_capacity(tile_dets.len());
    for d in &tile_dets {
        let (stem, ox, oy) =
            parse_tile_image_id(&d.image_id).ok_or_else(|| anyhow!("'{}' is not a tile image id", d.image_id))?;
        let t = Tile { origin_x: ox, origin_y: oy, width: 0, height: 0, scale };
        let mut g = remap_detection(d, &t);
        g.image_id = stem.to_string();
        global.push(g);
    }
    let merged = merge_detections(&[global], a.nms_thresh.unwrap_or(default_nms_thresh(task)))?;
    let cats: BTreeSet<String> = tile_dets.iter().map(|d| d.category.clone()).collect();
    let cats: Vec<String> = cats.into_iter().collect();
    let paths = write_submission(&merged, task, &cats, &a.out)?;
    println!("{} detections in, {} kept, {} files written", tile_dets.len(), merged.len(), paths.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Directory of DOTA label files, one per image.
    #[arg(long)]
    gt: PathBuf,
    /// Directory of Task1_/Task2_ submission files.
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_thresh: f64,
    /// voc07 (11-point) or all_point.
    #[arg(long, default_value = "voc07", value_parser = |s: &str| s.parse::<ApMetric>().map_err(|e| e.to_string()))]
    metric: ApMetric,
    /// Count difficult ground truths instead of ignoring them.
    #[arg(long)]
    keep_difficult: bool,
    /// Also write the report as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let task = Task::from(a.task);
    let gts = read_annotation_dir(&a.gt)?;
    let dets = read_submission_dir(&a.dets, task)?;
    let cfg = EvalConfig {
        iou_threshold: a.iou_thresh,
        metric: a.metric,
        ignore_difficult: !a.keep_difficult,
    };
    let report = map_report(&dets, &gts, task, &cfg)?;
    println!("{report}");
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Anchor as cx,cy,w,h,theta.
    #[arg(long, value_parser = parse_rbox, allow_hyphen_values = true, default_value = "0,0,40,20,-90")]
    anchor: RBox5,
    /// Ground truth as cx,cy,w,h,theta.
    #[arg(long, value_parser = parse_rbox, allow_hyphen_values = true, default_value = "0,0,40,20,-89.5")]
    gt: RBox5,
    #[arg(long, allow_hyphen_values = true, default_value_t = -100.0)]
    start: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = -80.0)]
    end: f64,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Smooth-L1 transition point.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Output CSV path [default: stdout].
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn loss_landscape(a: LandscapeArgs) -> Result<()> {
    let sweep = AngleSweep { start: a.start, end: a.end, step: a.step };
    let rows = landscape_rows(&a.anchor, &a.gt, &sweep, a.beta)?;
    let mut out = open_output(a.output.as_deref())?;
    write_landscape_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Spatial size of the square map.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    categories: usize,
    /// Number of random boxes rasterized into the label map.
    #[arg(long, default_value_t = 3)]
    boxes: usize,
    /// Image-level filter applied after instance-level re-weighting.
    #[arg(long, default_value = "nonlocal_gaussian", value_parser = |s: &str| s.parse::<ImldFilter>().map_err(|e| e.to_string()))]
    filter: ImldFilter,
    /// Dilated convolutions in the segmentation block.
    #[arg(long, default_value_t = 1)]
    dilated: usize,
    /// Read the feature map from this file instead of sampling one.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the denoised feature map to this file.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn report_row(stage: &str, r: &DecoupleReport) -> String {
    format!("{stage},{},{},{}", fmt_opt(r.present), fmt_opt(r.absent), fmt_opt(r.background))
}

pub fn denoise_demo(a: DenoiseArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = match &a.input {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_feature_map(io::BufReader::new(f)).with_context(|| p.display().to_string())?
        }
        None => {
            if a.channels == 0 || a.size == 0 {
                bail!("channels and size must be positive");
            }
            FeatureMap::new(Array3::from_shape_simple_fn((a.channels, a.size, a.size), || rng.random::<f64>()))?
        }
    };
    let (c, h, w) = x.shape();
    let groups = ChannelGroups::equal_split(c, a.categories)?;

    let mut quads = Vec::with_capacity(a.boxes);
    let mut labels = Vec::with_capacity(a.boxes);
    let (fw, fh) = (w as f64, h as f64);
    for _ in 0..a.boxes {
        let b = RBox5::new(
            rng.random_range(0.2..0.8) * fw,
            rng.random_range(0.2..0.8) * fh,
            rng.random_range(0.15..0.4) * fw,
            rng.random_range(0.15..0.4) * fh,
            rng.random_range(-90.0..0.0),
        )?;
        quads.push(b.to_quad());
        labels.push(rng.random_range(1..=a.categories as u32));
    }
    let label_map = rasterize_masks(&quads, &labels, (h, w), 1.0)?;
    let masks: Vec<Array2<f64>> = (0..=a.categories as u32)
        .map(|k| label_map.labels().mapv(|l| f64::from(u8::from(l == k))))
        .collect();
    let weights = DenoiseWeights::from_category_masks(&masks, groups.clone())?;
    let present = label_map.present();

    let y = inld_reweight(&x, &weights)?;
    let z = imld_residual(&y, a.filter)?;
    let params = InldBlockParams::random(&mut rng, c, a.categories + 1, a.dilated);
    let block = inld_block_forward(&x, &params)?;
    let seg_ce = pixelwise_ce(&block.seg_logits, &label_map)?;
    let mean_weight = block.weights.data().mean().unwrap_or(0.0);

    let mut out = io::stdout().lock();
    writeln!(out, "map {c}x{h}x{w}, {} categories, seed {}", a.categories, a.seed)?;
    let present_list: Vec<String> = present.iter().map(usize::to_string).collect();
    writeln!(out, "present categories: {}", present_list.join(" "))?;
    writeln!(out, "stage,present,absent,background")?;
    writeln!(out, "{}", report_row("input", &decouple_report(&x, &groups, &present)?))?;
    writeln!(out, "{}", report_row("inld", &decouple_report(&y, &groups, &present)?))?;
    writeln!(out, "{}", report_row(&format!("imld:{}", a.filter), &decouple_report(&z, &groups, &present)?))?;
    writeln!(out, "block seg_ce {seg_ce:.6} mean_weight {mean_weight:.6}")?;

    if let Some(p) = &a.output {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut wr = BufWriter::new(f);
        write_feature_map(&z, &mut wr)?;
        wr.flush()?;
    }
    Ok(())
}
