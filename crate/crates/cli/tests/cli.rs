use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obbkit::dota::{parse_dota, DetBox, Detection, Task};
use obbkit::eval::{map_report, EvalConfig};
use obbkit::RBox5;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obbkit")).args(args).output().expect("spawn obbkit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn iou_of_identical_boxes() {
    let o = run(&["iou", "--a", "10,10,40,20,-30", "--b", "10,10,40,20,-30"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "1.000000");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["iou", "--a", "1,2,3"])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let o = run(&["eval", "--task", "obb", "--gt", missing.to_str().unwrap(), "--dets", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));
}

fn write_nms_input(dir: &Path) -> String {
    // two heavily overlapping boxes and one apart
    let p = dir.join("boxes.csv");
    fs::write(&p, "cx,cy,w,h,theta,score\n0,0,40,20,-90,0.9\n1,0,40,20,-90,0.8\n200,0,40,20,-45,0.7\n").unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_nms_input(dir.path());
    let cfg = dir.path().join("nms.cfg");
    fs::write(&cfg, "# keep everything\nnms-thresh = 0.99\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let o = run(&["--config", cfg, "nms", "--input", &input]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = run(&["--config", cfg, "nms", "--input", &input, "--nms-thresh", "0.3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), ["0", "2"]);

    let o = run(&["nms", "--input", &input]);
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), ["0", "2"]);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_nms_input(dir.path());
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "nms-threshold = 0.5\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "nms", "--input", &input]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nms-threshold"));
}

#[test]
fn eval_matches_library_report() {
    let dir = tempfile::tempdir().unwrap();
    let gt_dir = dir.path().join("gt");
    let det_dir = dir.path().join("dets");
    fs::create_dir_all(&gt_dir).unwrap();
    fs::create_dir_all(&det_dir).unwrap();
    fs::write(
        gt_dir.join("P0001.txt"),
        "imagesource:GoogleEarth\ngsd:null\n10 10 50 10 50 30 10 30 plane 0\n100 100 140 100 140 120 100 120 plane 0\n\
         300 300 320 300 320 310 300 310 ship 1\n400 400 430 400 430 420 400 420 ship 0\n",
    )
    .unwrap();
    fs::write(
        det_dir.join("Task1_plane.txt"),
        "P0001 0.9 11 10 51 10 51 30 11 30\nP0001 0.8 600 600 640 600 640 620 600 620\nP0001 0.3 100 101 140 101 140 121 100 121\n",
    )
    .unwrap();
    fs::write(det_dir.join("Task1_ship.txt"), "P0001 0.7 300 300 320 300 320 310 300 310\nP0001 0.6 400 400 430 400 430 420 400 420\n").unwrap();

    let csv = dir.path().join("report.csv");
    let o = run(&[
        "eval",
        "--task",
        "obb",
        "--gt",
        gt_dir.to_str().unwrap(),
        "--dets",
        det_dir.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let gts = BTreeMap::from([(
        "P0001".to_string(),
        parse_dota(&fs::read_to_string(gt_dir.join("P0001.txt")).unwrap()).unwrap(),
    )]);
    let dets = obbkit::dota::read_submission_dir(&det_dir, Task::Obb).unwrap();
    let want = map_report(&dets, &gts, Task::Obb, &EvalConfig::default()).unwrap();
    assert_eq!(fs::read_to_string(&csv).unwrap(), want.to_csv());
    // plane: TP, FP, TP over 2 gts; ship: the difficult hit is ignored, then a TP
    let plane = (6.0 + 5.0 * (2.0 / 3.0)) / 11.0;
    assert!((want.map - (plane + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn denoise_demo_is_deterministic() {
    let a = run(&["denoise-demo", "--seed", "4", "--size", "12", "--filter", "median3x3"]);
    let b = run(&["denoise-demo", "--seed", "4", "--size", "12", "--filter", "median3x3"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["denoise-demo", "--seed", "5", "--size", "12", "--filter", "median3x3"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn denoise_demo_roundtrips_feature_maps() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.fmap");
    let o = run(&["denoise-demo", "--size", "8", "--output", first.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = run(&["denoise-demo", "--size", "8", "--input", first.to_str().unwrap(), "--filter", "none"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    fs::write(dir.path().join("junk.fmap"), b"nope").unwrap();
    let o = run(&["denoise-demo", "--input", dir.path().join("junk.fmap").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn landscape_csv_shape() {
    let o = run(&["loss-landscape", "--start", "-91", "--end", "-89", "--step", "0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta_pred,smooth_l1,iou_smooth,riou");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn anchor_totals() {
    let o = run(&["anchors", "--mode", "rotated", "--count"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().any(|l| l == "total,1681218"));
}

#[test]
fn tile_then_merge_restores_image_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("P0007.txt");
    fs::write(&labels, "100 100 160 100 160 130 100 130 plane 0\n").unwrap();
    let tiles_dir = dir.path().join("tiles");
    let o = run(&[
        "tile",
        "--width",
        "1024",
        "--height",
        "1024",
        "--labels",
        labels.to_str().unwrap(),
        "--out-dir",
        tiles_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().any(|l| l.starts_with("P0007__0__0,0,0,600,600,1.333333,1")));

    // x in [100, 160], y in [100, 130], in tile pixels
    let b = RBox5::new(130.0, 115.0, 30.0, 60.0, -90.0).unwrap();
    let s = 800.0 / 600.0;
    let in_tile = |ox: f64| RBox5::new((b.cx - ox) * s, b.cy * s, b.w * s, b.h * s, b.theta).unwrap();
    let dets = vec![
        Detection::new("P0007__0__0", "plane", 0.9, DetBox::Rotated(in_tile(0.0))).unwrap(),
        Detection::new("P0007__0__424", "plane", 0.4, DetBox::Rotated(RBox5::new(10.0, 10.0, 5.0, 5.0, -90.0).unwrap()))
            .unwrap(),
        Detection::new("P0007__424__0", "plane", 0.1, DetBox::Rotated(in_tile(0.0))).unwrap(),
        // a lower-scored copy shifted by one image pixel
        Detection::new("P0007__0__0", "plane", 0.5, DetBox::Rotated(in_tile(1.0))).unwrap(),
    ];
    let det_dir = dir.path().join("dets");
    obbkit::dota::write_submission(&dets, Task::Obb, &[], &det_dir).unwrap();
    let out = dir.path().join("merged");
    let o = run(&["merge", "--dets", det_dir.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let merged = obbkit::dota::read_submission_dir(&out, Task::Obb).unwrap();
    // the copy is suppressed; the third detection lands 424 px to the right
    assert_eq!(stdout(&o).trim(), "4 detections in, 3 kept, 1 files written");
    assert_eq!(merged.len(), 3);
    let top = merged[0].bbox.to_hbox().unwrap();
    assert!((top.xmin - 100.0).abs() < 1e-4 && (top.ymax - 130.0).abs() < 1e-4, "{top:?}");
    assert!(merged.iter().all(|d| d.image_id == "P0007"));
}
