use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evseg_core::affine::FlowField;
use evseg_core::event::{Event, EventSlice, Polarity, SensorGeometry};
use evseg_core::io::{self, EventFormat, Tensor};
use evseg_core::metrics::BinaryMask;
use evseg_core::voxel::VoxelGrid;
use serde_json::Value;
use tempfile::TempDir;

fn evseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evseg")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{
    "sequences": [
        {"name": "a", "width": 48, "height": 40, "background_flow": [3, 0],
         "sprites": [{"size": 12, "flow": [-4, 0]}]},
        {"name": "b", "width": 48, "height": 40, "background_flow": [0, 2], "sprites": []}
    ],
    "fit": {"iterations": 10}
}"#;

/// Simulates the two small sequences into `dir/data`.
fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = write(dir, "small.json", SMALL);
    let out = dir.join("data");
    assert_ok(&evseg(&["simulate", "--config", p(&cfg), "--out", p(&out)]));
    out
}

#[test]
fn simulate_writes_manifest_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let manifest = json(&data.join("manifest.json"));
    let seqs = manifest["sequences"].as_array().unwrap();
    assert_eq!(seqs.len(), 2);
    for s in seqs {
        for key in ["events", "gt_mask", "gt_flow"] {
            assert!(data.join(s[key].as_str().unwrap()).is_file());
        }
    }
    let cfg = dir.path().join("small.json");
    let again = dir.path().join("again");
    let o = evseg(&["simulate", "--config", p(&cfg), "--out", p(&again)]);
    assert_ok(&o);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), p(&again.join("manifest.json")));
    for name in ["a/events.evls", "b/events.evls", "a/gt_mask.pgm", "a/gt_flow.f32"] {
        assert_eq!(fs::read(data.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"sequences": [{"width": 32, "height": 32, "seed": 4}]}"#);
    let out = dir.path().join("o");
    assert_ok(&evseg(&["simulate", "--config", p(&cfg), "--out", p(&out), "--seed", "11"]));
    assert_eq!(json(&out.join("manifest.json"))["sequences"][0]["seed"], 11);
}

#[test]
fn simulate_flow_threshold_needs_tau() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = evseg(&["simulate", "--out", p(&out), "--gt-mode", "flow-threshold"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--tau"));
}

#[test]
fn simulate_reports_missing_background_image_field() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"sequences": [{"background_image": "nope.png"}]}"#);
    let o = evseg(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sequences[0].background_image"), "{}", stderr(&o));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn config_with_unknown_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"fit": {"iteratons": 3}}"#);
    let o = evseg(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("iteratons"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(evseg(&["segment"]).status.code(), Some(1));
    assert_eq!(evseg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(evseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn segment_runs_every_seed_and_keeps_the_best() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let out = dir.path().join("res/a");
    let cfg = dir.path().join("small.json");
    let o = evseg(&[
        "segment", "--manifest", p(&data.join("manifest.json")), "--sequence", "a",
        "--config", p(&cfg), "--seeds", "0,1,2", "--n-events", "50000", "--out", p(&out),
    ]);
    assert_ok(&o);
    for f in ["mask_layer0.pgm", "mask_layer1.pgm", "flow.f32", "logits.f32", "loss_trace.csv", "params.json"] {
        assert!(out.join(f).is_file(), "{f}");
        for s in 0..3 {
            assert!(out.join(format!("runs/seed_{s}")).join(f).is_file());
        }
    }
    let sel = json(&out.join("selection.json"));
    let losses: Vec<f64> = sel["losses"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(losses.len(), 3);
    let best = sel["best_seed"].as_u64().unwrap() as usize;
    assert!(losses.iter().all(|&l| l >= losses[best]));
    let params = json(&out.join("params.json"));
    assert_eq!(params["seed"].as_u64().unwrap() as usize, best);
    // iterations come from the config file
    assert_eq!(params["iterations"], 10);
    let trace = fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 12);

    let events = io::load_events(&data.join("a/events.evls"), EventFormat::Binary).unwrap();
    assert_eq!(sel["window_events"].as_u64().unwrap() as usize, events.len().min(50_000));
}

#[test]
fn segment_flags_override_config() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let cfg = dir.path().join("small.json");
    let out = dir.path().join("r");
    assert_ok(&evseg(&[
        "segment", p(&data.join("b/events.evls")), "--config", p(&cfg), "--iterations", "3",
        "--seed", "5", "--n-events", "500", "--lambda", "0", "--activation", "leaky-relu", "--gamma", "10",
        "--out", p(&out),
    ]));
    let params = json(&out.join("params.json"));
    assert_eq!(params["iterations"], 3);
    assert_eq!(params["seed"], 5);
    assert_eq!(params["config"]["objective"]["lambda"], 0.0);
    assert_eq!(params["config"]["objective"]["activation"]["kind"], "leaky_relu");
    assert_eq!(params["config"]["objective"]["activation"]["gamma"], 10.0);
    assert_eq!(json(&out.join("selection.json"))["window_events"], 500);
}

#[test]
fn segment_runtime_failures_exit_two() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.csv", "# geometry 8 8\nt,x,y,p\n");
    let o = evseg(&["segment", p(&empty), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let data = small_dataset(dir.path());
    let o = evseg(&[
        "segment", p(&data.join("a/events.evls")), "--iterations", "5", "--seed", "0",
        "--learning-rate", "1e300", "--out", p(&dir.path().join("o2")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"), "{}", stderr(&o));
}

fn translation_scene(dir: &Path) -> PathBuf {
    let cfg = write(
        dir,
        "t.json",
        r#"{"sequences": [{"name": "t", "width": 64, "height": 48, "background_flow": [6, 0], "sprites": []}]}"#,
    );
    let out = dir.join("tdata");
    assert_ok(&evseg(&["simulate", "--config", p(&cfg), "--out", p(&out)]));
    out.join("t")
}

#[test]
fn deblur_with_zero_flow_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let seq = translation_scene(dir.path());
    let flow = dir.path().join("zero.f32");
    FlowField::zeros(SensorGeometry::new(64, 48).unwrap()).to_tensor().save(&flow).unwrap();
    let out = dir.path().join("d");
    assert_ok(&evseg(&["deblur", p(&seq.join("events.evls")), "--flow", p(&flow), "--out", p(&out)]));
    assert_eq!(fs::read(out.join("before.png")).unwrap(), fs::read(out.join("after.png")).unwrap());
}

#[test]
fn deblur_with_true_flow_sharpens_edges() {
    let dir = TempDir::new().unwrap();
    let seq = translation_scene(dir.path());
    let out = dir.path().join("d");
    assert_ok(&evseg(&[
        "deblur", p(&seq.join("events.evls")), "--flow", p(&seq.join("gt_flow.f32")), "--out", p(&out),
    ]));
    let r = json(&out.join("deblur.json"));
    assert!(r["nonzero_after"].as_u64() < r["nonzero_before"].as_u64(), "{r}");
    assert!(r["contrast_after"].as_f64() < r["contrast_before"].as_f64(), "{r}");
}

#[test]
fn deblur_rejects_missing_or_mismatched_flow() {
    let dir = TempDir::new().unwrap();
    let seq = translation_scene(dir.path());
    let ev = seq.join("events.evls");
    let o = evseg(&["deblur", p(&ev), "--flow", p(&dir.path().join("none.f32")), "--out", p(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(1));
    let flow = dir.path().join("small.f32");
    FlowField::zeros(SensorGeometry::new(10, 10).unwrap()).to_tensor().save(&flow).unwrap();
    let o = evseg(&["deblur", p(&ev), "--flow", p(&flow), "--out", p(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("10x10"));
}

/// A bundle directory holding just the two hard masks.
fn bundle(dir: &Path, bg: &BinaryMask, fg: &BinaryMask) {
    io::save_mask(bg, &dir.join("mask_layer0.pgm")).unwrap();
    io::save_mask(fg, &dir.join("mask_layer1.pgm")).unwrap();
}

fn fake_bundle(dir: &Path, fg: &BinaryMask) {
    let bg = BinaryMask::new(fg.geometry(), fg.bits().iter().map(|b| !b).collect()).unwrap();
    bundle(dir, &bg, fg);
}

fn block(g: SensorGeometry, x0: usize, x1: usize) -> BinaryMask {
    BinaryMask::from_fn(g, |x, y| (x0..x1).contains(&x) && (2..6).contains(&y))
}

#[test]
fn eval_scores_matched_sequences() {
    let dir = TempDir::new().unwrap();
    let g = SensorGeometry::new(16, 8).unwrap();
    let (res, gt) = (dir.path().join("res"), dir.path().join("gt"));
    for name in ["same", "apart"] {
        fs::create_dir_all(res.join(name)).unwrap();
        fs::create_dir_all(gt.join(name)).unwrap();
    }
    fake_bundle(&res.join("same"), &block(g, 2, 6));
    io::save_mask(&block(g, 2, 6), &gt.join("same/gt_mask.pgm")).unwrap();
    // neither layer touches the ground truth
    bundle(&res.join("apart"), &block(g, 4, 8), &block(g, 0, 3));
    io::save_mask(&block(g, 10, 14), &gt.join("apart/gt_mask.pgm")).unwrap();
    let out = dir.path().join("e");
    assert_ok(&evseg(&["eval", p(&res), p(&gt), "--out", p(&out)]));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv, "sequence,iou,dr,foreground_layer\napart,0,0,0\nsame,1,1,1\n");
    let report = json(&out.join("report.json"));
    assert_eq!(report["mean_iou"], 0.5);
    assert_eq!(report["mean_dr"], 0.5);
    assert_eq!(report["dr_normalization"], "gt_box");
    assert!(report["dr_normalization_note"].as_str().unwrap().contains("ground-truth box"));

    // a single bundle against a single ground-truth directory
    let out = dir.path().join("e1");
    assert_ok(&evseg(&["eval", p(&res.join("same")), p(&gt.join("same")), "--out", p(&out), "--dr-normalization", "box-iou"]));
    assert_eq!(json(&out.join("report.json"))["rows"][0]["iou"], 1.0);
}

#[test]
fn eval_rejects_unmatched_sequences() {
    let dir = TempDir::new().unwrap();
    let g = SensorGeometry::new(8, 8).unwrap();
    let (res, gt) = (dir.path().join("res"), dir.path().join("gt"));
    fs::create_dir_all(res.join("x")).unwrap();
    fs::create_dir_all(gt.join("y")).unwrap();
    fake_bundle(&res.join("x"), &block(g, 1, 3));
    io::save_mask(&block(g, 1, 3), &gt.join("y/gt_mask.pgm")).unwrap();
    let o = evseg(&["eval", p(&res), p(&gt), "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"x\""));
}

#[test]
fn eval_reads_a_simulated_dataset() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let res = dir.path().join("res");
    for name in ["a", "b"] {
        let mask = io::load_mask(&data.join(name).join("gt_mask.pgm")).unwrap();
        fs::create_dir_all(res.join(name)).unwrap();
        fake_bundle(&res.join(name), &mask);
    }
    let out = dir.path().join("e");
    assert_ok(&evseg(&["eval", p(&res), p(&data), "--out", p(&out)]));
    let report = json(&out.join("report.json"));
    // "b" has no sprite: both masks empty count as agreement
    assert_eq!(report["mean_iou"], 1.0);
}

fn two_events(dir: &Path) -> PathBuf {
    let g = SensorGeometry::new(4, 3).unwrap();
    let slice = EventSlice::new(
        g,
        vec![Event::new(100, 1, 0, Polarity::Positive), Event::new(1100, 2, 1, Polarity::Negative)],
    )
    .unwrap();
    let path = dir.join("two.csv");
    io::save_events(&slice, &path, EventFormat::Csv).unwrap();
    path
}

#[test]
fn voxelize_matches_hand_computed_grid() {
    let dir = TempDir::new().unwrap();
    let ev = two_events(dir.path());
    let out = dir.path().join("v.f32");
    assert_ok(&evseg(&["voxelize", p(&ev), "--bins", "3", "--out", p(&out)]));
    let grid = VoxelGrid::from_tensor(&Tensor::load(&out).unwrap()).unwrap();
    assert_eq!(grid.bins(), 3);
    let mut expected = vec![0.0; 3 * 12];
    expected[1] = 1.0; // bin 0, (1, 0)
    expected[2 * 12 + 4 + 2] = -1.0; // bin 2, (2, 1)
    assert_eq!(grid.values(), &expected[..]);

    assert_ok(&evseg(&["voxelize", p(&ev), "--bins", "1", "--out", p(&out)]));
    let t = Tensor::load(&out).unwrap();
    assert_eq!(t.dims, vec![1, 3, 4]);
    let mut counts = vec![0.0f32; 12];
    counts[1] = 1.0;
    counts[6] = -1.0;
    assert_eq!(t.data, counts);
}

#[test]
fn voxelize_rejects_empty_events() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.csv", "# geometry 8 8\n");
    let o = evseg(&["voxelize", p(&empty), "--out", p(&dir.path().join("v.f32"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn png(path: &Path) -> image::RgbImage {
    image::open(path).unwrap().into_rgb8()
}

#[test]
fn render_flow_colours() {
    let dir = TempDir::new().unwrap();
    let g = SensorGeometry::new(8, 6).unwrap();
    let render = |name: &str, flow: FlowField| {
        let f = dir.path().join(format!("{name}.f32"));
        flow.to_tensor().save(&f).unwrap();
        let out = dir.path().join(format!("{name}.png"));
        assert_ok(&evseg(&["render-flow", p(&f), "--out", p(&out)]));
        png(&out)
    };
    let zero = render("zero", FlowField::zeros(g));
    assert!(zero.pixels().all(|px| *px == zero.pixels().next().copied().unwrap()));
    assert_eq!(zero.get_pixel(0, 0).0, [255, 255, 255]);

    let constant = render("const", FlowField::constant(g, 0.0, 3.0));
    let c = constant.get_pixel(0, 0).0;
    assert!(constant.pixels().all(|px| px.0 == c));
    assert_ne!(c, [255, 255, 255]);

    let u: Vec<f64> = (0..g.pixels()).map(|i| if i % 8 < 4 { 1.0 } else { -1.0 }).collect();
    let halves = render("halves", FlowField::new(g, u, vec![0.0; g.pixels()]).unwrap());
    let (a, b) = (halves.get_pixel(0, 0).0, halves.get_pixel(7, 0).0);
    assert_eq!(a, [255, 0, 0]);
    assert_eq!(b, [0, 255, 255]);
}

#[test]
fn render_flow_rejects_malformed_files() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.f32", "not a tensor");
    let o = evseg(&["render-flow", p(&bad), "--out", p(&dir.path().join("x.png"))]);
    assert_eq!(o.status.code(), Some(1));
}
