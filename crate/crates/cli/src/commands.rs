use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use evseg_core::affine::FlowField;
use evseg_core::event::{EventSlice, NormalizedEvents, SensorGeometry};
use evseg_core::fit::{self, fit_best_of, resolve_foreground, SegmentationResult, FLOW_FILE, MASK_FILES};
use evseg_core::io::{self, EventFormat, Tensor};
use evseg_core::layers::{ActivationConfig, ActivationKind};
use evseg_core::metrics::{aggregate, detection_rate, iou, BinaryMask, DrNormalization};
use evseg_core::objective::{timestamp_images_with, to_u8, warp_events, contrast_loss_with, DEFAULT_EPSILON};
use evseg_core::sim::{generate_dataset, GtMode, Manifest};
use evseg_core::voxel::build_voxel_grid;
use evseg_core::Execution;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{
    flowviz, ActivationArg, CliError, DeblurArgs, DrNormalizationArg, EvalArgs, EventSource, FitFlags,
    GtModeArg, RenderFlowArgs, SegmentArgs, SimulateArgs, VoxelizeArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Errors from reading or checking user-supplied inputs.
fn input<T>(r: evseg_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

/// Errors while computing or writing outputs.
fn runtime<T>(r: evseg_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Runtime(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file {}", path.display())))
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    match (a.gt_mode, a.tau) {
        (Some(GtModeArg::SpriteAlpha), _) => cfg.gt_mode = GtMode::SpriteAlpha,
        (Some(GtModeArg::FlowThreshold), Some(tau)) => cfg.gt_mode = GtMode::FlowThreshold { tau },
        (Some(GtModeArg::FlowThreshold), None) => match cfg.gt_mode {
            GtMode::FlowThreshold { .. } => {}
            GtMode::SpriteAlpha => {
                return Err(CliError::Usage("--gt-mode flow-threshold needs --tau".into()));
            }
        },
        (None, Some(tau)) => match &mut cfg.gt_mode {
            GtMode::FlowThreshold { tau: t } => *t = tau,
            GtMode::SpriteAlpha => {
                return Err(CliError::Usage("--tau only applies to --gt-mode flow-threshold".into()));
            }
        },
        (None, None) => {}
    }
    cfg.validate()?;
    let items = cfg.dataset(a.seed)?;
    eprintln!("rendering {} sequence(s)", items.len());
    create_dir(&a.out)?;
    let manifest = runtime(generate_dataset(&items, &a.out, Execution::default()))?;
    for s in &manifest.sequences {
        eprintln!("{}: {} events", s.name, s.event_count);
    }
    println!("{}", a.out.join(Manifest::FILE_NAME).display());
    Ok(())
}

fn load_source(src: &EventSource) -> Result<EventSlice> {
    let geometry = match (src.width, src.height) {
        (Some(w), Some(h)) => Some(input(SensorGeometry::new(w, h))?),
        _ => None,
    };
    let path = match (&src.events, &src.manifest, &src.sequence) {
        (Some(p), _, _) => p.clone(),
        (None, Some(m), Some(name)) => {
            let manifest = input(Manifest::load(m))?;
            let entry = manifest
                .sequences
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| CliError::Usage(format!("sequence {name:?} is not in {}", m.display())))?;
            m.parent().unwrap_or(Path::new("")).join(&entry.events)
        }
        _ => return Err(CliError::Usage("an event file or --manifest with --sequence is required".into())),
    };
    require_file(&path)?;
    input(io::load_events_with_geometry(&path, EventFormat::from_path(&path), geometry))
}

/// Config file, then flags on top.
fn fit_config(flags: &FitFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(flags.config.as_deref())?;
    if let Some(s) = flags.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &flags.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(n) = flags.n_events {
        cfg.n_events = n;
    }
    let act = &mut cfg.fit.objective.activation;
    if let Some(kind) = flags.activation {
        act.kind = match kind {
            ActivationArg::LeakyDorelu => ActivationKind::LeakyDorelu,
            ActivationArg::LeakyRelu => ActivationKind::LeakyRelu,
        };
    }
    if let Some(g) = flags.gamma {
        *act = input(ActivationConfig::new(act.kind, g))?;
    }
    if let Some(l) = flags.lambda {
        cfg.fit.objective.lambda = l;
    }
    if let Some(i) = flags.iterations {
        cfg.fit.iterations = i;
    }
    if let Some(lr) = flags.learning_rate {
        cfg.fit.learning_rate = lr;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Fits every seed on the first `n_events` events and returns all runs and
/// the index of the best one.
fn run_fits(events: &EventSlice, cfg: &RunConfig) -> Result<(EventSlice, Vec<SegmentationResult>, usize)> {
    let window = input(events.take_window(cfg.n_events))?;
    if window.is_empty() {
        return Err(CliError::Runtime("event window is empty".into()));
    }
    eprintln!(
        "fitting {} of {} events, seeds {:?}, {} iterations",
        window.len(),
        events.len(),
        cfg.seeds,
        cfg.fit.iterations
    );
    let (results, best) = runtime(fit_best_of(&window, &cfg.fit, &cfg.seeds, Execution::default()))?;
    for r in &results {
        eprintln!(
            "seed {}: loss {:.6} -> {:.6}",
            r.config.seed,
            r.initial_loss().total,
            r.best_loss().total
        );
    }
    Ok((window, results, best))
}

#[derive(Serialize)]
struct Selection {
    seeds: Vec<u64>,
    losses: Vec<f64>,
    best_seed: u64,
    window_events: usize,
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    let cfg = fit_config(&a.fit)?;
    let events = load_source(&a.source)?;
    let (window, results, best) = run_fits(&events, &cfg)?;
    create_dir(&a.out)?;
    for r in &results {
        runtime(r.write_bundle(&a.out.join("runs").join(format!("seed_{}", r.config.seed))))?;
    }
    runtime(results[best].write_bundle(&a.out))?;
    write_json(
        &a.out.join("selection.json"),
        &Selection {
            seeds: cfg.seeds.clone(),
            losses: results.iter().map(|r| r.best_loss().total).collect(),
            best_seed: results[best].config.seed,
            window_events: window.len(),
        },
    )?;
    println!("{}", a.out.display());
    Ok(())
}

fn load_flow(path: &Path) -> Result<FlowField> {
    let file = if path.is_dir() { path.join(FLOW_FILE) } else { path.to_path_buf() };
    require_file(&file)?;
    input(Tensor::load(&file).and_then(|t| FlowField::from_tensor(&t)))
}

#[derive(Serialize)]
struct DeblurReport {
    events: usize,
    t_ref: f64,
    nonzero_before: usize,
    nonzero_after: usize,
    contrast_before: f64,
    contrast_after: f64,
}

/// Occupancy image of `events` warped by `flow` to `t_ref`, and its contrast.
fn warped_image(events: &NormalizedEvents, flow: &FlowField, t_ref: f64) -> Result<(Vec<f64>, f64)> {
    let w = input(warp_events(events, flow, t_ref))?;
    let img = timestamp_images_with(&w, events.geometry(), DEFAULT_EPSILON, Execution::default());
    let c = contrast_loss_with(&img, DEFAULT_EPSILON, DEFAULT_EPSILON);
    Ok((img.occupancy, c))
}

pub fn deblur(a: &DeblurArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.t_ref) {
        return Err(CliError::Usage(format!("--t-ref must lie in [0, 1], got {}", a.t_ref)));
    }
    let events = load_source(&a.source)?;
    let (events, flow) = match &a.flow {
        Some(p) => (events, load_flow(p)?),
        None => {
            let cfg = fit_config(&a.fit_flags)?;
            let (window, results, best) = run_fits(&events, &cfg)?;
            (window, results[best].flow.clone())
        }
    };
    let g = events.geometry();
    if flow.geometry() != g {
        return Err(CliError::Usage(format!(
            "flow is {}x{} but the events are {}x{}",
            flow.geometry().width(),
            flow.geometry().height(),
            g.width(),
            g.height()
        )));
    }
    let normalized = runtime(events.normalize_timestamps())?;
    let (before, c_before) = warped_image(&normalized, &FlowField::zeros(g), a.t_ref)?;
    let (after, c_after) = warped_image(&normalized, &flow, a.t_ref)?;
    create_dir(&a.out)?;
    for (name, img) in [("before.png", &before), ("after.png", &after)] {
        runtime(io::save_gray(&a.out.join(name), g.width(), g.height(), to_u8(img)))?;
    }
    let nonzero = |img: &[f64]| img.iter().filter(|&&v| v > DEFAULT_EPSILON).count();
    let report = DeblurReport {
        events: normalized.len(),
        t_ref: a.t_ref,
        nonzero_before: nonzero(&before),
        nonzero_after: nonzero(&after),
        contrast_before: c_before,
        contrast_after: c_after,
    };
    eprintln!(
        "nonzero pixels {} -> {}, contrast {:.6} -> {:.6}",
        report.nonzero_before, report.nonzero_after, c_before, c_after
    );
    write_json(&a.out.join("deblur.json"), &report)?;
    println!("{}", a.out.display());
    Ok(())
}

fn is_bundle(dir: &Path) -> bool {
    MASK_FILES.iter().all(|m| dir.join(m).is_file())
}

/// Sequence name to bundle directory.
fn result_bundles(results: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let name_of = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    if is_bundle(results) {
        let name = name_of(&fs::canonicalize(results).unwrap_or(results.to_path_buf()))
            .unwrap_or_else(|| "result".into());
        return Ok(BTreeMap::from([(name, results.to_path_buf())]));
    }
    let entries = fs::read_dir(results)
        .map_err(|e| CliError::Usage(format!("cannot read results {}: {e}", results.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries.flatten() {
        let p = entry.path();
        if p.is_dir() && is_bundle(&p) {
            if let Some(n) = name_of(&p) {
                out.insert(n, p);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("no result bundles under {}", results.display())));
    }
    Ok(out)
}

/// Sequence name to ground-truth mask file.
fn gt_masks(gt: &Path, names: &BTreeMap<String, PathBuf>) -> Result<BTreeMap<String, PathBuf>> {
    let manifest = gt.join(Manifest::FILE_NAME);
    if manifest.is_file() {
        let m = input(Manifest::load(&manifest))?;
        return Ok(m.sequences.into_iter().map(|s| (s.name, gt.join(s.gt_mask))).collect());
    }
    let direct = gt.join("gt_mask.pgm");
    if direct.is_file() && names.len() == 1 {
        let name = names.keys().next().expect("one entry").clone();
        return Ok(BTreeMap::from([(name, direct)]));
    }
    let mut out = BTreeMap::new();
    for name in names.keys() {
        let p = gt.join(name).join("gt_mask.pgm");
        if p.is_file() {
            out.insert(name.clone(), p);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalRow {
    sequence: String,
    iou: f64,
    dr: u8,
    foreground_layer: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    rows: Vec<EvalRow>,
    mean_iou: f64,
    mean_dr: f64,
    dr_normalization: DrNormalization,
    dr_normalization_note: &'static str,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(n) = a.dr_normalization {
        cfg.dr_normalization = match n {
            DrNormalizationArg::GtBox => DrNormalization::GtBox,
            DrNormalizationArg::BoxIou => DrNormalization::BoxIou,
        };
    }
    let results = result_bundles(&a.results)?;
    let gts = gt_masks(&a.gt, &results)?;
    let unmatched: Vec<&String> = results.keys().filter(|n| !gts.contains_key(*n)).collect();
    if !unmatched.is_empty() {
        return Err(CliError::Usage(format!("no ground truth for sequences {unmatched:?}")));
    }
    let mut rows = Vec::new();
    for (name, dir) in &results {
        let hard = input(fit::read_bundle_masks(dir))?;
        let gt: BinaryMask = input(io::load_mask(&gts[name]))?;
        let k = input(resolve_foreground(&hard, &gt))?;
        rows.push(EvalRow {
            sequence: name.clone(),
            iou: input(iou(&hard[k], &gt))?,
            dr: input(detection_rate(&hard[k], &gt, cfg.dr_normalization))?,
            foreground_layer: k,
        });
    }
    let scores: Vec<(f64, f64)> = rows.iter().map(|r| (r.iou, r.dr as f64)).collect();
    let (mean_iou, mean_dr) = runtime(aggregate(&scores))?;
    create_dir(&a.out)?;
    let mut csv = String::from("sequence,iou,dr,foreground_layer\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.sequence, r.iou, r.dr, r.foreground_layer));
    }
    let csv_path = a.out.join("report.csv");
    fs::write(&csv_path, csv).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    eprintln!(
        "{} sequence(s): mean IoU {mean_iou:.4}, mean DR {mean_dr:.4} ({})",
        rows.len(),
        cfg.dr_normalization.describe()
    );
    write_json(
        &a.out.join("report.json"),
        &EvalSummary {
            rows,
            mean_iou,
            mean_dr,
            dr_normalization: cfg.dr_normalization,
            dr_normalization_note: cfg.dr_normalization.describe(),
        },
    )?;
    println!("{}", a.out.join("report.json").display());
    Ok(())
}

pub fn voxelize(a: &VoxelizeArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    cfg.validate()?;
    let events = load_source(&a.source)?;
    if events.is_empty() {
        return Err(CliError::Runtime("event file is empty".into()));
    }
    let grid = runtime(build_voxel_grid(&events, cfg.bins))?;
    runtime(grid.to_tensor().save(&a.out))?;
    println!("{}", a.out.display());
    Ok(())
}

pub fn render_flow(a: &RenderFlowArgs) -> Result<()> {
    let flow = load_flow(&a.flow)?;
    if !flow.is_finite() {
        return Err(CliError::Usage(format!("{} holds non-finite flow", a.flow.display())));
    }
    if let Some(parent) = a.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    flowviz::render(&flow)
        .save(&a.out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", a.out.display())))?;
    println!("{}", a.out.display());
    Ok(())
}
