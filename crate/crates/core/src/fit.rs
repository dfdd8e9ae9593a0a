//! Direct per-window fitting of the two affine layers and the logit grid
//! with Adam.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affine::{AffineParams, FlowField};
use crate::assign::{assign_layers, sweep_translations, MotionSweep, SweepConfig};
use crate::error::{Error, Result};
use crate::event::{EventSlice, NormalizedEvents};
use crate::exec::Execution;
use crate::io::{save_mask, write_file, Tensor};
use crate::layers::{hard_masks, maxout_pixel, ActivationConfig, AlphaMasks, LayerLogits, LAYERS};
use crate::metrics::{iou, BinaryMask};
use crate::objective::{LayeredModel, LossBreakdown, Objective, ObjectiveConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Seeded random affine coefficients and logits only.
    Random,
    /// Layer translations and the starting assignment come from a
    /// translation sweep; the seed only adds logit noise.
    #[default]
    MotionSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub objective: ObjectiveConfig,
    pub seed: u64,
    /// Half-width of the uniform init for the translation terms `a1`, `a4`.
    pub init_scale_affine: f64,
    /// Half-width of the uniform init for the coordinate-coupled terms.
    pub init_scale_coupled: f64,
    /// Standard deviation of the logit init.
    pub init_scale_logits: f64,
    pub init: InitStrategy,
    pub sweep: SweepConfig,
    /// Every this many iterations the logits are reset to the hard
    /// assignment that best aligns each pixel's events, and Adam only moves
    /// the affine coefficients. 0 lets Adam move the logits instead.
    pub reassign_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            objective: ObjectiveConfig::default(),
            seed: 0,
            init_scale_affine: 0.5,
            init_scale_coupled: 0.005,
            init_scale_logits: 0.01,
            init: InitStrategy::MotionSweep,
            sweep: SweepConfig::default(),
            reassign_every: 50,
        }
    }
}

impl FitConfig {
    /// The network-training optimizer settings (learning rate 1e-5, 400
    /// passes). Far too slow for raw parameters; kept for comparison runs.
    pub fn training_preset() -> Self {
        Self {
            iterations: 400,
            learning_rate: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.sweep.validate()?;
        let ok = self.iterations >= 1
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.adam_epsilon > 0.0
            && self.init_scale_affine >= 0.0
            && self.init_scale_coupled >= 0.0
            && self.init_scale_logits >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid fit configuration: {self:?}")));
        }
        Ok(())
    }
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Indices of the coefficients multiplied by a pixel coordinate.
const COUPLED: [usize; 4] = [1, 2, 4, 5];

/// Flat optimizer state: 12 affine terms (coupled ones pre-multiplied by the
/// coordinate scale) followed by the logits.
struct Packing {
    coord_scale: f64,
}

impl Packing {
    fn pack(&self, model: &LayeredModel) -> Vec<f64> {
        let mut out = Vec::with_capacity(12 + model.logits.values.len());
        for layer in &model.layers {
            for (c, a) in layer.0.iter().enumerate() {
                out.push(if COUPLED.contains(&c) { a * self.coord_scale } else { *a });
            }
        }
        out.extend_from_slice(&model.logits.values);
        out
    }

    fn unpack(&self, flat: &[f64], model: &mut LayeredModel) {
        for (k, layer) in model.layers.iter_mut().enumerate() {
            for c in 0..6 {
                let v = flat[6 * k + c];
                layer.0[c] = if COUPLED.contains(&c) { v / self.coord_scale } else { v };
            }
        }
        model.logits.values.copy_from_slice(&flat[12..]);
    }

    fn pack_gradient(&self, grad: &crate::objective::ModelGradient, out: &mut Vec<f64>) {
        out.clear();
        for layer in &grad.layers {
            for (c, g) in layer.iter().enumerate() {
                out.push(if COUPLED.contains(&c) { g / self.coord_scale } else { *g });
            }
        }
        out.extend_from_slice(&grad.logits);
    }
}

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    /// The iterate with the lowest total loss.
    pub model: LayeredModel,
    pub best_iteration: usize,
    pub masks: AlphaMasks,
    pub hard_masks: [BinaryMask; LAYERS],
    /// Initial loss followed by one entry per iteration.
    pub loss_trace: Vec<LossBreakdown>,
    pub flow: FlowField,
    pub config: FitConfig,
}

impl SegmentationResult {
    pub fn params(&self, layer: usize) -> AffineParams {
        self.model.layers[layer]
    }

    pub fn initial_loss(&self) -> &LossBreakdown {
        &self.loss_trace[0]
    }

    pub fn final_loss(&self) -> &LossBreakdown {
        self.loss_trace.last().expect("trace is never empty")
    }

    /// Loss of the returned model.
    pub fn best_loss(&self) -> &LossBreakdown {
        &self.loss_trace[self.best_iteration]
    }
}

/// Alpha of a pixel whose logits are the hard pattern (1, 0).
pub fn hard_alpha(activation: &ActivationConfig) -> f64 {
    maxout_pixel(activation.apply(1.0), activation.apply(0.0)).1
}

/// Writes the hard pattern for `labels` into `logits`.
pub fn set_hard_logits(logits: &mut LayerLogits, labels: &[u8]) {
    let n = labels.len();
    for (i, &k) in labels.iter().enumerate() {
        let k = k as usize;
        logits.values[k * n + i] = 1.0;
        logits.values[(1 - k) * n + i] = 0.0;
    }
}

/// Seeded model built around a translation sweep: each layer starts at its
/// swept translation with no coordinate-coupled terms, the logits at the
/// swept assignment plus the seeded logit noise.
pub fn initial_model_from_sweep(
    geometry: crate::event::SensorGeometry,
    cfg: &FitConfig,
    sweep: &MotionSweep,
) -> Result<LayeredModel> {
    let mut model = initial_model(
        geometry,
        &FitConfig {
            init_scale_affine: 0.0,
            init_scale_coupled: 0.0,
            ..*cfg
        },
    )?;
    let alpha = hard_alpha(&cfg.objective.activation);
    for (layer, &(u, v)) in model.layers.iter_mut().zip(&sweep.translations) {
        layer.0[0] = u / alpha;
        layer.0[3] = v / alpha;
    }
    let noise = model.logits.values.clone();
    set_hard_logits(&mut model.logits, &sweep.labels);
    for (l, e) in model.logits.values.iter_mut().zip(noise) {
        *l += e;
    }
    Ok(model)
}

/// Random initial model for `cfg.seed`.
pub fn initial_model(geometry: crate::event::SensorGeometry, cfg: &FitConfig) -> Result<LayeredModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut uniform = |scale: f64| {
        if scale > 0.0 {
            rng.random_range(-scale..scale)
        } else {
            0.0
        }
    };
    let mut layer = || {
        let mut a = [0.0; 6];
        for (c, v) in a.iter_mut().enumerate() {
            *v = uniform(if COUPLED.contains(&c) {
                cfg.init_scale_coupled
            } else {
                cfg.init_scale_affine
            });
        }
        AffineParams(a)
    };
    let (a0, a1) = (layer(), layer());
    let normal = Normal::new(0.0, cfg.init_scale_logits)
        .map_err(|e| Error::InvalidArgument(format!("logit init: {e}")))?;
    let logits = (0..LAYERS * geometry.pixels())
        .map(|_| normal.sample(&mut rng))
        .collect();
    Ok(LayeredModel::new(a0, a1, LayerLogits::new(geometry, logits)?))
}

pub fn fit(events: &EventSlice, cfg: &FitConfig) -> Result<SegmentationResult> {
    fit_with(events, cfg, Execution::default())
}

pub fn fit_with(events: &EventSlice, cfg: &FitConfig, exec: Execution) -> Result<SegmentationResult> {
    let normalized = events.normalize_timestamps()?;
    fit_normalized(&normalized, cfg, exec)
}

/// Runs Adam for `cfg.iterations` steps from the seeded initial model.
pub fn fit_normalized(
    events: &NormalizedEvents,
    cfg: &FitConfig,
    exec: Execution,
) -> Result<SegmentationResult> {
    fit_from_sweep(events, cfg, None, exec)
}

/// As [`fit_normalized`], reusing a precomputed sweep when the strategy
/// needs one.
pub fn fit_from_sweep(
    events: &NormalizedEvents,
    cfg: &FitConfig,
    sweep: Option<&MotionSweep>,
    exec: Execution,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyEvents);
    }
    let g = events.geometry();
    let objective = Objective::new(events, cfg.objective)?.with_execution(exec);
    let mut model = match (cfg.init, sweep) {
        (InitStrategy::Random, _) => initial_model(g, cfg)?,
        (InitStrategy::MotionSweep, Some(s)) => initial_model_from_sweep(g, cfg, s)?,
        (InitStrategy::MotionSweep, None) => {
            let s = sweep_translations(events, &cfg.sweep, exec)?;
            initial_model_from_sweep(g, cfg, &s)?
        }
    };
    let alpha = hard_alpha(&cfg.objective.activation);
    let packing = Packing {
        coord_scale: g.width().max(g.height()) as f64,
    };
    let mut flat = packing.pack(&model);
    let mut adam = Adam::new(flat.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let mut best = None;
    let mut flat_grad = Vec::with_capacity(flat.len());
    for iteration in 0..=cfg.iterations {
        if cfg.reassign_every > 0 && iteration > 0 && iteration % cfg.reassign_every == 0 {
            let flows = model.layer_flows().map(|f| scale_flow(&f, alpha));
            let labels = assign_layers(events, &flows, &cfg.sweep, exec)?;
            set_hard_logits(&mut model.logits, &labels);
            flat[12..].copy_from_slice(&model.logits.values);
        }
        let (loss, grad) = objective.loss_and_gradient(&model)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("{loss:?}"),
            });
        }
        trace.push(loss);
        if best.as_ref().is_none_or(|(_, _, b): &(LayeredModel, usize, f64)| loss.total < *b) {
            best = Some((model.clone(), iteration, loss.total));
        }
        if iteration == cfg.iterations {
            break;
        }
        if !grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: "gradient has non-finite entries".into(),
            });
        }
        packing.pack_gradient(&grad, &mut flat_grad);
        if cfg.reassign_every > 0 {
            flat_grad[12..].fill(0.0);
        }
        adam.step(&mut flat, &flat_grad);
        packing.unpack(&flat, &mut model);
    }
    let (model, best_iteration, _) = best.expect("at least one evaluation");
    let act = cfg.objective.activation;
    let masks = model.masks(&act);
    let hard = hard_masks(&masks);
    let flow = model.combined_flow(&act);
    Ok(SegmentationResult {
        model,
        best_iteration,
        masks,
        hard_masks: hard,
        loss_trace: trace,
        flow,
        config: *cfg,
    })
}

fn scale_flow(f: &FlowField, s: f64) -> FlowField {
    FlowField::new(
        f.geometry(),
        f.u.iter().map(|v| v * s).collect(),
        f.v.iter().map(|v| v * s).collect(),
    )
    .expect("same geometry")
}

/// One fit per seed (seeds run concurrently under a parallel `exec`); returns
/// all results and the index of the lowest best loss. Ties go to the
/// earlier seed.
pub fn fit_best_of(
    events: &EventSlice,
    cfg: &FitConfig,
    seeds: &[u64],
    exec: Execution,
) -> Result<(Vec<SegmentationResult>, usize)> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    cfg.validate()?;
    let normalized = events.normalize_timestamps()?;
    if normalized.is_empty() {
        return Err(Error::EmptyEvents);
    }
    let sweep = match cfg.init {
        InitStrategy::MotionSweep => Some(sweep_translations(&normalized, &cfg.sweep, exec)?),
        InitStrategy::Random => None,
    };
    let results: Vec<SegmentationResult> = exec
        .map(seeds, |&seed| {
            let cfg = FitConfig { seed, ..*cfg };
            fit_from_sweep(&normalized, &cfg, sweep.as_ref(), exec)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let best = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_loss().total.total_cmp(&b.1.best_loss().total))
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok((results, best))
}

/// The layer whose hard mask best overlaps `gt`; ties go to layer 0.
pub fn resolve_foreground(hard: &[BinaryMask; LAYERS], gt: &BinaryMask) -> Result<usize> {
    let i0 = iou(&hard[0], gt)?;
    let i1 = iou(&hard[1], gt)?;
    Ok(if i1 > i0 { 1 } else { 0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleParams {
    pub layer0: AffineParams,
    pub layer1: AffineParams,
    pub seed: u64,
    pub iterations: usize,
    pub best_iteration: usize,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub best_loss: LossBreakdown,
    pub config: FitConfig,
}

pub const MASK_FILES: [&str; LAYERS] = ["mask_layer0.pgm", "mask_layer1.pgm"];
pub const FLOW_FILE: &str = "flow.f32";
pub const LOGITS_FILE: &str = "logits.f32";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const PARAMS_FILE: &str = "params.json";

impl SegmentationResult {
    /// Writes masks, combined flow, logits, loss trace and parameters into
    /// `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        for (mask, name) in self.hard_masks.iter().zip(MASK_FILES) {
            save_mask(mask, &dir.join(name))?;
        }
        self.flow.to_tensor().save(&dir.join(FLOW_FILE))?;
        let g = self.model.geometry();
        Tensor::new(
            vec![LAYERS, g.height(), g.width()],
            self.model.logits.values.iter().map(|&v| v as f32).collect(),
        )?
        .save(&dir.join(LOGITS_FILE))?;
        let mut csv = String::from("iteration,contrast_fw,contrast_bw,smoothness,total\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                l.contrast_fw, l.contrast_bw, l.smoothness, l.total
            ));
        }
        write_file(&dir.join(TRACE_FILE), csv.as_bytes())?;
        let params = BundleParams {
            layer0: self.params(0),
            layer1: self.params(1),
            seed: self.config.seed,
            iterations: self.config.iterations,
            best_iteration: self.best_iteration,
            initial_loss: *self.initial_loss(),
            final_loss: *self.final_loss(),
            best_loss: *self.best_loss(),
            config: self.config,
        };
        let json = serde_json::to_string_pretty(&params).expect("params serialize");
        write_file(&dir.join(PARAMS_FILE), json.as_bytes())
    }
}

/// Reads the two hard masks of a result bundle.
pub fn read_bundle_masks(dir: &Path) -> Result<[BinaryMask; LAYERS]> {
    let m0 = crate::io::load_mask(&dir.join(MASK_FILES[0]))?;
    let m1 = crate::io::load_mask(&dir.join(MASK_FILES[1]))?;
    if m0.geometry() != m1.geometry() {
        return Err(Error::shape(m0.geometry(), m1.geometry()));
    }
    Ok([m0, m1])
}

pub fn read_bundle_params(dir: &Path) -> Result<BundleParams> {
    let path = dir.join(PARAMS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}
