//! Motion-compensation objective: warp events along the combined flow, build
//! per-polarity average-timestamp images, and score how well the warp
//! re-aligns them. Also provides the reverse-mode gradient of the total loss
//! with respect to both affine models and the logit grid.
//!
//! Conventions:
//! - timestamps are normalized to `[0, 1]`; the forward warp targets
//!   `t_ref = 1`, the backward warp `t_ref = 0`;
//! - flow is sampled at the event's own integer pixel;
//! - splat contributions outside the image are dropped;
//! - the occupied-pixel count in the contrast denominator is held constant
//!   when differentiating.

use serde::{Deserialize, Serialize};

use crate::affine::{affine_flow, AffineParams, FlowField};
use crate::error::{Error, Result};
use crate::event::{NormalizedEvents, Polarity, SensorGeometry};
use crate::exec::Execution;
use crate::layers::{maxout_pixel, ActivationConfig, AlphaMasks, LayerLogits, LAYERS};

pub const T_REF_FORWARD: f64 = 1.0;
pub const T_REF_BACKWARD: f64 = 0.0;
pub const DEFAULT_LAMBDA: f64 = 0.001;
pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-3;

/// Which flow the Charbonnier prior is evaluated on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothnessTarget {
    /// The masked, combined flow.
    #[default]
    Combined,
    /// Sum over the two per-layer affine flows.
    PerLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub activation: ActivationConfig,
    /// Guard in the average-timestamp and contrast denominators.
    pub epsilon: f64,
    /// Splatted mass above which a pixel counts as occupied.
    pub occupancy_threshold: f64,
    pub charbonnier_eps: f64,
    pub smoothness_target: SmoothnessTarget,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            activation: ActivationConfig::default(),
            epsilon: DEFAULT_EPSILON,
            occupancy_threshold: DEFAULT_EPSILON,
            charbonnier_eps: DEFAULT_CHARBONNIER_EPS,
            smoothness_target: SmoothnessTarget::Combined,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        let ok = self.lambda.is_finite()
            && self.lambda >= 0.0
            && self.epsilon > 0.0
            && self.occupancy_threshold >= 0.0
            && self.charbonnier_eps > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "invalid objective configuration: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Two affine motion models plus the per-pixel layer scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredModel {
    pub layers: [AffineParams; LAYERS],
    pub logits: LayerLogits,
}

impl LayeredModel {
    pub fn new(layer0: AffineParams, layer1: AffineParams, logits: LayerLogits) -> Self {
        Self {
            layers: [layer0, layer1],
            logits,
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.logits.geometry()
    }

    /// Alpha masks after activation, softmax and maxout.
    pub fn masks(&self, activation: &ActivationConfig) -> AlphaMasks {
        crate::layers::softmax_maxout(&crate::layers::apply_activation(&self.logits, activation))
    }

    pub fn layer_flows(&self) -> [FlowField; LAYERS] {
        let g = self.geometry();
        [affine_flow(&self.layers[0], g), affine_flow(&self.layers[1], g)]
    }

    pub fn combined_flow(&self, activation: &ActivationConfig) -> FlowField {
        let [w0, w1] = self.layer_flows();
        crate::layers::compose_flow(&self.masks(activation), &w0, &w1)
            .expect("layer flows share the model geometry")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub layers: [[f64; 6]; LAYERS],
    /// Layer-major like [`LayerLogits::values`].
    pub logits: Vec<f64>,
}

impl ModelGradient {
    pub fn zeros(geometry: SensorGeometry) -> Self {
        Self {
            layers: [[0.0; 6]; LAYERS],
            logits: vec![0.0; LAYERS * geometry.pixels()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().chain(&self.logits).all(|g| g.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrast_fw: f64,
    pub contrast_bw: f64,
    pub smoothness: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    fn new(contrast_fw: f64, contrast_bw: f64, smoothness: f64, lambda: f64) -> Self {
        Self {
            contrast_fw,
            contrast_bw,
            smoothness,
            total: contrast_fw + contrast_bw + lambda * smoothness,
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.contrast_fw, self.contrast_bw, self.smoothness, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Event positions propagated to a reference time.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedEvents {
    pub t_ref: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub polarity: Vec<Polarity>,
}

impl WarpedEvents {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `x' = x + (t_ref - t) * flow(x)`.
pub fn warp_events(events: &NormalizedEvents, flow: &FlowField, t_ref: f64) -> Result<WarpedEvents> {
    let g = events.geometry();
    if flow.geometry() != g {
        return Err(Error::shape(g, flow.geometry()));
    }
    let n = events.len();
    let mut out = WarpedEvents {
        t_ref,
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        polarity: Vec::with_capacity(n),
    };
    for e in events.events() {
        let (u, v) = flow.at(e.x as usize, e.y as usize);
        let d = t_ref - e.t;
        out.x.push(e.x as f64 + d * u);
        out.y.push(e.y as f64 + d * v);
        out.t.push(e.t);
        out.polarity.push(e.p);
    }
    Ok(out)
}

/// Per-polarity average-timestamp images. Index 0 is positive polarity,
/// index 1 negative.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestampImages {
    geometry: SensorGeometry,
    pub t_plus: Vec<f64>,
    pub t_minus: Vec<f64>,
    /// Splatted mass per pixel, both polarities.
    pub occupancy: Vec<f64>,
    /// Splatted mass per polarity.
    pub weight: [Vec<f64>; 2],
    epsilon: f64,
}

impl TimestampImages {
    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn average(&self, polarity: usize) -> &[f64] {
        if polarity == 0 {
            &self.t_plus
        } else {
            &self.t_minus
        }
    }

    /// Number of pixels with occupancy above `threshold`.
    pub fn occupied(&self, threshold: f64) -> usize {
        self.occupancy.iter().filter(|&&o| o > threshold).count()
    }

    /// Occupancy scaled to 0..=255 by its maximum.
    pub fn occupancy_u8(&self) -> Vec<u8> {
        to_u8(&self.occupancy)
    }
}

/// Scales non-negative values to 0..=255 by their maximum.
pub fn to_u8(values: &[f64]) -> Vec<u8> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| (v.max(0.0) / max * 255.0).round() as u8)
        .collect()
}

#[inline]
fn polarity_index(p: Polarity) -> usize {
    match p {
        Polarity::Positive => 0,
        Polarity::Negative => 1,
    }
}

/// Fixed chunking so accumulation order depends only on the event count.
fn splat_chunk_len(n: usize) -> usize {
    n.div_ceil(16).max(8192)
}

/// Visits the in-bounds bilinear neighbours of `(x, y)`: pixel index, weight,
/// d weight / dx, d weight / dy.
#[inline]
fn for_each_corner(g: SensorGeometry, x: f64, y: f64, mut f: impl FnMut(usize, f64, f64, f64)) {
    if !(x.is_finite() && y.is_finite()) {
        return;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (w, h) = (g.width() as f64, g.height() as f64);
    if x0 < -1.0 || y0 < -1.0 || x0 >= w || y0 >= h {
        return;
    }
    let (xi, yi) = (x0 as i64, y0 as i64);
    let xs = [(xi, 1.0 - fx, -1.0), (xi + 1, fx, 1.0)];
    let ys = [(yi, 1.0 - fy, -1.0), (yi + 1, fy, 1.0)];
    for &(cy, wy, sy) in &ys {
        if cy < 0 || cy >= g.height() as i64 {
            continue;
        }
        for &(cx, wx, sx) in &xs {
            if cx < 0 || cx >= g.width() as i64 {
                continue;
            }
            f(g.index(cx as usize, cy as usize), wx * wy, sx * wy, wx * sy);
        }
    }
}

pub fn timestamp_images(warped: &WarpedEvents, geometry: SensorGeometry) -> TimestampImages {
    timestamp_images_with(warped, geometry, DEFAULT_EPSILON, Execution::default())
}

pub fn timestamp_images_with(
    warped: &WarpedEvents,
    geometry: SensorGeometry,
    epsilon: f64,
    exec: Execution,
) -> TimestampImages {
    let n = warped.len();
    let npix = geometry.pixels();
    let chunk = splat_chunk_len(n);
    let chunks = n.div_ceil(chunk);
    // planes: [num+, den+, num-, den-]
    let partial: Vec<Vec<f64>> = exec.map_range(chunks, |c| {
        let mut acc = vec![0.0; 4 * npix];
        let end = ((c + 1) * chunk).min(n);
        for i in c * chunk..end {
            let base = 2 * polarity_index(warped.polarity[i]) * npix;
            let t = warped.t[i];
            for_each_corner(geometry, warped.x[i], warped.y[i], |pix, w, _, _| {
                acc[base + pix] += w * t;
                acc[base + npix + pix] += w;
            });
        }
        acc
    });
    let mut acc = vec![0.0; 4 * npix];
    exec.for_each_chunk(&mut acc, 4096, |ci, out| {
        let start = ci * 4096;
        for (k, o) in out.iter_mut().enumerate() {
            *o = partial.iter().map(|p| p[start + k]).sum();
        }
    });
    let plane = |k: usize| &acc[k * npix..(k + 1) * npix];
    let average = |num: &[f64], den: &[f64]| -> Vec<f64> {
        num.iter().zip(den).map(|(a, b)| a / (b + epsilon)).collect()
    };
    let t_plus = average(plane(0), plane(1));
    let t_minus = average(plane(2), plane(3));
    let occupancy = plane(1).iter().zip(plane(3)).map(|(a, b)| a + b).collect();
    TimestampImages {
        geometry,
        t_plus,
        t_minus,
        occupancy,
        weight: [plane(1).to_vec(), plane(3).to_vec()],
        epsilon,
    }
}

/// Sum of squared average timestamps over the number of occupied pixels.
pub fn contrast_loss(images: &TimestampImages) -> f64 {
    contrast_loss_with(images, DEFAULT_EPSILON, DEFAULT_EPSILON)
}

pub fn contrast_loss_with(images: &TimestampImages, epsilon: f64, occupancy_threshold: f64) -> f64 {
    let sq: f64 = images
        .t_plus
        .iter()
        .zip(&images.t_minus)
        .map(|(a, b)| a * a + b * b)
        .sum();
    sq / (images.occupied(occupancy_threshold) as f64 + epsilon)
}

/// Mean Charbonnier penalty `sqrt(d² + eps²)` over all 4-connected neighbour
/// differences of both flow components.
pub fn smoothness(flow: &FlowField, eps: f64) -> f64 {
    let g = flow.geometry();
    charbonnier_smoothness(&flow.u, &flow.v, g.width(), g.height(), eps)
}

/// [`smoothness`] on raw planes of any size. Returns 0 when there are no
/// neighbour pairs.
pub fn charbonnier_smoothness(u: &[f64], v: &[f64], width: usize, height: usize, eps: f64) -> f64 {
    charbonnier_inner(u, v, width, height, eps, None)
}

fn charbonnier_inner(
    u: &[f64],
    v: &[f64],
    width: usize,
    height: usize,
    eps: f64,
    mut grad: Option<(&mut [f64], &mut [f64], f64)>,
) -> f64 {
    let pairs = height * width.saturating_sub(1) + height.saturating_sub(1) * width;
    if pairs == 0 {
        return 0.0;
    }
    let norm = 1.0 / (2 * pairs) as f64;
    let eps2 = eps * eps;
    let mut sum = 0.0;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut visit = |j: usize, sum: &mut f64| {
                for (plane, c) in [(u, 0usize), (v, 1usize)] {
                    let d = plane[i] - plane[j];
                    let r = (d * d + eps2).sqrt();
                    *sum += r;
                    if let Some((gu, gv, scale)) = grad.as_mut() {
                        let gd = *scale * norm * d / r;
                        let g = if c == 0 { &mut **gu } else { &mut **gv };
                        g[i] += gd;
                        g[j] -= gd;
                    }
                }
            };
            if x + 1 < width {
                visit(i + 1, &mut sum);
            }
            if y + 1 < height {
                visit(i + width, &mut sum);
            }
        }
    }
    sum * norm
}

/// Loss and gradient evaluator bound to one event window.
pub struct Objective<'a> {
    events: &'a NormalizedEvents,
    cfg: ObjectiveConfig,
    exec: Execution,
}

/// Intermediate values of one forward pass.
struct Forward {
    flows: [FlowField; LAYERS],
    /// Winning layer and its alpha, per pixel.
    winners: Vec<(u8, f64)>,
    combined: FlowField,
    warps: [(WarpedEvents, TimestampImages, f64); 2],
    loss: LossBreakdown,
}

impl<'a> Objective<'a> {
    pub fn new(events: &'a NormalizedEvents, cfg: ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            events,
            cfg,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    fn check(&self, model: &LayeredModel) -> Result<()> {
        if model.geometry() != self.events.geometry() {
            return Err(Error::shape(self.events.geometry(), model.geometry()));
        }
        Ok(())
    }

    fn forward(&self, model: &LayeredModel) -> Result<Forward> {
        self.check(model)?;
        let g = model.geometry();
        let n = g.pixels();
        let act = self.cfg.activation;
        let flows = model.layer_flows();
        let logits = &model.logits.values;
        let winners: Vec<(u8, f64)> = (0..n)
            .map(|i| {
                let (k, s) = maxout_pixel(act.apply(logits[i]), act.apply(logits[n + i]));
                (k as u8, s)
            })
            .collect();
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, &(k, s)) in winners.iter().enumerate() {
            let f = &flows[k as usize];
            u.push(s * f.u[i]);
            v.push(s * f.v[i]);
        }
        let combined = FlowField::new(g, u, v)?;
        let warp = |t_ref: f64| -> Result<(WarpedEvents, TimestampImages, f64)> {
            let w = warp_events(self.events, &combined, t_ref)?;
            let img = timestamp_images_with(&w, g, self.cfg.epsilon, self.exec);
            let c = contrast_loss_with(&img, self.cfg.epsilon, self.cfg.occupancy_threshold);
            Ok((w, img, c))
        };
        let fw = warp(T_REF_FORWARD)?;
        let bw = warp(T_REF_BACKWARD)?;
        let eps_c = self.cfg.charbonnier_eps;
        let smooth = match self.cfg.smoothness_target {
            SmoothnessTarget::Combined => smoothness(&combined, eps_c),
            SmoothnessTarget::PerLayer => {
                smoothness(&flows[0], eps_c) + smoothness(&flows[1], eps_c)
            }
        };
        let loss = LossBreakdown::new(fw.2, bw.2, smooth, self.cfg.lambda);
        Ok(Forward {
            flows,
            winners,
            combined,
            warps: [fw, bw],
            loss,
        })
    }

    pub fn loss(&self, model: &LayeredModel) -> Result<LossBreakdown> {
        Ok(self.forward(model)?.loss)
    }

    /// Loss plus its gradient with respect to every model parameter.
    pub fn loss_and_gradient(&self, model: &LayeredModel) -> Result<(LossBreakdown, ModelGradient)> {
        let fwd = self.forward(model)?;
        let g = model.geometry();
        let n = g.pixels();
        let width = g.width();
        let eps = self.cfg.epsilon;

        // d loss / d combined flow
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        for (warped, img, _) in &fwd.warps {
            let count = img.occupied(self.cfg.occupancy_threshold) as f64 + eps;
            // per polarity: (d/d numerator, d/d denominator) per pixel
            let adj: [Vec<(f64, f64)>; 2] = [0, 1].map(|p| {
                img.average(p)
                    .iter()
                    .zip(&img.weight[p])
                    .map(|(&t, &w)| {
                        let gt = 2.0 * t / count;
                        let inv = 1.0 / (w + eps);
                        (gt * inv, -gt * t * inv)
                    })
                    .collect()
            });
            let per_event: Vec<(f64, f64)> = self.exec.map_range(warped.len(), |i| {
                let a = &adj[polarity_index(warped.polarity[i])];
                let t = warped.t[i];
                let (mut gx, mut gy) = (0.0, 0.0);
                for_each_corner(g, warped.x[i], warped.y[i], |pix, _, dwx, dwy| {
                    let (gn, gd) = a[pix];
                    let s = gn * t + gd;
                    gx += s * dwx;
                    gy += s * dwy;
                });
                (gx, gy)
            });
            for (e, (gx, gy)) in self.events.events().iter().zip(per_event) {
                let pix = g.index(e.x as usize, e.y as usize);
                let d = warped.t_ref - e.t;
                gu[pix] += gx * d;
                gv[pix] += gy * d;
            }
        }

        let lambda = self.cfg.lambda;
        let eps_c = self.cfg.charbonnier_eps;
        let (w, h) = (g.width(), g.height());
        // per-layer flow gradients from the PerLayer prior
        let mut layer_flow_grad: Option<[(Vec<f64>, Vec<f64>); 2]> = None;
        match self.cfg.smoothness_target {
            SmoothnessTarget::Combined => {
                charbonnier_inner(
                    &fwd.combined.u,
                    &fwd.combined.v,
                    w,
                    h,
                    eps_c,
                    Some((&mut gu, &mut gv, lambda)),
                );
            }
            SmoothnessTarget::PerLayer => {
                let grads = [0, 1].map(|k| {
                    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
                    let f = &fwd.flows[k];
                    charbonnier_inner(&f.u, &f.v, w, h, eps_c, Some((&mut a, &mut b, lambda)));
                    (a, b)
                });
                layer_flow_grad = Some(grads);
            }
        }

        let act = self.cfg.activation;
        let logits = &model.logits.values;
        let mut grad = ModelGradient::zeros(g);
        // rows in parallel, then a fixed-order sum over rows
        let rows: Vec<([[f64; 6]; 2], Vec<(f64, f64)>)> = self.exec.map_range(h, |y| {
            let mut acc = [[0.0; 6]; 2];
            let mut glog = Vec::with_capacity(width);
            for x in 0..width {
                let i = y * width + x;
                let (k, s) = fwd.winners[i];
                let k = k as usize;
                let f = &fwd.flows[k];
                let galpha = gu[i] * f.u[i] + gv[i] * f.v[i];
                let (xf, yf) = (x as f64, y as f64);
                let mut add = |layer: usize, cu: f64, cv: f64| {
                    let a = &mut acc[layer];
                    a[0] += cu;
                    a[1] += cu * xf;
                    a[2] += cu * yf;
                    a[3] += cv;
                    a[4] += cv * xf;
                    a[5] += cv * yf;
                };
                add(k, s * gu[i], s * gv[i]);
                if let Some(lg) = &layer_flow_grad {
                    for (layer, (a, b)) in lg.iter().enumerate() {
                        add(layer, a[i], b[i]);
                    }
                }
                let gz = galpha * s * (1.0 - s);
                let (gz0, gz1) = if k == 0 { (gz, -gz) } else { (-gz, gz) };
                glog.push((
                    gz0 * act.derivative(logits[i]),
                    gz1 * act.derivative(logits[n + i]),
                ));
            }
            (acc, glog)
        });
        for (y, (acc, glog)) in rows.into_iter().enumerate() {
            for layer in 0..LAYERS {
                for c in 0..6 {
                    grad.layers[layer][c] += acc[layer][c];
                }
            }
            for (x, (g0, g1)) in glog.into_iter().enumerate() {
                let i = y * width + x;
                grad.logits[i] = g0;
                grad.logits[n + i] = g1;
            }
        }
        Ok((fwd.loss, grad))
    }

    /// The masked, combined flow of `model`.
    pub fn combined_flow(&self, model: &LayeredModel) -> Result<FlowField> {
        Ok(self.forward(model)?.combined)
    }
}

pub fn total_loss(
    events: &NormalizedEvents,
    model: &LayeredModel,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    Objective::new(events, *cfg)?.loss(model)
}

pub fn loss_gradient(
    events: &NormalizedEvents,
    model: &LayeredModel,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, ModelGradient)> {
    Objective::new(events, *cfg)?.loss_and_gradient(model)
}

/// Contrast loss (forward + backward, no prior) of a fixed flow field.
pub fn flow_contrast(events: &NormalizedEvents, flow: &FlowField) -> Result<(f64, f64)> {
    let g = events.geometry();
    let fw = timestamp_images(&warp_events(events, flow, T_REF_FORWARD)?, g);
    let bw = timestamp_images(&warp_events(events, flow, T_REF_BACKWARD)?, g);
    Ok((contrast_loss(&fw), contrast_loss(&bw)))
}
