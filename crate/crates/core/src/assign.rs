//! Hard layer assignment from event alignment, and translation sweeps used
//! to initialize the fitter.
//!
//! Each pixel is scored by how densely its events land in the image of warped
//! event counts produced by a candidate flow. Scores are box-pooled so that
//! sparse pixels borrow evidence from their neighbours.

use serde::{Deserialize, Serialize};

use crate::affine::FlowField;
use crate::error::{Error, Result};
use crate::event::{NormalizedEvents, SensorGeometry};
use crate::exec::Execution;
use crate::layers::LAYERS;
use crate::objective::{flow_contrast, T_REF_BACKWARD, T_REF_FORWARD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Half-width of the searched translation square in pixels. `None` uses
    /// an eighth of the larger sensor side.
    pub range: Option<f64>,
    /// Grid points per axis of the coarse pass.
    pub points: usize,
    /// Refinement stops once the grid step falls below this many pixels.
    pub min_step: f64,
    /// Half-width and step of the final local search of the first
    /// translation on the contrast loss itself.
    pub polish_radius: f64,
    pub polish_step: f64,
    /// Radius of the box filter applied to per-pixel score differences.
    pub pool_radius: usize,
    /// The second layer claims pixels only when its pooled support exceeds
    /// this share of the first layer's total landing score.
    pub min_relative_gain: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            range: None,
            points: 17,
            min_step: 0.5,
            polish_radius: 1.0,
            polish_step: 0.25,
            pool_radius: 2,
            min_relative_gain: 0.3,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = self.range.is_none_or(|r| r > 0.0 && r.is_finite());
        if !(range_ok && self.points >= 2 && self.min_step > 0.0 && self.polish_radius >= 0.0 && self.polish_step > 0.0 && self.min_relative_gain >= 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "invalid sweep configuration: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn range_for(&self, geometry: SensorGeometry) -> f64 {
        self.range
            .unwrap_or(geometry.width().max(geometry.height()) as f64 / 8.0)
    }
}

/// Per pixel, the summed density at which that pixel's events land in the
/// bilinear count image of all warped events, over both reference times.
/// Each event's own splat is left out, so stacking an event on itself earns
/// nothing.
pub fn landing_scores(events: &NormalizedEvents, flow: &FlowField, exec: Execution) -> Result<Vec<f64>> {
    let g = events.geometry();
    if flow.geometry() != g {
        return Err(Error::shape(g, flow.geometry()));
    }
    Ok(landing_scores_by(events, |x, y| flow.at(x, y), exec))
}

/// [`landing_scores`] for the constant flow `(u, v)`.
pub fn translation_scores(events: &NormalizedEvents, (u, v): (f64, f64), exec: Execution) -> Vec<f64> {
    landing_scores_by(events, |_, _| (u, v), exec)
}

fn landing_scores_by(
    events: &NormalizedEvents,
    flow_at: impl Fn(usize, usize) -> (f64, f64) + Sync,
    exec: Execution,
) -> Vec<f64> {
    let g = events.geometry();
    let mut score = vec![0.0; g.pixels()];
    let mut counts = vec![0.0; g.pixels()];
    for t_ref in [T_REF_FORWARD, T_REF_BACKWARD] {
        let landed: Vec<(f64, f64)> = exec.map(events.events(), |e| {
            let (u, v) = flow_at(e.x as usize, e.y as usize);
            let d = t_ref - e.t;
            (e.x as f64 + d * u, e.y as f64 + d * v)
        });
        counts.fill(0.0);
        for &(x, y) in &landed {
            for_each_corner(g, x, y, |i, w| counts[i] += w);
        }
        let density = exec.map(&landed, |&(x, y)| {
            let (mut others, mut own) = (0.0, 0.0);
            for_each_corner(g, x, y, |i, w| {
                others += w * counts[i];
                own += w * w;
            });
            others - own
        });
        for (e, d) in events.events().iter().zip(density) {
            score[g.index(e.x as usize, e.y as usize)] += d;
        }
    }
    score
}

/// Calls `f(pixel, weight)` for each in-bounds bilinear corner of `(x, y)`.
#[inline]
fn for_each_corner(g: SensorGeometry, x: f64, y: f64, mut f: impl FnMut(usize, f64)) {
    if !(x.is_finite() && y.is_finite()) {
        return;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (cx, cy) = (x0 + dx, y0 + dy);
            if cx >= 0.0 && cy >= 0.0 && cx < g.width() as f64 && cy < g.height() as f64 {
                f(g.index(cx as usize, cy as usize), wx * wy);
            }
        }
    }
}

/// Box sum over a `(2r+1)²` window, clipped at the border.
pub fn box_pool(g: SensorGeometry, values: &[f64], radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let (w, h) = (g.width(), g.height());
    // integral image with a zero border row and column
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let at = |x: usize, y: usize| integral[y * (w + 1) + x];
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            out[y * w + x] = at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
        }
    }
    out
}

/// Labels from a pooled preference `d` (positive favours layer 1). Pixels
/// with no evidence copy the majority of their labelled 4-neighbours,
/// repeatedly; anything still unreached goes to layer 0.
pub fn labels_from_preference(g: SensorGeometry, d: &[f64]) -> Vec<u8> {
    const UNSET: u8 = u8::MAX;
    let (w, h) = (g.width(), g.height());
    let mut labels: Vec<u8> = d
        .iter()
        .map(|&v| match v.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => 0,
            _ => UNSET,
        })
        .collect();
    loop {
        let prev = labels.clone();
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev[i] != UNSET {
                    continue;
                }
                let mut votes = [0usize; 2];
                let mut vote = |j: usize| {
                    if prev[j] != UNSET {
                        votes[prev[j] as usize] += 1;
                    }
                };
                if x > 0 {
                    vote(i - 1);
                }
                if x + 1 < w {
                    vote(i + 1);
                }
                if y > 0 {
                    vote(i - w);
                }
                if y + 1 < h {
                    vote(i + w);
                }
                if votes[0] + votes[1] > 0 {
                    labels[i] = u8::from(votes[1] > votes[0]);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for l in &mut labels {
        if *l == UNSET {
            *l = 0;
        }
    }
    labels
}

/// Pooled preference for the second score over the first, its total
/// positive part, and the first score's total.
fn pooled_preference(g: SensorGeometry, base: &[f64], other: &[f64], radius: usize) -> (Vec<f64>, f64, f64) {
    let diff: Vec<f64> = other.iter().zip(base).map(|(a, b)| a - b).collect();
    let pooled = box_pool(g, &diff, radius);
    let gain = pooled.iter().map(|d| d.max(0.0)).sum();
    (pooled, gain, base.iter().sum())
}

fn labels_if_significant(g: SensorGeometry, pooled: &[f64], gain: f64, base: f64, cfg: &SweepConfig) -> Vec<u8> {
    if gain > cfg.min_relative_gain * base {
        labels_from_preference(g, pooled)
    } else {
        vec![0; g.pixels()]
    }
}

/// Hard labels choosing, per pixel, the flow whose warped events align
/// better around it. Everything stays on layer 0 unless layer 1 gains
/// enough support overall.
pub fn assign_layers(
    events: &NormalizedEvents,
    flows: &[FlowField; LAYERS],
    cfg: &SweepConfig,
    exec: Execution,
) -> Result<Vec<u8>> {
    let g = events.geometry();
    let s0 = landing_scores(events, &flows[0], exec)?;
    let s1 = landing_scores(events, &flows[1], exec)?;
    let (pooled, gain, base) = pooled_preference(g, &s0, &s1, cfg.pool_radius);
    Ok(labels_if_significant(g, &pooled, gain, base, cfg))
}

/// Coarse-to-fine grid search over translations `(u, v)` in
/// `[-range, range]²`, minimizing `cost`. Each refinement halves the step
/// around the incumbent. Ties keep the earlier candidate in row-major order.
pub fn grid_search(
    range: f64,
    points: usize,
    min_step: f64,
    exec: Execution,
    cost: impl Fn(f64, f64) -> Result<f64> + Sync,
) -> Result<((f64, f64), f64)> {
    let mut step = 2.0 * range / (points - 1) as f64;
    let mut candidates: Vec<(f64, f64)> = (0..points)
        .flat_map(|iy| {
            (0..points).map(move |ix| (-range + ix as f64 * step, -range + iy as f64 * step))
        })
        .collect();
    let mut best: Option<((f64, f64), f64)> = None;
    loop {
        let costs = exec.map(&candidates, |&(u, v)| cost(u, v));
        for (c, k) in candidates.iter().zip(costs) {
            let k = k?;
            if best.is_none_or(|(_, b)| k < b) {
                best = Some((*c, k));
            }
        }
        step /= 2.0;
        if step < min_step {
            break;
        }
        let (cu, cv) = best.expect("non-empty grid").0;
        candidates = [-1.0, 0.0, 1.0]
            .iter()
            .flat_map(|&dy| [-1.0, 0.0, 1.0].map(|dx| (cu + dx * step, cv + dy * step)))
            .filter(|&(u, v)| (u, v) != (cu, cv))
            .collect();
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSweep {
    /// Full-window translation of each layer's region.
    pub translations: [(f64, f64); LAYERS],
    pub labels: Vec<u8>,
    /// Pooled support gained by the second translation.
    pub gain: f64,
    /// Total landing score of the first translation.
    pub base_score: f64,
}

/// Best constant flow on the default contrast loss within a small square
/// around `start`. Ties keep `start`, then the earlier row-major candidate.
fn polish(events: &NormalizedEvents, start: (f64, f64), cfg: &SweepConfig, exec: Execution) -> Result<(f64, f64)> {
    let g = events.geometry();
    let k = (cfg.polish_radius / cfg.polish_step).floor() as i64;
    let offsets: Vec<(f64, f64)> = (-k..=k)
        .flat_map(|j| (-k..=k).map(move |i| (i as f64 * cfg.polish_step, j as f64 * cfg.polish_step)))
        .collect();
    let costs = exec.map(&offsets, |&(du, dv)| {
        let flow = FlowField::constant(g, start.0 + du, start.1 + dv);
        flow_contrast(events, &flow).map(|(fw, bw)| fw + bw)
    });
    let mut best = (start, f64::INFINITY);
    for (&(du, dv), c) in offsets.iter().zip(costs) {
        let c = c?;
        let is_start = du == 0.0 && dv == 0.0;
        if c < best.1 || (c == best.1 && is_start) {
            best = ((start.0 + du, start.1 + dv), c);
        }
    }
    Ok(best.0)
}

/// Dominant translation first (densest overall alignment), then the
/// translation whose aligned events gain the most pooled support over it.
/// The starting labels follow [`assign_layers`].
pub fn sweep_translations(events: &NormalizedEvents, cfg: &SweepConfig, exec: Execution) -> Result<MotionSweep> {
    cfg.validate()?;
    let g = events.geometry();
    let range = cfg.range_for(g);
    let inner = Execution::Sequential;
    let (coarse, _) = grid_search(range, cfg.points, cfg.min_step, exec, |u, v| {
        Ok(-translation_scores(events, (u, v), inner).iter().sum::<f64>())
    })?;
    let t0 = polish(events, coarse, cfg, exec)?;
    let base = translation_scores(events, t0, exec);
    let (t1, _) = grid_search(range, cfg.points, cfg.min_step, exec, |u, v| {
        let s = translation_scores(events, (u, v), inner);
        Ok(-pooled_preference(g, &base, &s, cfg.pool_radius).1)
    })?;
    let s1 = translation_scores(events, t1, exec);
    let (pooled, gain, base_score) = pooled_preference(g, &base, &s1, cfg.pool_radius);
    Ok(MotionSweep {
        translations: [t0, t1],
        labels: labels_if_significant(g, &pooled, gain, base_score, cfg),
        gain,
        base_score,
    })
}
