//! Fixed-step 2D event renderer for layered scenes under affine motion.
//!
//! Each layer is a grayscale image placed on the sensor and moved by an
//! affine flow: a point at sensor position `p` at time 0 sits at
//! `p + τ W(p)` at normalized time `τ = t / duration`. Frames are composited
//! alpha-over and converted to log intensity; every pixel emits an event
//! whenever its log intensity moves a full contrast threshold away from its
//! last reference level.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{AffineParams, FlowField};
use crate::error::{Error, Result};
use crate::event::{Event, EventSlice, Polarity, SensorGeometry};
use crate::exec::Execution;
use crate::io::{save_events, save_mask, EventFormat};
use crate::metrics::BinaryMask;

/// Row-major grayscale plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> f64 {
        self.data[y as usize * self.width + x as usize]
    }

    /// Bilinear sample with clamp-to-edge addressing.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xc.floor() as i64, yc.floor() as i64);
        let (x1, y1) = (
            (x0 + 1).min(self.width as i64 - 1),
            (y0 + 1).min(self.height as i64 - 1),
        );
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear sample; texels outside the plane read as zero.
    pub fn sample_zero(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        if x0 < -1.0 || y0 < -1.0 || x0 >= self.width as f64 || y0 >= self.height as f64 {
            return 0.0;
        }
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as i64, y0 as i64);
        let get = |cx: i64, cy: i64| {
            if cx < 0 || cy < 0 || cx >= self.width as i64 || cy >= self.height as i64 {
                0.0
            } else {
                self.at(cx, cy)
            }
        };
        let top = get(xi, yi) * (1.0 - fx) + get(xi + 1, yi) * fx;
        let bottom = get(xi, yi + 1) * (1.0 - fx) + get(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Multi-octave value noise in `[lo, hi]` with features of roughly
    /// `cell` pixels. `gain > 0` pushes values toward the extremes through a
    /// logistic curve, giving blob-like regions with sharp edges.
    pub fn value_noise(
        width: usize,
        height: usize,
        cell: f64,
        gain: f64,
        lo: f64,
        hi: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves = [(cell, 1.0), (cell / 2.0, 0.5), (cell / 4.0, 0.25)];
        let lattices: Vec<(f64, f64, Plane)> = octaves
            .iter()
            .filter(|(c, _)| *c >= 1.0)
            .map(|&(c, amp)| {
                let lw = (width as f64 / c).ceil() as usize + 2;
                let lh = (height as f64 / c).ceil() as usize + 2;
                let data = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
                (
                    c,
                    amp,
                    Plane {
                        width: lw,
                        height: lh,
                        data,
                    },
                )
            })
            .collect();
        let total: f64 = lattices.iter().map(|l| l.1).sum();
        let smooth = |a: f64| a * a * (3.0 - 2.0 * a);
        let mut raw = Plane::from_fn(width, height, |x, y| {
            lattices
                .iter()
                .map(|(c, amp, lat)| {
                    let (gx, gy) = (x as f64 / c, y as f64 / c);
                    let (x0, y0) = (gx.floor(), gy.floor());
                    let (sx, sy) = (smooth(gx - x0), smooth(gy - y0));
                    let (xi, yi) = (x0 as i64, y0 as i64);
                    let top = lat.at(xi, yi) * (1.0 - sx) + lat.at(xi + 1, yi) * sx;
                    let bot = lat.at(xi, yi + 1) * (1.0 - sx) + lat.at(xi + 1, yi + 1) * sx;
                    amp * (top * (1.0 - sy) + bot * sy)
                })
                .sum::<f64>()
                / total
        });
        let (mn, mx) = raw
            .data
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let span = (mx - mn).max(1e-12);
        let curve = |n: f64| {
            if gain > 0.0 {
                let f = |a: f64| 1.0 / (1.0 + (-gain * (a - 0.5)).exp());
                (f(n) - f(0.0)) / (f(1.0) - f(0.0))
            } else {
                n
            }
        };
        for v in &mut raw.data {
            *v = lo + (hi - lo) * curve((*v - mn) / span);
        }
        raw
    }

    /// Loads an 8-bit image, mapping 0..=255 into `[floor, 1]` so the log
    /// intensity stays finite.
    pub fn load(path: &Path, floor: f64) -> Result<Self> {
        let img = crate::io::load_gray(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img
            .as_raw()
            .iter()
            .map(|&v| floor + (1.0 - floor) * v as f64 / 255.0)
            .collect();
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

/// Affine motion over the whole sequence: a point at `p` at time 0 is at
/// `p + τ W(p)` at normalized time `τ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(pub AffineParams);

impl Trajectory {
    /// Position at time 0 of the point that sits at `(qx, qy)` at time `tau`.
    #[inline]
    pub fn source(&self, qx: f64, qy: f64, tau: f64) -> (f64, f64) {
        let a = &self.0 .0;
        // (I + τM) p = q - τ b
        let (m00, m01, m10, m11) = (1.0 + tau * a[1], tau * a[2], tau * a[4], 1.0 + tau * a[5]);
        let (rx, ry) = (qx - tau * a[0], qy - tau * a[3]);
        let det = m00 * m11 - m01 * m10;
        ((m11 * rx - m01 * ry) / det, (m00 * ry - m10 * rx) / det)
    }

    pub fn is_identity(&self) -> bool {
        self.0 .0.iter().all(|&a| a == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub image: Plane,
    /// Sensor position of the image's pixel (0, 0) at time 0.
    pub origin: (f64, f64),
    pub motion: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub image: Plane,
    /// Coverage in `[0, 1]`, same size as `image`.
    pub alpha: Plane,
    pub origin: (f64, f64),
    pub motion: Trajectory,
}

impl Sprite {
    /// Opaque rectangular sprite.
    pub fn opaque(image: Plane, origin: (f64, f64), motion: Trajectory) -> Self {
        let alpha = Plane::filled(image.width, image.height, 1.0);
        Self {
            image,
            alpha,
            origin,
            motion,
        }
    }

    /// Coverage and premultiplied intensity at sensor point `(x, y)`.
    #[inline]
    fn sample(&self, x: f64, y: f64, tau: f64) -> (f64, f64) {
        let (sx, sy) = self.motion.source(x, y, tau);
        let (lx, ly) = (sx - self.origin.0, sy - self.origin.1);
        let (x0, y0) = (lx.floor(), ly.floor());
        let (w, h) = (self.image.width as i64, self.image.height as i64);
        if x0 < -1.0 || y0 < -1.0 || x0 >= w as f64 || y0 >= h as f64 {
            return (0.0, 0.0);
        }
        let (fx, fy) = (lx - x0, ly - y0);
        let (xi, yi) = (x0 as i64, y0 as i64);
        let (mut a, mut premult) = (0.0, 0.0);
        for (cy, wy) in [(yi, 1.0 - fy), (yi + 1, fy)] {
            for (cx, wx) in [(xi, 1.0 - fx), (xi + 1, fx)] {
                if cx < 0 || cy < 0 || cx >= w || cy >= h {
                    continue;
                }
                let ca = self.alpha.at(cx, cy);
                a += wx * wy * ca;
                premult += wx * wy * ca * self.image.at(cx, cy);
            }
        }
        (a, premult)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub geometry: SensorGeometry,
    pub background: Background,
    pub sprites: Vec<Sprite>,
    /// Log-intensity contrast threshold.
    pub contrast_threshold: f64,
    /// Render step, seconds.
    pub dt: f64,
    /// Sequence length, seconds.
    pub duration: f64,
    /// Uniform noise events per pixel per second.
    pub noise_rate: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return bad(format!(
                "contrast threshold must be > 0, got {}",
                self.contrast_threshold
            ));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad(format!("noise rate must be >= 0, got {}", self.noise_rate));
        }
        let positive = |p: &Plane| p.data.iter().all(|&v| v > 0.0 && v.is_finite());
        if self.background.image.data.is_empty() || !positive(&self.background.image) {
            return bad("background intensities must be > 0".into());
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if !positive(&s.image) || s.image.data.is_empty() {
                return bad(format!("sprite {i} intensities must be > 0"));
            }
            if s.alpha.width != s.image.width || s.alpha.height != s.image.height {
                return bad(format!("sprite {i} alpha and image sizes differ"));
            }
            if s.alpha.data.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return bad(format!("sprite {i} alpha must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round().max(1.0) as usize
    }

    /// Composited intensity at sensor point `(x, y)` and normalized time.
    pub fn intensity(&self, x: f64, y: f64, tau: f64) -> f64 {
        let bg = &self.background;
        let (sx, sy) = bg.motion.source(x, y, tau);
        let mut value = bg.image.sample_clamped(sx - bg.origin.0, sy - bg.origin.1);
        for s in &self.sprites {
            let (a, premult) = s.sample(x, y, tau);
            value = premult + (1.0 - a) * value;
        }
        value
    }

    /// Index of the topmost sprite whose alpha exceeds 0.5 at `(x, y)`.
    fn top_sprite(&self, x: f64, y: f64, tau: f64) -> Option<usize> {
        self.sprites
            .iter()
            .enumerate()
            .rev()
            .find(|(_, s)| s.sample(x, y, tau).0 > 0.5)
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GtMode {
    #[default]
    SpriteAlpha,
    FlowThreshold { tau: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthFrame {
    /// Seconds.
    pub time: f64,
    pub mask: BinaryMask,
    pub flow: FlowField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// Frames at the start, middle and end of the sequence.
    pub frames: Vec<GroundTruthFrame>,
    /// Background motion first, then one entry per sprite.
    pub layers: Vec<AffineParams>,
}

impl GroundTruth {
    pub fn middle(&self) -> &GroundTruthFrame {
        &self.frames[self.frames.len() / 2]
    }
}

/// True per-pixel flow at `time`: the topmost opaque layer's motion.
pub fn ground_truth_flow(spec: &SceneSpec, time: f64) -> Result<FlowField> {
    let tau = normalized_time(spec, time)?;
    let g = spec.geometry;
    let mut u = Vec::with_capacity(g.pixels());
    let mut v = Vec::with_capacity(g.pixels());
    for y in 0..g.height() {
        for x in 0..g.width() {
            let (xf, yf) = (x as f64, y as f64);
            let motion = match spec.top_sprite(xf, yf, tau) {
                Some(i) => spec.sprites[i].motion,
                None => spec.background.motion,
            };
            let (fu, fv) = motion.0.flow_at(xf, yf);
            u.push(fu);
            v.push(fv);
        }
    }
    FlowField::new(g, u, v)
}

fn normalized_time(spec: &SceneSpec, time: f64) -> Result<f64> {
    if !(0.0..=spec.duration).contains(&time) {
        return Err(Error::InvalidArgument(format!(
            "reference time {time} s is outside [0, {}]",
            spec.duration
        )));
    }
    Ok(time / spec.duration)
}

pub fn ground_truth_mask(spec: &SceneSpec, time: f64, mode: GtMode) -> Result<BinaryMask> {
    let tau = normalized_time(spec, time)?;
    let g = spec.geometry;
    match mode {
        GtMode::SpriteAlpha => Ok(BinaryMask::from_fn(g, |x, y| {
            spec.top_sprite(x as f64, y as f64, tau).is_some()
        })),
        GtMode::FlowThreshold { tau: threshold } => {
            let flow = ground_truth_flow(spec, time)?;
            let bits = flow
                .u
                .iter()
                .zip(&flow.v)
                .map(|(u, v)| u.hypot(*v) > threshold)
                .collect();
            BinaryMask::new(g, bits)
        }
    }
}

pub fn render_events(spec: &SceneSpec) -> Result<(EventSlice, GroundTruth)> {
    render_events_with(spec, GtMode::SpriteAlpha, Execution::default())
}

/// Renders the sequence. Rows render independently (in parallel when `exec`
/// allows) and are merged in row order before a stable time sort, so the
/// output does not depend on the execution strategy.
pub fn render_events_with(
    spec: &SceneSpec,
    mode: GtMode,
    exec: Execution,
) -> Result<(EventSlice, GroundTruth)> {
    spec.validate()?;
    let g = spec.geometry;
    let (w, h) = (g.width(), g.height());
    let steps = spec.steps();
    let dt = spec.duration / steps as f64;
    let c = spec.contrast_threshold;
    // tolerance so a jump of exactly k·C yields k events despite rounding
    let tol = 1e-9 * c;
    let rows: Vec<Vec<Event>> = exec.map_range(h, |y| {
        let yf = y as f64;
        let mut reference: Vec<f64> = (0..w).map(|x| spec.intensity(x as f64, yf, 0.0).ln()).collect();
        let mut previous = reference.clone();
        let mut out = Vec::new();
        for k in 1..=steps {
            let t1 = k as f64 * dt;
            let tau = t1 / spec.duration;
            for x in 0..w {
                let level = spec.intensity(x as f64, yf, tau).ln();
                let prev = previous[x];
                let r = &mut reference[x];
                loop {
                    let (target, p) = if level - *r >= c - tol {
                        (*r + c, Polarity::Positive)
                    } else if *r - level >= c - tol {
                        (*r - c, Polarity::Negative)
                    } else {
                        break;
                    };
                    let span = level - prev;
                    let frac = if span.abs() > 0.0 {
                        ((target - prev) / span).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = t1 - dt + frac * dt;
                    out.push(Event::new(to_micros(t), x as u16, y as u16, p));
                    *r = target;
                }
                previous[x] = level;
            }
        }
        out
    });
    let mut events: Vec<Event> = rows.into_iter().flatten().collect();
    if spec.noise_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let count = (spec.noise_rate * g.pixels() as f64 * spec.duration).round() as usize;
        for _ in 0..count {
            let t = rng.random::<f64>() * spec.duration;
            let x = rng.random_range(0..w) as u16;
            let y = rng.random_range(0..h) as u16;
            let p = if rng.random::<bool>() {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            events.push(Event::new(to_micros(t), x, y, p));
        }
    }
    events.sort_by_key(|e| e.t);
    let slice = EventSlice::new(g, events)?;

    let mut frames = Vec::new();
    for time in [0.0, spec.duration / 2.0, spec.duration] {
        frames.push(GroundTruthFrame {
            time,
            mask: ground_truth_mask(spec, time, mode)?,
            flow: ground_truth_flow(spec, time)?,
        });
    }
    let layers = std::iter::once(spec.background.motion.0)
        .chain(spec.sprites.iter().map(|s| s.motion.0))
        .collect();
    Ok((slice, GroundTruth { frames, layers }))
}

fn to_micros(seconds: f64) -> u64 {
    (seconds * 1e6).round().max(0.0) as u64
}

/// Ready-made scenes.
pub mod presets {
    use super::*;

    const BACKGROUND_CELL: f64 = 4.0;
    const SPRITE_CELL: f64 = 3.0;
    const TEXTURE_GAIN: f64 = 10.0;

    /// Textured background moving by `background` pixels per window with an
    /// opaque textured square sprite moving by `sprite`. The sprite is
    /// centred on the sensor at mid-window.
    pub fn translating_sprite(
        geometry: SensorGeometry,
        background: (f64, f64),
        sprite: (f64, f64),
        sprite_size: usize,
        seed: u64,
    ) -> SceneSpec {
        let margin = 2 * (background.0.abs().max(background.1.abs()).ceil() as usize) + 4;
        let bw = geometry.width() + 2 * margin;
        let bh = geometry.height() + 2 * margin;
        let bg = Plane::value_noise(bw, bh, BACKGROUND_CELL, TEXTURE_GAIN, 0.05, 1.0, seed);
        let fg = Plane::value_noise(sprite_size, sprite_size, SPRITE_CELL, TEXTURE_GAIN, 0.05, 1.0, seed ^ 0x5eed);
        let half = sprite_size as f64 / 2.0;
        let origin = (
            geometry.width() as f64 / 2.0 - half - sprite.0 / 2.0,
            geometry.height() as f64 / 2.0 - half - sprite.1 / 2.0,
        );
        SceneSpec {
            geometry,
            background: Background {
                image: bg,
                origin: (-(margin as f64), -(margin as f64)),
                motion: Trajectory(AffineParams::translation(background.0, background.1)),
            },
            sprites: vec![Sprite::opaque(
                fg,
                origin,
                Trajectory(AffineParams::translation(sprite.0, sprite.1)),
            )],
            contrast_threshold: 0.5,
            dt: 1e-3,
            duration: 1.0,
            noise_rate: 0.0,
            seed,
        }
    }

    /// Whole-scene translation of a textured background, no sprites.
    pub fn global_translation(geometry: SensorGeometry, flow: (f64, f64), seed: u64) -> SceneSpec {
        let mut spec = translating_sprite(geometry, flow, (0.0, 0.0), 2, seed);
        spec.sprites.clear();
        spec
    }

    /// Dark scene with a few bright squares, all translating together. Event
    /// support is sparse, which makes motion blur easy to see.
    pub fn sparse_squares(geometry: SensorGeometry, flow: (f64, f64), seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (geometry.width(), geometry.height());
        let squares: Vec<(usize, usize, usize)> = (0..6)
            .map(|_| {
                let s = rng.random_range(6..12);
                (rng.random_range(8..w.saturating_sub(20).max(9)), rng.random_range(8..h.saturating_sub(20).max(9)), s)
            })
            .collect();
        let image = Plane::from_fn(w, h, |x, y| {
            let lit = squares
                .iter()
                .any(|&(sx, sy, s)| (sx..sx + s).contains(&x) && (sy..sy + s).contains(&y));
            if lit {
                0.9
            } else {
                0.1
            }
        });
        SceneSpec {
            geometry,
            background: Background {
                image,
                origin: (0.0, 0.0),
                motion: Trajectory(AffineParams::translation(flow.0, flow.1)),
            },
            sprites: vec![],
            contrast_threshold: 0.5,
            dt: 1e-3,
            duration: 1.0,
            noise_rate: 0.0,
            seed,
        }
    }

    /// 640×480, C = 0.5, one second, background and one sprite in opposite
    /// translation.
    pub fn vga_scale(seed: u64) -> SceneSpec {
        let g = SensorGeometry::new(640, 480).expect("valid geometry");
        translating_sprite(g, (24.0, 0.0), (-32.0, 0.0), 120, seed)
    }
}

/// One sequence of a generated dataset.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub name: String,
    pub spec: SceneSpec,
    pub gt_mode: GtMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub events: PathBuf,
    pub event_count: usize,
    /// Mask and flow at mid-sequence.
    pub gt_mask: PathBuf,
    pub gt_flow: PathBuf,
    pub gt_time: f64,
    pub gt_mode: GtMode,
    pub contrast_threshold: f64,
    pub duration: f64,
    pub dt: f64,
    pub layers: Vec<AffineParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::io::write_file(path, text.as_bytes())
    }
}

/// Renders every item into `out_dir/<name>/` and writes `manifest.json`.
/// Paths in the manifest are relative to `out_dir`.
pub fn generate_dataset(items: &[DatasetItem], out_dir: &Path, exec: Execution) -> Result<Manifest> {
    let mut sequences = Vec::with_capacity(items.len());
    for item in items {
        let (events, gt) = render_events_with(&item.spec, item.gt_mode, exec)?;
        let rel = PathBuf::from(&item.name);
        let dir = out_dir.join(&rel);
        let frame = gt.middle();
        save_events(&events, &dir.join("events.evls"), EventFormat::Binary)?;
        save_mask(&frame.mask, &dir.join("gt_mask.pgm"))?;
        frame.flow.to_tensor().save(&dir.join("gt_flow.f32"))?;
        let g = item.spec.geometry;
        sequences.push(ManifestEntry {
            name: item.name.clone(),
            seed: item.spec.seed,
            width: g.width(),
            height: g.height(),
            events: rel.join("events.evls"),
            event_count: events.len(),
            gt_mask: rel.join("gt_mask.pgm"),
            gt_flow: rel.join("gt_flow.f32"),
            gt_time: frame.time,
            gt_mode: item.gt_mode,
            contrast_threshold: item.spec.contrast_threshold,
            duration: item.spec.duration,
            dt: item.spec.dt,
            layers: gt.layers.clone(),
        });
    }
    let manifest = Manifest { sequences };
    manifest.save(&out_dir.join(Manifest::FILE_NAME))?;
    Ok(manifest)
}
