#![allow(dead_code)]

use evseg_core::affine::AffineParams;
use evseg_core::event::{NormalizedEvent, NormalizedEvents, Polarity, SensorGeometry};
use evseg_core::layers::LayerLogits;
use evseg_core::objective::{
    timestamp_images_with, warp_events, LayeredModel, Objective, T_REF_BACKWARD, T_REF_FORWARD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_MAX_REL_ERR: f64 = 1e-3;
/// Gradient magnitude below which errors are measured against this floor
/// instead (the loss itself is of order one).
pub const FD_ABS_FLOOR: f64 = 1e-3;
pub const FD_INSTANCES: usize = 60;
/// Coverage floors for the affine coefficients that survive kink rejection.
pub const FD_MIN_TRANSLATION: usize = 100;
pub const FD_MIN_COUPLED: usize = 20;

pub fn random_events(g: SensorGeometry, n: usize, rng: &mut ChaCha8Rng) -> NormalizedEvents {
    let mut ts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    ts.sort_by(f64::total_cmp);
    let list = ts
        .into_iter()
        .map(|t| NormalizedEvent {
            t,
            x: rng.random_range(0..g.width() as u16),
            y: rng.random_range(0..g.height() as u16),
            p: if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative },
        })
        .collect();
    NormalizedEvents::from_parts(g, list, 1_000_000).unwrap()
}

/// Logit away from the activation kinks at 0 and 1.
fn logit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.random_range(-1.5..2.5);
        if z.abs() > 0.05 && (z - 1.0).abs() > 0.05 {
            return z;
        }
    }
}

/// Random model whose two logits differ by at least 0.3 at every pixel.
pub fn random_model(g: SensorGeometry, rng: &mut ChaCha8Rng) -> LayeredModel {
    let mut affine = || {
        AffineParams([
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-3.0..3.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ])
    };
    let (a0, a1) = (affine(), affine());
    let n = g.pixels();
    let mut values = vec![0.0; 2 * n];
    for i in 0..n {
        loop {
            let (z0, z1) = (logit(rng), logit(rng));
            if (z0 - z1).abs() > 0.3 {
                values[i] = z0;
                values[n + i] = z1;
                break;
            }
        }
    }
    LayeredModel::new(a0, a1, LayerLogits::new(g, values).unwrap())
}

/// Largest relative change of any per-polarity splat weight allowed within
/// one step. Pixels fed only by tiny corner weights make the average
/// timestamp vary on a scale far below the step.
pub const FD_MAX_WEIGHT_CHANGE: f64 = 0.02;

/// Everything that makes the loss non-smooth (maxout winners, the integer
/// cell of every warped event, the occupied pixel set) plus the splat
/// weights.
struct Structure {
    discrete: Vec<i64>,
    weights: Vec<f64>,
}

impl Structure {
    fn of(obj: &Objective, events: &NormalizedEvents, model: &LayeredModel) -> Self {
        let cfg = obj.config();
        let g = events.geometry();
        let mut discrete: Vec<i64> = model.masks(&cfg.activation).labels().iter().map(|&l| l as i64).collect();
        let mut weights = Vec::new();
        let flow = obj.combined_flow(model).unwrap();
        for t_ref in [T_REF_FORWARD, T_REF_BACKWARD] {
            let w = warp_events(events, &flow, t_ref).unwrap();
            discrete.extend(w.x.iter().chain(&w.y).map(|v| v.floor() as i64));
            let img = timestamp_images_with(&w, g, cfg.epsilon, Default::default());
            discrete.extend(img.occupancy.iter().map(|&o| (o > cfg.occupancy_threshold) as i64));
            weights.extend(img.weight.iter().flatten());
        }
        Self { discrete, weights }
    }

    fn smoothly_connected(&self, other: &Structure) -> bool {
        self.discrete == other.discrete
            && self.weights.iter().zip(&other.weights).all(|(&a, &b)| {
                (a - b).abs() <= FD_MAX_WEIGHT_CHANGE * a.max(b) || a.max(b) == 0.0
            })
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    /// Checked affine coefficients, translation then coordinate-coupled.
    pub checked_translation: usize,
    pub checked_coupled: usize,
    pub one_sided: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl FdReport {
    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.checked_translation += o.checked_translation;
        self.checked_coupled += o.checked_coupled;
        self.one_sided += o.one_sided;
        self.skipped += o.skipped;
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
    }
}

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(FD_ABS_FLOOR)
}

/// Compares the analytic gradient with finite differences at step
/// [`FD_STEP`]: central where the loss is smooth on both sides, second
/// order one-sided where only one side is, skipped otherwise.
pub fn check_gradient(
    obj: &Objective,
    events: &NormalizedEvents,
    model: &LayeredModel,
    logit_samples: usize,
    rng: &mut ChaCha8Rng,
) -> FdReport {
    let (_, grad) = obj.loss_and_gradient(model).unwrap();
    let base = Structure::of(obj, events, model);
    let f0 = obj.loss(model).unwrap().total;
    let n = model.geometry().pixels();

    let mut coords: Vec<(Option<usize>, usize)> = (0..2).flat_map(|l| (0..6).map(move |c| (Some(l), c))).collect();
    coords.extend((0..logit_samples).map(|_| (None, rng.random_range(0..2 * n))));

    let mut report = FdReport::default();
    for (layer, c) in coords {
        let shifted = |d: f64| {
            let mut m = model.clone();
            match layer {
                Some(l) => m.layers[l].0[c] += d,
                None => m.logits.values[c] += d,
            }
            m
        };
        let eval = |d: f64| obj.loss(&shifted(d)).unwrap().total;
        let smooth = |d: f64| base.smoothly_connected(&Structure::of(obj, events, &shifted(d)));
        let analytic = match layer {
            Some(l) => grad.layers[l][c],
            None => grad.logits[c],
        };
        let h = FD_STEP;
        let fd = match (smooth(h), smooth(-h)) {
            (true, true) => (eval(h) - eval(-h)) / (2.0 * h),
            (true, false) => {
                report.one_sided += 1;
                (4.0 * eval(h / 2.0) - eval(h) - 3.0 * f0) / h
            }
            (false, true) => {
                report.one_sided += 1;
                -(4.0 * eval(-h / 2.0) - eval(-h) - 3.0 * f0) / h
            }
            (false, false) => {
                report.skipped += 1;
                continue;
            }
        };
        report.checked += 1;
        match (layer, c) {
            (Some(_), 0 | 3) => report.checked_translation += 1,
            (Some(_), _) => report.checked_coupled += 1,
            _ => {}
        }
        report.max_rel_err = report.max_rel_err.max(rel_err(analytic, fd));
    }
    report
}

/// Runs [`check_gradient`] on `instances` random 32×32 problems.
pub fn gradient_oracle(instances: usize, seed: u64) -> FdReport {
    let g = SensorGeometry::new(32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = FdReport::default();
    for _ in 0..instances {
        let n = rng.random_range(100..=500);
        let events = random_events(g, n, &mut rng);
        let model = random_model(g, &mut rng);
        let obj = Objective::new(&events, Default::default()).unwrap();
        total.merge(check_gradient(&obj, &events, &model, 24, &mut rng));
    }
    total
}
