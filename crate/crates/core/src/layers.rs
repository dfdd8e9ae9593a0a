//! Two-layer composition: logits → activation → softmax → maxout → combined
//! flow.

use serde::{Deserialize, Serialize};

use crate::affine::FlowField;
use crate::error::{Error, Result};
use crate::event::SensorGeometry;
use crate::metrics::BinaryMask;

pub const LAYERS: usize = 2;

/// Per-pixel scores, layer-major: `values[layer * H * W + y * W + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerLogits {
    geometry: SensorGeometry,
    pub values: Vec<f64>,
}

impl LayerLogits {
    pub fn zeros(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; LAYERS * geometry.pixels()],
        }
    }

    pub fn new(geometry: SensorGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != LAYERS * geometry.pixels() {
            return Err(Error::shape(LAYERS * geometry.pixels(), values.len()));
        }
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn get(&self, layer: usize, pixel: usize) -> f64 {
        self.values[layer * self.geometry.pixels() + pixel]
    }

    pub fn set(&mut self, layer: usize, pixel: usize, value: f64) {
        let n = self.geometry.pixels();
        self.values[layer * n + pixel] = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    LeakyDorelu,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    pub kind: ActivationKind,
    pub gamma: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            kind: ActivationKind::LeakyDorelu,
            gamma: 100.0,
        }
    }
}

impl ActivationConfig {
    pub fn new(kind: ActivationKind, gamma: f64) -> Result<Self> {
        let cfg = Self { kind, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "activation gamma must be finite and > 1, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::LeakyDorelu => leaky_dorelu(x, self.gamma),
            ActivationKind::LeakyRelu => leaky_relu(x, self.gamma),
        }
    }

    /// Derivative; at the breakpoints the right-hand slope is used.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let slope = 1.0 / self.gamma;
        match self.kind {
            ActivationKind::LeakyDorelu if (0.0..1.0).contains(&x) => 1.0,
            ActivationKind::LeakyDorelu => slope,
            ActivationKind::LeakyRelu if x >= 0.0 => 1.0,
            ActivationKind::LeakyRelu => slope,
        }
    }
}

/// Identity on `[0, 1]`, slope `1/γ` on both sides.
#[inline]
pub fn leaky_dorelu(x: f64, gamma: f64) -> f64 {
    if x > 1.0 {
        1.0 + (x - 1.0) / gamma
    } else if x >= 0.0 {
        x
    } else {
        x / gamma
    }
}

#[inline]
pub fn leaky_relu(x: f64, gamma: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x / gamma
    }
}

pub fn apply_activation(logits: &LayerLogits, cfg: &ActivationConfig) -> LayerLogits {
    LayerLogits {
        geometry: logits.geometry,
        values: logits.values.iter().map(|&x| cfg.apply(x)).collect(),
    }
}

/// Softmax over two scores followed by maxout: the winning layer index (ties
/// to layer 0) and its softmax probability.
#[inline]
pub fn maxout_pixel(z0: f64, z1: f64) -> (usize, f64) {
    let (winner, margin) = if z1 > z0 { (1, z1 - z0) } else { (0, z0 - z1) };
    (winner, 1.0 / (1.0 + (-margin).exp()))
}

/// Post-maxout alpha values, layer-major like [`LayerLogits`]. Exactly one
/// layer is nonzero per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMasks {
    geometry: SensorGeometry,
    values: Vec<f64>,
}

impl AlphaMasks {
    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, layer: usize, pixel: usize) -> f64 {
        self.values[layer * self.geometry.pixels() + pixel]
    }

    /// Index and value of the nonzero layer at `pixel`.
    pub fn winner(&self, pixel: usize) -> (usize, f64) {
        let a1 = self.get(1, pixel);
        if a1 > 0.0 {
            (1, a1)
        } else {
            (0, self.get(0, pixel))
        }
    }

    /// Pixel labels (0 or 1), row-major.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.geometry.pixels())
            .map(|i| self.winner(i).0 as u8)
            .collect()
    }
}

pub fn softmax_maxout(logits: &LayerLogits) -> AlphaMasks {
    let n = logits.geometry.pixels();
    let mut values = vec![0.0; LAYERS * n];
    for i in 0..n {
        let (k, s) = maxout_pixel(logits.values[i], logits.values[n + i]);
        values[k * n + i] = s;
    }
    AlphaMasks {
        geometry: logits.geometry,
        values,
    }
}

/// `α1 ⊙ W1 + α2 ⊙ W2`.
pub fn compose_flow(masks: &AlphaMasks, w1: &FlowField, w2: &FlowField) -> Result<FlowField> {
    let g = masks.geometry;
    for w in [w1, w2] {
        if w.geometry() != g {
            return Err(Error::shape(g, w.geometry()));
        }
    }
    let n = g.pixels();
    let (a0, a1) = masks.values.split_at(n);
    let u = (0..n).map(|i| a0[i] * w1.u[i] + a1[i] * w2.u[i]).collect();
    let v = (0..n).map(|i| a0[i] * w1.v[i] + a1[i] * w2.v[i]).collect();
    FlowField::new(g, u, v)
}

/// One binary mask per layer; they are disjoint and cover every pixel.
pub fn hard_masks(masks: &AlphaMasks) -> [BinaryMask; LAYERS] {
    let labels = masks.labels();
    let g = masks.geometry;
    let layer = |k: u8| {
        BinaryMask::new(g, labels.iter().map(|&l| l == k).collect())
            .expect("label count matches geometry")
    };
    [layer(0), layer(1)]
}
