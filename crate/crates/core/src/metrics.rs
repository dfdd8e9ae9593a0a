//! Mask agreement metrics: intersection-over-union and detection rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    geometry: SensorGeometry,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: SensorGeometry, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != geometry.pixels() {
            return Err(Error::shape(geometry.pixels(), bits.len()));
        }
        Ok(Self { geometry, bits })
    }

    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            geometry,
            bits: vec![false; geometry.pixels()],
        }
    }

    pub fn from_fn(geometry: SensorGeometry, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(geometry.pixels());
        for y in 0..geometry.height() {
            for x in 0..geometry.width() {
                bits.push(f(x, y));
            }
        }
        Self { geometry, bits }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[self.geometry.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let i = self.geometry.index(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::shape(self.geometry, other.geometry));
        }
        Ok(())
    }
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min <= b.x_max && b.y_min <= b.y_max).then_some(b)
    }
}

pub fn bounding_box(mask: &BinaryMask) -> Option<BoundingBox> {
    let w = mask.geometry.width();
    let mut bbox: Option<BoundingBox> = None;
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = (i % w, i / w);
        bbox = Some(match bbox {
            None => BoundingBox {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            },
            Some(b) => BoundingBox {
                x_min: b.x_min.min(x),
                y_min: b.y_min.min(y),
                x_max: b.x_max.max(x),
                y_max: b.y_max.max(y),
            },
        });
    }
    bbox
}

/// Both masks empty counts as perfect agreement.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_shape(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// How the box-overlap condition of the detection rate is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrNormalization {
    /// `|B_D ∩ B_G| / |B_G| > 0.5`
    #[default]
    GtBox,
    /// `|B_D ∩ B_G| / |B_D ∪ B_G| > 0.5`
    BoxIou,
}

impl DrNormalization {
    pub fn describe(&self) -> &'static str {
        match self {
            DrNormalization::GtBox => "box overlap normalized by ground-truth box area",
            DrNormalization::BoxIou => "box overlap normalized by box union area",
        }
    }
}

/// 1 when the predicted box overlaps most of the ground-truth box and the
/// overlap area exceeds the predicted pixels that fall outside the
/// ground-truth box.
pub fn detection_rate(pred: &BinaryMask, gt: &BinaryMask, norm: DrNormalization) -> Result<u8> {
    pred.check_shape(gt)?;
    let (bd, bg) = match (bounding_box(pred), bounding_box(gt)) {
        (None, None) => return Ok(1),
        (Some(_), None) | (None, Some(_)) => return Ok(0),
        (Some(bd), Some(bg)) => (bd, bg),
    };
    let overlap = bd.intersection(&bg).map_or(0, |b| b.area());
    let ratio = match norm {
        DrNormalization::GtBox => overlap as f64 / bg.area() as f64,
        DrNormalization::BoxIou => overlap as f64 / (bd.area() + bg.area() - overlap) as f64,
    };
    let w = pred.geometry.width();
    let leaked = pred
        .bits
        .iter()
        .enumerate()
        .filter(|(i, &b)| b && !bg.contains(i % w, i / w))
        .count();
    Ok((ratio > 0.5 && overlap > leaked) as u8)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub iou: f64,
    pub dr: u8,
}

/// Arithmetic means of IoU and detection rate.
pub fn aggregate(scores: &[(f64, f64)]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero sequences".into()));
    }
    let n = scores.len() as f64;
    let (si, sd) = scores
        .iter()
        .fold((0.0, 0.0), |(a, b), &(i, d)| (a + i, b + d));
    Ok((si / n, sd / n))
}
