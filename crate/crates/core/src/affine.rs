//! Six-parameter affine motion models and the dense flow they induce.
//!
//! Coordinates are raw pixel indices: `x` is the column, `y` the row, origin
//! at the top-left pixel. Flow is the displacement over the whole normalized
//! window, so an event at normalized time `t` moves by `(t_ref - t) * flow`.

use std::ops::{Add, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;
use crate::io::Tensor;

/// Row-major 2×3 matrix `[[a1, a2, a3], [a4, a5, a6]]` mapping `(1, x, y)` to
/// `(u, v)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AffineParams(pub [f64; 6]);

impl AffineParams {
    pub const ZERO: AffineParams = AffineParams([0.0; 6]);

    pub fn translation(u: f64, v: f64) -> Self {
        AffineParams([u, 0.0, 0.0, v, 0.0, 0.0])
    }

    pub fn coefficients(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    #[inline]
    pub fn flow_at(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.0;
        (a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y)
    }

    pub fn scaled(&self, s: f64) -> Self {
        AffineParams(self.0.map(|a| a * s))
    }
}

impl Add for AffineParams {
    type Output = AffineParams;

    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        AffineParams(out)
    }
}

impl Neg for AffineParams {
    type Output = AffineParams;

    fn neg(self) -> Self {
        AffineParams(self.0.map(|a| -a))
    }
}

/// Dense per-pixel flow, row-major planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    geometry: SensorGeometry,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(geometry: SensorGeometry) -> Self {
        let n = geometry.pixels();
        Self {
            geometry,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn new(geometry: SensorGeometry, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = geometry.pixels();
        if u.len() != n || v.len() != n {
            return Err(Error::shape(
                format!("two planes of {n} values"),
                format!("{} and {}", u.len(), v.len()),
            ));
        }
        Ok(Self { geometry, u, v })
    }

    pub fn constant(geometry: SensorGeometry, u: f64, v: f64) -> Self {
        let n = geometry.pixels();
        Self {
            geometry,
            u: vec![u; n],
            v: vec![v; n],
        }
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = self.geometry.index(x, y);
        (self.u[i], self.v[i])
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|a| a.is_finite())
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    /// Two-plane `(2, H, W)` tensor, `u` first.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.u.iter().chain(&self.v).map(|&a| a as f32).collect();
        Tensor {
            dims: vec![2, self.geometry.height(), self.geometry.width()],
            data,
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims.len() != 3 || t.dims[0] != 2 {
            return Err(Error::shape("flow tensor (2, H, W)", format!("{:?}", t.dims)));
        }
        let geometry = SensorGeometry::new(t.dims[2], t.dims[1])?;
        let n = geometry.pixels();
        let u = t.data[..n].iter().map(|&a| a as f64).collect();
        let v = t.data[n..].iter().map(|&a| a as f64).collect();
        FlowField::new(geometry, u, v)
    }
}

pub fn affine_flow(params: &AffineParams, geometry: SensorGeometry) -> FlowField {
    let (w, h) = (geometry.width(), geometry.height());
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fu, fv) = params.flow_at(x as f64, y as f64);
            u.push(fu);
            v.push(fv);
        }
    }
    FlowField { geometry, u, v }
}

/// Whether the flow of `a + b` equals the sum of the two flows to 1e-12.
pub fn flow_linearity_check(a: &AffineParams, b: &AffineParams, geometry: SensorGeometry) -> bool {
    let sum = affine_flow(&(*a + *b), geometry);
    let fa = affine_flow(a, geometry);
    let fb = affine_flow(b, geometry);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    (0..geometry.pixels())
        .all(|i| close(sum.u[i], fa.u[i] + fb.u[i]) && close(sum.v[i], fa.v[i] + fb.v[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom() -> SensorGeometry {
        SensorGeometry::new(32, 24).unwrap()
    }

    #[test]
    fn zero_matrix_gives_zero_flow() {
        assert_eq!(affine_flow(&AffineParams::ZERO, geom()), FlowField::zeros(geom()));
    }

    #[test]
    fn translation_is_constant() {
        let f = affine_flow(&AffineParams([2.0, 0.0, 0.0, -1.0, 0.0, 0.0]), geom());
        assert!(f.u.iter().all(|&u| u == 2.0));
        assert!(f.v.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn rotation_like_field() {
        let f = affine_flow(&AffineParams([0.0, 0.0, -0.1, 0.0, 0.1, 0.0]), geom());
        let (u, v) = f.at(10, 20);
        assert!((u + 2.0).abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linearity_degenerate_cases() {
        let a = AffineParams([0.3, -0.01, 0.02, 1.5, 0.004, -0.2]);
        assert!(flow_linearity_check(&AffineParams::ZERO, &AffineParams::ZERO, geom()));
        assert!(flow_linearity_check(&a, &-a, geom()));
        assert_eq!(affine_flow(&(a + -a), geom()), FlowField::zeros(geom()));
    }

    #[test]
    fn tensor_round_trip_of_f32_values() {
        let f = affine_flow(&AffineParams([0.5, 0.25, -0.125, 1.0, 0.0, 2.0]), geom());
        let back = FlowField::from_tensor(&f.to_tensor()).unwrap();
        assert_eq!(back, f);
    }

    proptest! {
        #[test]
        fn linear_in_parameters(
            a in prop::array::uniform6(-5.0f64..5.0),
            b in prop::array::uniform6(-5.0f64..5.0),
        ) {
            let g = SensorGeometry::new(16, 16).unwrap();
            prop_assert!(flow_linearity_check(&AffineParams(a), &AffineParams(b), g));
        }
    }
}
