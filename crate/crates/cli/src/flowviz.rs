//! Colour-wheel rendering of flow fields: hue is direction, saturation is
//! magnitude relative to the largest vector, value is always full.

use evseg_core::affine::FlowField;
use image::{Rgb, RgbImage};

/// Hue in degrees `[0, 360)`; 0 is +x, increasing toward +y.
pub fn hue(u: f64, v: f64) -> f64 {
    v.atan2(u).to_degrees().rem_euclid(360.0)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |a: f64| ((a + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

pub fn render(flow: &FlowField) -> RgbImage {
    let g = flow.geometry();
    let max = flow.max_magnitude();
    RgbImage::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        let (u, v) = flow.at(x as usize, y as usize);
        let s = if max > 0.0 { (u.hypot(v) / max).min(1.0) } else { 0.0 };
        Rgb(hsv_to_rgb(hue(u, v), s, 1.0))
    })
}
