//! B-bin event volume with a triangular temporal kernel.

use crate::error::{Error, Result};
use crate::event::{EventSlice, SensorGeometry};
use crate::io::Tensor;

pub const DEFAULT_BINS: usize = 5;

/// Event volume of shape `bins × height × width`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    geometry: SensorGeometry,
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, geometry: SensorGeometry) -> Self {
        Self {
            bins,
            geometry,
            values: vec![0.0; bins * geometry.pixels()],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn geometry(&self) -> SensorGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, bin: usize, x: usize, y: usize) -> f64 {
        self.values[bin * self.geometry.pixels() + self.geometry.index(x, y)]
    }

    /// Sum over every cell.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.bins, self.geometry.height(), self.geometry.width()],
            data: self.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims.len() != 3 {
            return Err(Error::shape("rank-3 tensor (B, H, W)", format!("{:?}", t.dims)));
        }
        let geometry = SensorGeometry::new(t.dims[2], t.dims[1])?;
        Ok(Self {
            bins: t.dims[0],
            geometry,
            values: t.data.iter().map(|&v| v as f64).collect(),
        })
    }
}

/// Hat kernel `max(0, 1 - |a|)`.
#[inline]
pub fn hat(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

/// Builds the event volume. Timestamps are rescaled to `[0, B-1]`; integer
/// pixel coordinates collapse the spatial kernels onto the event's own pixel,
/// so each event splits its polarity between the two nearest bins.
pub fn build_voxel_grid(slice: &EventSlice, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be >= 1".into()));
    }
    let first = slice.events().first().ok_or(Error::EmptyEvents)?.t;
    let duration = slice.duration_us();
    let geometry = slice.geometry();
    let plane = geometry.pixels();
    let mut grid = VoxelGrid::zeros(bins, geometry);
    let scale = if duration == 0 || bins == 1 {
        0.0
    } else {
        (bins - 1) as f64 / duration as f64
    };
    for e in slice.events() {
        let ts = scale * (e.t - first) as f64;
        let lo = (ts.floor() as usize).min(bins - 1);
        let pix = geometry.index(e.x as usize, e.y as usize);
        let p = e.p.as_f64();
        let w_lo = hat(ts - lo as f64);
        grid.values[lo * plane + pix] += p * w_lo;
        if lo + 1 < bins {
            let w_hi = hat(ts - (lo + 1) as f64);
            if w_hi > 0.0 {
                grid.values[(lo + 1) * plane + pix] += p * w_hi;
            }
        }
    }
    Ok(grid)
}
