//! CT volumes in Hounsfield Units, sub-voxel sampling and density calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};

/// Immutable 3D grid of signed 16-bit HU values, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    grid: Grid,
    values: Vec<i16>,
}

impl VoxelVolume {
    pub fn new(grid: Grid, values: Vec<i16>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "value count {} does not match dims {:?}",
                values.len(),
                grid.dims
            )));
        }
        Ok(VoxelVolume { grid, values })
    }

    pub fn filled(grid: Grid, value: i16) -> Self {
        VoxelVolume {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> i16) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    values.push(f(i, j, k));
                }
            }
        }
        VoxelVolume { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[i16] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> i16 {
        self.values[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> i16 {
        self.values[idx]
    }

    /// Copy of the voxels `lo..=hi` (inclusive).
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<VoxelVolume> {
        let grid = self.grid.crop(lo, hi)?;
        Ok(VoxelVolume::from_fn(grid, |i, j, k| {
            self.get(lo[0] + i, lo[1] + j, lo[2] + k)
        }))
    }

    /// 3x3x3 box mean (truncated at the border), rounded back to HU.
    pub fn box_smoothed(&self) -> VoxelVolume {
        let [nx, ny, _] = self.grid.dims;
        let mut buf: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        let strides = [1, nx, nx * ny];
        for (axis, &stride) in strides.iter().enumerate() {
            let n = self.grid.dims[axis];
            let src = buf.clone();
            for (idx, out) in buf.iter_mut().enumerate() {
                let pos = (idx / stride) % n;
                let mut sum = src[idx];
                let mut count = 1.0;
                if pos > 0 {
                    sum += src[idx - stride];
                    count += 1.0;
                }
                if pos + 1 < n {
                    sum += src[idx + stride];
                    count += 1.0;
                }
                *out = sum / count;
            }
        }
        VoxelVolume {
            grid: self.grid,
            values: buf.iter().map(|v| v.round() as i16).collect(),
        }
    }

    pub fn into_values(self) -> Vec<i16> {
        self.values
    }

    /// Trilinear interpolation at a world point. Points outside the lattice
    /// bounding box are clamped onto it.
    pub fn sample_trilinear(&self, p: &Vec3) -> f64 {
        let c = self.grid.continuous_index(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.grid.dims[a];
            let x = if c[a].is_nan() {
                0.0
            } else {
                c[a].clamp(0.0, (n - 1) as f64)
            };
            let r = x.round();
            let x = if (x - r).abs() < 1e-9 { r } else { x };
            let f = x.floor();
            let mut b = f as usize;
            let mut t = x - f;
            if b + 1 >= n {
                // on the upper border (or a single-voxel axis)
                b = n - 1;
                t = 0.0;
            }
            base[a] = b;
            frac[a] = t;
        }
        let [nx, ny, _] = self.grid.dims;
        let [bi, bj, bk] = base;
        let di = usize::from(frac[0] > 0.0);
        let dj = usize::from(frac[1] > 0.0);
        let dk = usize::from(frac[2] > 0.0);
        let v = |i: usize, j: usize, k: usize| self.values[i + nx * (j + ny * k)] as f64;

        let c00 = v(bi, bj, bk) * (1.0 - frac[0]) + v(bi + di, bj, bk) * frac[0];
        let c10 = v(bi, bj + dj, bk) * (1.0 - frac[0]) + v(bi + di, bj + dj, bk) * frac[0];
        let c01 = v(bi, bj, bk + dk) * (1.0 - frac[0]) + v(bi + di, bj, bk + dk) * frac[0];
        let c11 = v(bi, bj + dj, bk + dk) * (1.0 - frac[0]) + v(bi + di, bj + dj, bk + dk) * frac[0];
        let c0 = c00 * (1.0 - frac[1]) + c10 * frac[1];
        let c1 = c01 * (1.0 - frac[1]) + c11 * frac[1];
        c0 * (1.0 - frac[2]) + c1 * frac[2]
    }

    /// Mean over the 3x3x3 neighbourhood of a voxel, truncated at the border.
    pub fn neighbourhood_mean(&self, c: [usize; 3]) -> f64 {
        let mut sum = self.values[self.grid.index(c[0], c[1], c[2])] as f64;
        let mut n = 1usize;
        for d in Grid::n26() {
            if let Some([i, j, k]) = self.grid.offset(c, d) {
                sum += self.get(i, j, k) as f64;
                n += 1;
            }
        }
        sum / n as f64
    }
}

/// Linear HU to density map, mg/cm³ = slope * HU + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

impl Calibration {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !(slope > 0.0) || !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::Geometry(format!(
                "calibration slope must be positive and finite, got {slope}"
            )));
        }
        Ok(Calibration { slope, intercept })
    }

    #[inline]
    pub fn calibrate(&self, hu: f64) -> f64 {
        self.slope * hu + self.intercept
    }

    /// HU value mapping to the given density.
    #[inline]
    pub fn inverse(&self, density: f64) -> f64 {
        (density - self.intercept) / self.slope
    }
}

pub fn calibrate(value: f64, cal: &Calibration) -> f64 {
    cal.calibrate(value)
}
