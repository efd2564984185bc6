//! Voxel lattice geometry shared by volumes and masks.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// World-space vector in millimetres.
pub type Vec3 = Vector3<f64>;

/// Dimensions, spacing and origin of a voxel lattice. Voxel `(i, j, k)` sits at
/// `origin + (i*sx, j*sy, k*sz)`; linear storage is x-fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Geometry(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    /// Sub-lattice spanning voxels `lo..=hi` (inclusive) with matching world
    /// positions.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Grid> {
        if (0..3).any(|a| lo[a] > hi[a] || hi[a] >= self.dims[a]) {
            return Err(Error::Geometry(format!(
                "crop box {lo:?}..={hi:?} outside dims {:?}",
                self.dims
            )));
        }
        let w = self.world(lo[0], lo[1], lo[2]);
        Grid::new(
            [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1],
            self.spacing,
            [w.x, w.y, w.z],
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    #[inline]
    pub fn world_of(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.world(i, j, k)
    }

    /// Fractional lattice coordinates of a world point.
    #[inline]
    pub fn continuous_index(&self, p: &Vec3) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Voxel whose center is nearest to `p`, if it lies on the lattice.
    pub fn nearest_voxel(&self, p: &Vec3) -> Option<[usize; 3]> {
        let c = self.continuous_index(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = c[a].round();
            if !r.is_finite() || r < 0.0 || r >= self.dims[a] as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Neighbour offsets for 6-connectivity.
    pub const N6: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

    /// Neighbour offsets for 26-connectivity, in lexicographic (k, j, i) order.
    pub fn n26() -> impl Iterator<Item = [isize; 3]> {
        (-1isize..=1).flat_map(|dk| {
            (-1isize..=1).flat_map(move |dj| {
                (-1isize..=1)
                    .filter(move |&di| !(di == 0 && dj == 0 && dk == 0))
                    .map(move |di| [di, dj, dk])
            })
        })
    }

    /// Lattice neighbour of `c` shifted by `d`, if in bounds.
    #[inline]
    pub fn offset(&self, c: [usize; 3], d: [isize; 3]) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as isize + d[a];
            if v < 0 || v >= self.dims[a] as isize {
                return None;
            }
            out[a] = v as usize;
        }
        Some(out)
    }

    #[inline]
    pub fn on_border(&self, c: [usize; 3]) -> bool {
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }
}
