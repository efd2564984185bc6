//! Exact squared Euclidean distance transform on anisotropic lattices.
//!
//! One lower-envelope-of-parabolas pass per axis (Felzenszwalb & Huttenlocher),
//! so the cost is linear in the voxel count.

use rayon::prelude::*;

use super::Mask;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Squared distance in mm² from every voxel to the nearest feature voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    grid: Grid,
    sq: Vec<f64>,
}

impl DistanceField {
    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn squared(&self) -> &[f64] {
        &self.sq
    }

    #[inline]
    pub fn sq(&self, idx: usize) -> f64 {
        self.sq[idx]
    }

    #[inline]
    pub fn dist(&self, idx: usize) -> f64 {
        self.sq[idx].sqrt()
    }
}

/// Distance from every voxel to the nearest set voxel of `features`.
pub fn distance_transform(features: &Mask) -> Result<DistanceField> {
    if features.is_empty() {
        return Err(Error::EmptyMask("distance transform needs a feature voxel".into()));
    }
    Ok(DistanceField {
        grid: *features.grid(),
        sq: squared_edt(features),
    })
}

/// Squared EDT; voxels are `INFINITY` when there are no features at all.
pub(crate) fn squared_edt(features: &Mask) -> Vec<f64> {
    let grid = *features.grid();
    let [nx, ny, nz] = grid.dims;
    let [sx, sy, sz] = grid.spacing;
    let mut f: Vec<f64> = features
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    if !f.iter().any(|v| v.is_finite()) {
        return f;
    }

    // x lines are contiguous
    f.par_chunks_mut(nx).for_each_init(Envelope::default, |env, line| {
        let input = line.to_vec();
        env.transform(&input, sx, line);
    });

    // y lines: each z slab is independent
    f.par_chunks_mut(nx * ny).for_each_init(Envelope::default, |env, slab| {
        let mut input = vec![0.0; ny];
        let mut out = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                input[j] = slab[i + nx * j];
            }
            env.transform(&input, sy, &mut out);
            for j in 0..ny {
                slab[i + nx * j] = out[j];
            }
        }
    });

    // z lines: gather per (i, j) column, scatter back in a fixed order
    if nz > 1 {
        let plane = nx * ny;
        let columns: Vec<Vec<f64>> = (0..plane)
            .into_par_iter()
            .map_init(Envelope::default, |env, p| {
                let input: Vec<f64> = (0..nz).map(|k| f[p + plane * k]).collect();
                let mut out = vec![0.0; nz];
                env.transform(&input, sz, &mut out);
                out
            })
            .collect();
        for (p, col) in columns.into_iter().enumerate() {
            for (k, v) in col.into_iter().enumerate() {
                f[p + plane * k] = v;
            }
        }
    }
    f
}

#[derive(Default)]
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    /// out[q] = min_p ((q - p) * s)² + f[p], over finite f[p].
    fn transform(&mut self, f: &[f64], s: f64, out: &mut [f64]) {
        let n = f.len();
        self.v.clear();
        self.z.clear();
        let pos = |q: usize| q as f64 * s;
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                let Some(&p) = self.v.last() else {
                    self.v.push(q);
                    self.z.push(f64::NEG_INFINITY);
                    break;
                };
                let (xp, xq) = (pos(p), pos(q));
                let x = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                if x <= *self.z.last().unwrap() {
                    self.v.pop();
                    self.z.pop();
                } else {
                    self.v.push(q);
                    self.z.push(x);
                    break;
                }
            }
        }
        if self.v.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut k = 0usize;
        for (q, o) in out.iter_mut().enumerate() {
            let xq = pos(q);
            while k + 1 < self.v.len() && self.z[k + 1] < xq {
                k += 1;
            }
            // ties between parabolas resolve to the smaller value
            let mut best = f64::INFINITY;
            for &p in &self.v[k..(k + 2).min(self.v.len())] {
                let d = (q as f64 - p as f64) * s;
                best = best.min(d * d + f[p]);
            }
            if k > 0 {
                let p = self.v[k - 1];
                let d = (q as f64 - p as f64) * s;
                best = best.min(d * d + f[p]);
            }
            *o = best;
        }
    }
}
