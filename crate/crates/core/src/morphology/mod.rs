//! Binary morphology on voxel masks: metric erosion/dilation, closing with
//! hole filling, ultimate erosion, influence zones and grey-value peeling.

mod edt;
mod mask;
mod skiz;

use std::collections::VecDeque;

pub use edt::{distance_transform, DistanceField};
pub use mask::{label, Connectivity, LabelMask, Mask};
pub use skiz::{skiz_partition, Zones};

use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};
use crate::volgrid::VoxelVolume;

/// Keeps voxels whose distance to the nearest background voxel exceeds `radius` mm.
pub fn erode(mask: &Mask, radius: f64) -> Mask {
    let background = mask.complement();
    if background.is_empty() {
        return mask.clone();
    }
    let sq = edt::squared_edt(&background);
    let r2 = radius * radius;
    Mask::from_fn(*mask.grid(), |i| mask.get(i) && sq[i] > r2)
}

/// Adds voxels within `radius` mm of the nearest foreground voxel.
pub fn dilate(mask: &Mask, radius: f64) -> Mask {
    if mask.is_empty() {
        return mask.clone();
    }
    let sq = edt::squared_edt(mask);
    let r2 = radius * radius;
    Mask::from_fn(*mask.grid(), |i| sq[i] <= r2)
}

/// Homogeneous erosion by `depth` mm.
pub fn peel(mask: &Mask, depth: f64) -> Mask {
    erode(mask, depth)
}

/// Sets every background voxel that is not 6-connected to the lattice border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let grid = *mask.grid();
    let mut outside = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for idx in 0..grid.len() {
        if !mask.get(idx) && grid.on_border(grid.coords(idx)) {
            outside[idx] = true;
            queue.push_back(idx);
        }
    }
    while let Some(v) = queue.pop_front() {
        let c = grid.coords(v);
        for d in Grid::N6 {
            if let Some(n) = grid.offset(c, d) {
                let ni = grid.index(n[0], n[1], n[2]);
                if !mask.get(ni) && !outside[ni] {
                    outside[ni] = true;
                    queue.push_back(ni);
                }
            }
        }
    }
    Mask::from_fn(grid, |i| !outside[i])
}

/// Morphological closing by `radius` mm followed by hole filling.
pub fn close_and_fill(mask: &Mask, radius: f64) -> Mask {
    let closed = if radius > 0.0 {
        erode(&dilate(mask, radius), radius)
    } else {
        mask.clone()
    };
    fill_holes(&closed)
}

/// A regional maximum of the interior distance field.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub voxels: Vec<usize>,
    /// Voxel of the plateau closest to its centroid.
    pub representative: usize,
    /// Distance to the background in mm.
    pub distance: f64,
}

impl Residual {
    pub fn point(&self, grid: &Grid) -> Vec3 {
        grid.world_of(self.representative)
    }
}

/// Ultimate erosion: plateaus (26-connected, equal distance value) of the
/// interior distance transform that have no strictly higher 26-neighbour.
/// Residuals are ordered by their lowest voxel index.
pub fn ultimate_erode(mask: &Mask) -> Result<Vec<Residual>> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("ultimate erosion of an empty mask".into()));
    }
    let grid = *mask.grid();
    let background = mask.complement();
    let sq = if background.is_empty() {
        vec![f64::INFINITY; grid.len()]
    } else {
        edt::squared_edt(&background)
    };
    let offsets = Connectivity::TwentySix.offsets();

    // voxels with a strictly higher neighbour can never be part of a maximum,
    // but they may still be reached while flooding a plateau
    let mut visited = vec![false; grid.len()];
    let mut residuals = Vec::new();
    let mut queue = VecDeque::new();
    let mut plateau = Vec::new();
    for start in 0..grid.len() {
        if !mask.get(start) || visited[start] {
            continue;
        }
        let value = sq[start];
        plateau.clear();
        visited[start] = true;
        queue.push_back(start);
        let mut is_max = true;
        while let Some(v) = queue.pop_front() {
            plateau.push(v);
            let c = grid.coords(v);
            for &d in &offsets {
                let Some(n) = grid.offset(c, d) else { continue };
                let ni = grid.index(n[0], n[1], n[2]);
                if !mask.get(ni) {
                    continue;
                }
                if sq[ni] > value {
                    is_max = false;
                } else if sq[ni] == value && !visited[ni] {
                    visited[ni] = true;
                    queue.push_back(ni);
                }
            }
        }
        if is_max {
            plateau.sort_unstable();
            let centroid = plateau.iter().fold(Vec3::zeros(), |acc, &v| acc + grid.world_of(v)) / plateau.len() as f64;
            let representative = *plateau
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (grid.world_of(a) - centroid).norm_squared();
                    let db = (grid.world_of(b) - centroid).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            residuals.push(Residual {
                voxels: plateau.clone(),
                representative,
                distance: value.sqrt(),
            });
        }
    }
    residuals.sort_by_key(|r| r.voxels[0]);
    Ok(residuals)
}

/// Dynamic of each residual: how far its distance value sits above the
/// highest saddle joining it to a higher maximum (mm). The highest residual
/// gets infinity. Computed by flooding the distance field from the top with a
/// union-find over 26-neighbours.
pub fn residual_dynamics(mask: &Mask, residuals: &[Residual]) -> Vec<f64> {
    let grid = *mask.grid();
    let background = mask.complement();
    let dist: Vec<f64> = if background.is_empty() {
        vec![f64::INFINITY; grid.len()]
    } else {
        edt::squared_edt(&background).into_iter().map(f64::sqrt).collect()
    };
    let mut owner = vec![u32::MAX; grid.len()];
    for (n, r) in residuals.iter().enumerate() {
        for &v in &r.voxels {
            owner[v] = n as u32;
        }
    }
    let mut order: Vec<usize> = mask.indices().collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));

    const NONE: usize = usize::MAX;
    let mut parent = vec![NONE; grid.len()];
    // per root: (peak distance, residual) of the highest maximum it holds
    let mut peak: Vec<(f64, u32)> = vec![(f64::NEG_INFINITY, u32::MAX); grid.len()];
    let mut dynamics = vec![f64::INFINITY; residuals.len()];
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let higher = |a: (f64, u32), b: (f64, u32)| {
        // residuals beat unowned plateaus; then larger distance; then lower index
        match (a.1 == u32::MAX, b.1 == u32::MAX) {
            (false, true) => true,
            (true, false) => false,
            _ => a.0 > b.0 || (a.0 == b.0 && a.1 < b.1),
        }
    };
    let offsets = Connectivity::TwentySix.offsets();
    for &v in &order {
        parent[v] = v;
        peak[v] = (dist[v], owner[v]);
        let c = grid.coords(v);
        for &d in &offsets {
            let Some(n) = grid.offset(c, d) else { continue };
            let ni = grid.index(n[0], n[1], n[2]);
            if parent[ni] == NONE {
                continue;
            }
            let (ra, rb) = (find(&mut parent, v), find(&mut parent, ni));
            if ra == rb {
                continue;
            }
            let (pa, pb) = (peak[ra], peak[rb]);
            let (win, lose, pw, pl) = if higher(pa, pb) {
                (ra, rb, pa, pb)
            } else {
                (rb, ra, pb, pa)
            };
            if pl.1 != u32::MAX && pw.1 != u32::MAX && pl.1 != pw.1 {
                dynamics[pl.1 as usize] = pl.0 - dist[v];
            }
            parent[lose] = win;
            peak[win] = pw;
        }
    }
    dynamics
}

/// Removal log of [`adaptive_erode_logged`]: voxel index and peeling round.
pub type RemovalLog = Vec<(usize, u32)>;

/// Repeatedly strips surface voxels (6-adjacent to background) brighter than
/// `high` HU until no surface voxel qualifies.
pub fn adaptive_erode(mask: &Mask, volume: &VoxelVolume, high: f64) -> Mask {
    adaptive_erode_logged(mask, volume, high).0
}

/// As [`adaptive_erode`], also returning the removal order. Each round removes
/// all qualifying surface voxels at once, so the result does not depend on
/// visiting order.
pub fn adaptive_erode_logged(mask: &Mask, volume: &VoxelVolume, high: f64) -> (Mask, RemovalLog) {
    assert_eq!(mask.grid().dims, volume.grid().dims, "mask/volume geometry mismatch");
    let grid = *mask.grid();
    let mut out = mask.clone();
    let mut log = Vec::new();
    let hot = |i: usize| volume.at(i) as f64 > high;
    let mut candidates: Vec<usize> = out.indices().filter(|&i| out.is_surface(i) && hot(i)).collect();
    let mut round = 0u32;
    let mut queued = vec![false; grid.len()];
    while !candidates.is_empty() {
        round += 1;
        for &v in &candidates {
            out.set(v, false);
            log.push((v, round));
        }
        let mut next = Vec::new();
        for &v in &candidates {
            let c = grid.coords(v);
            for d in Grid::N6 {
                if let Some(n) = grid.offset(c, d) {
                    let ni = grid.index(n[0], n[1], n[2]);
                    if out.get(ni) && !queued[ni] && hot(ni) {
                        queued[ni] = true;
                        next.push(ni);
                    }
                }
            }
        }
        for &v in &next {
            queued[v] = false;
        }
        next.sort_unstable();
        candidates = next;
    }
    (out, log)
}
