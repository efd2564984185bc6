//! Per-vertebra search spaces: spinal canal tracking, intervertebral disk
//! planes and the capped elliptic cylinder with the canal cut out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};
use crate::morphology::{distance_transform, Mask};
use crate::volgrid::VoxelVolume;

/// Oriented plane; `normal` is unit length and points along the spine (+z side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("plane normal has zero length".into()));
        }
        Ok(Plane {
            point,
            normal: normal / n,
        })
    }

    pub fn axial(z: f64) -> Self {
        Plane {
            point: Vec3::new(0.0, 0.0, z),
            normal: Vec3::z(),
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Manual replacement of one or both capping planes of a vertebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneOverride {
    pub vertebra: usize,
    #[serde(default)]
    pub lower: Option<Plane>,
    #[serde(default)]
    pub upper: Option<Plane>,
}

/// Operator input: one centre per vertebral body (ascending z) and one point
/// inside the spinal canal (posterior = larger y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub centers: Vec<Vec3>,
    pub canal: Vec3,
    #[serde(default)]
    pub plane_overrides: Vec<PlaneOverride>,
}

impl SeedSet {
    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(Error::Degenerate("no vertebra centre given".into()));
        }
        if self.centers.windows(2).any(|w| w[1].z <= w[0].z) {
            return Err(Error::Degenerate("vertebra centres must ascend strictly in z".into()));
        }
        if self.centers.iter().any(|c| c.y >= self.canal.y) {
            return Err(Error::Degenerate(
                "canal seed must lie posterior (larger y) to every centre".into(),
            ));
        }
        if let Some(o) = self.plane_overrides.iter().find(|o| o.vertebra >= self.centers.len()) {
            return Err(Error::Degenerate(format!(
                "plane override for unknown vertebra {}",
                o.vertebra
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanalParams {
    /// A voxel is bone when its 27-neighbourhood mean exceeds this, HU.
    pub bone_threshold: f64,
    /// Tracking stops when the inscribed radius falls below this, mm.
    pub min_radius: f64,
    /// Larger inscribed disks mean the canal is not enclosed in that slice, mm.
    pub max_radius: f64,
}

impl Default for CanalParams {
    fn default() -> Self {
        CanalParams {
            bone_threshold: 300.0,
            min_radius: 1.0,
            max_radius: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanalSlice {
    pub slice: usize,
    pub center: Vec3,
    pub radius: f64,
    /// The canal was not enclosed by bone here; centre carried over and
    /// radius interpolated from enclosed slices.
    pub open: bool,
}

/// Canal centreline, one sample per tracked axial slice in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanalTrack {
    pub slices: Vec<CanalSlice>,
    /// Tracking ended on a radius collapse before reaching the volume end.
    pub lost: bool,
}

impl CanalTrack {
    /// Straight canal along z through `(x, y)`.
    pub fn straight(x: f64, y: f64, z_range: (f64, f64), radius: f64) -> Self {
        let slices = [z_range.0, z_range.1]
            .iter()
            .enumerate()
            .map(|(slice, &z)| CanalSlice {
                slice,
                center: Vec3::new(x, y, z),
                radius,
                open: false,
            })
            .collect();
        CanalTrack { slices, lost: false }
    }

    /// Centre and radius at height `z`, linearly interpolated; `None`
    /// outside the tracked range.
    pub fn at_z(&self, z: f64) -> Option<(Vec3, f64)> {
        let s = &self.slices;
        let first = s.first()?;
        let last = s.last()?;
        if z < first.center.z || z > last.center.z {
            return None;
        }
        let hi = s.partition_point(|c| c.center.z < z).min(s.len() - 1);
        if hi == 0 || s[hi].center.z == z {
            return Some((s[hi].center, s[hi].radius));
        }
        let (a, b) = (&s[hi - 1], &s[hi]);
        let t = (z - a.center.z) / (b.center.z - a.center.z);
        Some((a.center.lerp(&b.center, t), a.radius + t * (b.radius - a.radius)))
    }
}

/// Tracks the spinal canal slice by slice from `seed` with the largest
/// inscribed disk of non-bone voxels that contains the tracked centre.
pub fn detect_canal(volume: &VoxelVolume, seed: &Vec3, params: &CanalParams) -> Result<CanalTrack> {
    let grid = volume.grid();
    let [nx, ny, nz] = grid.dims;
    let c = grid
        .nearest_voxel(seed)
        .ok_or_else(|| Error::Degenerate("canal seed outside the volume".into()))?;
    let seed_value = volume.neighbourhood_mean(c);
    if seed_value > params.bone_threshold {
        return Err(Error::SeedInBone {
            value: seed_value,
            threshold: params.bone_threshold,
        });
    }
    let slice_grid = Grid::new([nx, ny, 1], grid.spacing, [0.0; 3])?;
    let half_pitch = 0.5 * grid.spacing[0].min(grid.spacing[1]);

    // (i, j) lattice position of the best disk centre and its radius; None if open
    let track_slice = |k: usize, centre: (f64, f64)| -> Option<((f64, f64), f64)> {
        let bone = Mask::from_fn(slice_grid, |idx| {
            let [i, j, _] = slice_grid.coords(idx);
            volume.neighbourhood_mean([i, j, k]) > params.bone_threshold
        });
        let Ok(field) = distance_transform(&bone) else {
            return None;
        };
        let mut best: Option<(f64, usize)> = None;
        for idx in 0..slice_grid.len() {
            let d2 = field.sq(idx);
            let [i, j, _] = slice_grid.coords(idx);
            let dx = (i as f64 - centre.0) * grid.spacing[0];
            let dy = (j as f64 - centre.1) * grid.spacing[1];
            if d2 > 0.0 && dx * dx + dy * dy <= d2 && best.is_none_or(|b| d2 > b.0) {
                best = Some((d2, idx));
            }
        }
        let (d2, idx) = best?;
        let [i, j, _] = slice_grid.coords(idx);
        Some(((i as f64, j as f64), d2.sqrt() - half_pitch))
    };

    let mut samples: Vec<(usize, (f64, f64), Option<f64>)> = Vec::new();
    let mut lost = false;
    let start = (c[0] as f64, c[1] as f64);
    for dir in [1isize, -1] {
        let mut centre = start;
        let mut k = c[2] as isize;
        if dir < 0 {
            k -= 1;
        }
        while k >= 0 && (k as usize) < nz {
            match track_slice(k as usize, centre) {
                Some((_, r)) if r < params.min_radius => {
                    lost = true;
                    break;
                }
                Some((q, r)) if r <= params.max_radius => {
                    centre = q;
                    samples.push((k as usize, q, Some(r)));
                }
                _ => samples.push((k as usize, centre, None)),
            }
            k += dir;
        }
    }
    samples.sort_by_key(|s| s.0);
    if samples.iter().all(|s| s.2.is_none()) {
        return Err(Error::Degenerate("canal is not enclosed by bone in any slice".into()));
    }

    let closed: Vec<(usize, f64)> = samples.iter().filter_map(|s| s.2.map(|r| (s.0, r))).collect();
    let interpolate = |k: usize| -> f64 {
        let hi = closed.partition_point(|&(s, _)| s < k);
        match (hi.checked_sub(1).map(|l| closed[l]), closed.get(hi)) {
            (Some(a), Some(b)) => a.1 + (b.1 - a.1) * (k - a.0) as f64 / (b.0 - a.0) as f64,
            (Some(a), None) => a.1,
            (None, Some(b)) => b.1,
            (None, None) => unreachable!(),
        }
    };
    let slices = samples
        .into_iter()
        .map(|(k, (i, j), r)| CanalSlice {
            slice: k,
            center: Vec3::new(
                grid.origin[0] + i * grid.spacing[0],
                grid.origin[1] + j * grid.spacing[1],
                grid.origin[2] + k as f64 * grid.spacing[2],
            ),
            radius: r.unwrap_or_else(|| interpolate(k)),
            open: r.is_none(),
        })
        .collect();
    Ok(CanalTrack { slices, lost })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiskParams {
    /// Body height assumed when fewer than two centres are given, mm.
    pub default_height: f64,
    /// Probe disk radius as a fraction of the centre-to-canal distance.
    pub probe_factor: f64,
    /// Probe disk radius when no canal distance is known, mm.
    pub probe_radius: f64,
    /// Sweep step along the centre-to-centre axis, mm.
    pub step: f64,
}

impl Default for DiskParams {
    fn default() -> Self {
        DiskParams {
            default_height: 30.0,
            probe_factor: 0.5,
            probe_radius: 10.0,
            step: 0.25,
        }
    }
}

fn orthonormal_frame(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (u, v)
}

/// Mean trilinear HU over a disk of `radius` in the plane.
fn disk_mean(volume: &VoxelVolume, plane: &Plane, radius: f64) -> f64 {
    let (u, v) = orthonormal_frame(&plane.normal);
    let step = volume.grid().min_spacing();
    let n = (radius / step).floor() as i64;
    let (mut sum, mut count) = (0.0, 0usize);
    for a in -n..=n {
        for b in -n..=n {
            let (x, y) = (a as f64 * step, b as f64 * step);
            if x * x + y * y <= radius * radius {
                sum += volume.sample_trilinear(&(plane.point + u * x + v * y));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// One disk plane per adjacent centre pair plus mirrored end planes, so the
/// result holds `centers.len() + 1` planes in ascending order.
pub fn fit_disk_planes(
    volume: &VoxelVolume,
    seeds: &SeedSet,
    canal: Option<&CanalTrack>,
    params: &DiskParams,
) -> Vec<Plane> {
    let c = &seeds.centers;
    if c.len() < 2 {
        let z = c.first().map_or(0.0, |p| p.z);
        let h = 0.5 * params.default_height;
        return vec![Plane::axial(z - h), Plane::axial(z + h)];
    }
    let probe = |p: &Vec3| {
        canal
            .and_then(|t| t.at_z(p.z))
            .map(|(cc, _)| params.probe_factor * in_plane_distance(p, &cc))
            .unwrap_or(params.probe_radius)
    };

    let mut gaps = Vec::with_capacity(c.len() - 1);
    for w in c.windows(2) {
        let axis = (w[1] - w[0]).normalize();
        let len = (w[1] - w[0]).norm();
        let radius = probe(&w[0].lerp(&w[1], 0.5));
        let steps = ((0.5 * len) / params.step).floor() as usize;
        let profile: Vec<(f64, f64)> = (0..=steps)
            .map(|s| {
                let t = 0.25 * len + s as f64 * params.step;
                let plane = Plane {
                    point: w[0] + axis * t,
                    normal: axis,
                };
                (t, disk_mean(volume, &plane, radius))
            })
            .collect();
        // centre of the low run around the minimum, below half the range
        let (imin, &(_, min)) = profile
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        let max = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let cut = min + 0.5 * (max - min);
        let mut lo = imin;
        while lo > 0 && profile[lo - 1].1 <= cut {
            lo -= 1;
        }
        let mut hi = imin;
        while hi + 1 < profile.len() && profile[hi + 1].1 <= cut {
            hi += 1;
        }
        let t = 0.5 * (profile[lo].0 + profile[hi].0);
        gaps.push(Plane {
            point: w[0] + axis * t,
            normal: axis,
        });
    }

    let first = &gaps[0];
    let last = gaps.last().unwrap();
    let below = Plane {
        point: c[0] - first.normal * first.signed_distance(&c[0]).abs(),
        normal: first.normal,
    };
    let n = c.len() - 1;
    let above = Plane {
        point: c[n] + last.normal * last.signed_distance(&c[n]).abs(),
        normal: last.normal,
    };
    let mut planes = vec![below];
    planes.extend(gaps);
    planes.push(above);
    planes
}

fn in_plane_distance(p: &Vec3, q: &Vec3) -> f64 {
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionParams {
    /// Cylinder radius as a multiple of the centre-to-canal distance.
    pub radius_factor: f64,
    /// Extra radius of the excluded canal tube, mm.
    pub canal_margin: f64,
}

impl Default for RegionParams {
    fn default() -> Self {
        RegionParams {
            radius_factor: 1.3,
            canal_margin: 2.0,
        }
    }
}

/// Elliptic cylinder capped by two planes minus a tube around the canal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRegion {
    pub center: Vec3,
    pub axis: Vec3,
    /// Lateral and anterior-posterior unit directions across the axis.
    pub frame: [Vec3; 2],
    pub radii: [f64; 2],
    pub lower: Plane,
    pub upper: Plane,
    pub canal: CanalTrack,
    pub canal_margin: f64,
}

pub fn build_region(
    center: &Vec3,
    planes: (Plane, Plane),
    canal: &CanalTrack,
    params: &RegionParams,
) -> Result<ConstraintRegion> {
    let (lower, upper) = planes;
    if lower.normal.dot(&upper.normal) < 0.5 {
        return Err(Error::Degenerate(
            "capping planes tilt more than 60 degrees apart".into(),
        ));
    }
    if lower.signed_distance(center) <= 0.0 || upper.signed_distance(center) >= 0.0 {
        return Err(Error::Degenerate("capping planes do not bracket the centre".into()));
    }
    let (cc, _) = canal
        .at_z(center.z)
        .ok_or_else(|| Error::Degenerate("canal not tracked at the vertebra centre".into()))?;
    let axis = (lower.normal + upper.normal).normalize();
    let to_canal = cc - center;
    let ap = to_canal - axis * to_canal.dot(&axis);
    let d = ap.norm();
    if !(d > 0.0) {
        return Err(Error::Degenerate("canal centreline passes through the centre".into()));
    }
    let ap = ap / d;
    let lateral = ap.cross(&axis);
    let r = params.radius_factor * d;
    Ok(ConstraintRegion {
        center: *center,
        axis,
        frame: [lateral, ap],
        radii: [r, r],
        lower,
        upper,
        canal: canal.clone(),
        canal_margin: params.canal_margin,
    })
}

impl ConstraintRegion {
    pub fn contains(&self, p: &Vec3) -> bool {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return false;
        }
        if self.lower.signed_distance(p) < 0.0 || self.upper.signed_distance(p) > 0.0 {
            return false;
        }
        let w = p - self.center;
        let a = w.dot(&self.frame[0]) / self.radii[0];
        let b = w.dot(&self.frame[1]) / self.radii[1];
        if a * a + b * b > 1.0 {
            return false;
        }
        !self.in_canal(p)
    }

    pub fn in_canal(&self, p: &Vec3) -> bool {
        match self.canal.at_z(p.z) {
            Some((c, r)) => in_plane_distance(p, &c) < r + self.canal_margin,
            None => false,
        }
    }

    /// Voxels whose centres lie inside the region.
    pub fn rasterize(&self, grid: &Grid) -> Mask {
        let (lo, hi) = self.voxel_bounds(grid);
        let mut m = Mask::empty(*grid);
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    if self.contains(&grid.world(i, j, k)) {
                        m.set(grid.index(i, j, k), true);
                    }
                }
            }
        }
        m
    }

    /// Axis-aligned voxel box enclosing the region, clipped to the grid.
    pub fn voxel_bounds(&self, grid: &Grid) -> ([usize; 3], [usize; 3]) {
        let r = self.radii[0].max(self.radii[1]);
        let half = self
            .lower
            .signed_distance(&self.center)
            .abs()
            .max(self.upper.signed_distance(&self.center).abs());
        // the caps may be oblique: bound by the cylinder's bounding sphere
        let reach = (r * r + (2.0 * half) * (2.0 * half)).sqrt() + r;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let c = (self.center[a] - grid.origin[a]) / grid.spacing[a];
            let ext = reach / grid.spacing[a];
            lo[a] = (c - ext).floor().max(0.0) as usize;
            hi[a] = ((c + ext).ceil().max(0.0) as usize).min(grid.dims[a] - 1);
        }
        (lo, hi)
    }
}

/// Canal track, disk planes and one region per seed centre, with manual
/// plane overrides applied.
pub fn build_regions(
    volume: &VoxelVolume,
    seeds: &SeedSet,
    canal_params: &CanalParams,
    disk_params: &DiskParams,
    region_params: &RegionParams,
) -> Result<(CanalTrack, Vec<Result<ConstraintRegion>>)> {
    seeds.validate()?;
    let canal = detect_canal(volume, &seeds.canal, canal_params)?;
    let planes = fit_disk_planes(volume, seeds, Some(&canal), disk_params);
    let regions = seeds
        .centers
        .iter()
        .enumerate()
        .map(|(v, c)| {
            let mut pair = (planes[v], planes[v + 1]);
            for o in seeds.plane_overrides.iter().filter(|o| o.vertebra == v) {
                if let Some(p) = o.lower {
                    pair.0 = Plane::new(p.point, p.normal)?;
                }
                if let Some(p) = o.upper {
                    pair.1 = Plane::new(p.point, p.normal)?;
                }
            }
            build_region(c, pair, &canal, region_params)
        })
        .collect();
    Ok((canal, regions))
}
