//! Per-vertebra segmentation: constraint region, histogram fit, balloon,
//! seed collection, volume growing, pedicle cut and trabecular extraction.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balloon::{evolve, BalloonParams};
use crate::constraints::{build_regions, CanalParams, ConstraintRegion, DiskParams, RegionParams, SeedSet};
use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};
use crate::mesh::{icosphere, TriangleMesh};
use crate::morphology::{
    adaptive_erode, close_and_fill, distance_transform, fill_holes, label, peel, residual_dynamics, skiz_partition,
    ultimate_erode, Connectivity, LabelMask, Mask,
};
use crate::threshold::{build_histogram, fit_bimodal, is_bone, GaussianPair};
use crate::volgrid::VoxelVolume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub canal: CanalParams,
    pub disk: DiskParams,
    pub region: RegionParams,
    pub balloon: BalloonParams,
    /// Initial balloon radius, mm.
    pub balloon_radius: f64,
    pub balloon_subdivisions: u32,
    /// When set, the balloon edge threshold is (mean₂ − mean₁) / (this × max
    /// spacing) instead of `balloon.edge_gradient`.
    pub edge_gradient_divisor: Option<f64>,
    /// Fixed (low, high) thresholds replacing the fitted ones.
    pub thresholds: Option<(f64, f64)>,
    /// Closing radius after growing, in voxels of the smallest spacing.
    pub close_radius_voxels: f64,
    /// Residuals this close to the body residual (mm) join it.
    pub merge_radius: f64,
    /// Residuals less than this far (mm) above their saddle are noise.
    pub min_dynamic: f64,
    /// Subcortical peel depth, mm; 0 disables peeling.
    pub peel_depth: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            canal: CanalParams::default(),
            disk: DiskParams::default(),
            region: RegionParams::default(),
            balloon: BalloonParams {
                profile_length: 12.0,
                smoothing_weight: 1.0,
                max_edge: 2.5,
                ..BalloonParams::default()
            },
            balloon_radius: 5.0,
            balloon_subdivisions: 2,
            edge_gradient_divisor: Some(6.0),
            thresholds: None,
            close_radius_voxels: 2.0,
            merge_radius: 3.0,
            min_dynamic: 1.0,
            peel_depth: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub non_convergence: bool,
    pub unimodal_histogram: bool,
    pub partial_canal: bool,
    pub empty_trabecular: bool,
}

impl Flags {
    pub fn any(&self) -> bool {
        self.non_convergence || self.unimodal_histogram || self.partial_canal || self.empty_trabecular
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Constraints,
    Threshold,
    Balloon,
    Seeds,
    Grow,
    Cut,
    Trabecular,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Constraints => "constraints",
            Stage::Threshold => "threshold",
            Stage::Balloon => "balloon",
            Stage::Seeds => "seeds",
            Stage::Grow => "grow",
            Stage::Cut => "cut",
            Stage::Trabecular => "trabecular",
        };
        f.write_str(s)
    }
}

/// A stage that failed, with whatever was produced before it.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: Error,
    pub flags: Flags,
    pub partial: Option<Box<VertebraResult>>,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.error)
    }
}

/// Masks live on the full input grid.
#[derive(Debug, Clone)]
pub struct VertebraResult {
    pub region: ConstraintRegion,
    pub mesh: TriangleMesh,
    pub body: Mask,
    pub process: Mask,
    pub trabecular: Mask,
    pub peeled: Mask,
    pub cut: Mask,
    pub pair: GaussianPair,
    pub balloon_iterations: usize,
    pub balloon_max_displacement: f64,
    pub flags: Flags,
}

impl VertebraResult {
    /// One label per voxel; nested sets are painted outermost first and the
    /// cut surface last.
    pub fn label_mask(&self) -> LabelMask {
        let mut out = LabelMask::new(*self.body.grid());
        out.paint(&self.body, label::BODY);
        out.paint(&self.process, label::PROCESS);
        out.paint(&self.trabecular, label::TRABECULAR);
        out.paint(&self.peeled, label::TRABECULAR_PEELED);
        out.paint(&self.cut, label::CUT_SURFACE);
        out
    }
}

pub type VertebraOutcome = std::result::Result<VertebraResult, StageFailure>;

fn fail(stage: Stage, error: Error, flags: Flags) -> StageFailure {
    StageFailure {
        stage,
        error,
        flags,
        partial: None,
    }
}

/// Voxels on the mesh surface (every voxel box touched by a triangle) that
/// classify as bone.
pub fn collect_seeds(mesh: &TriangleMesh, volume: &VoxelVolume, pair: &GaussianPair) -> Result<Vec<usize>> {
    let hit = surface_voxels(mesh, volume.grid());
    let seeds: Vec<usize> = hit.indices().filter(|&i| is_bone(volume, i, pair)).collect();
    if seeds.is_empty() {
        return Err(Error::Balloon("no bone voxels on the balloon surface".into()));
    }
    Ok(seeds)
}

/// Voxels touched by the surface of a closed mesh plus everything it encloses.
pub fn enclosed_voxels(mesh: &TriangleMesh, grid: &Grid) -> Mask {
    fill_holes(&surface_voxels(mesh, grid))
}

fn surface_voxels(mesh: &TriangleMesh, grid: &Grid) -> Mask {
    let grid = *grid;
    let mut hit = Mask::empty(grid);
    let half = Vec3::new(grid.spacing[0], grid.spacing[1], grid.spacing[2]) * 0.5;
    for t in mesh.triangles() {
        let tri = [mesh.position(t[0]), mesh.position(t[1]), mesh.position(t[2])];
        let lo = tri[0].inf(&tri[1]).inf(&tri[2]);
        let hi = tri[0].sup(&tri[1]).sup(&tri[2]);
        let a = grid.continuous_index(&lo);
        let b = grid.continuous_index(&hi);
        let mut range = [(0usize, 0usize); 3];
        let mut empty = false;
        for ax in 0..3 {
            let first = (a[ax] - 0.5).ceil().max(0.0);
            let last = (b[ax] + 0.5).floor().min(grid.dims[ax] as f64 - 1.0);
            if last < first {
                empty = true;
                break;
            }
            range[ax] = (first as usize, last as usize);
        }
        if empty {
            continue;
        }
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let idx = grid.index(i, j, k);
                    if !hit.get(idx) && triangle_box_overlap(&grid.world(i, j, k), &half, &tri) {
                        hit.set(idx, true);
                    }
                }
            }
        }
    }
    hit
}

/// Separating-axis test between a triangle and an axis-aligned box.
fn triangle_box_overlap(center: &Vec3, half: &Vec3, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let axes_hit = |axis: &Vec3| {
        let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
        let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        let min = p[0].min(p[1]).min(p[2]);
        let max = p[0].max(p[1]).max(p[2]);
        !(min > r || max < -r)
    };
    let unit = [Vec3::x(), Vec3::y(), Vec3::z()];
    for u in &unit {
        if !axes_hit(u) {
            return false;
        }
    }
    let n = e[0].cross(&e[1]);
    if !axes_hit(&n) {
        return false;
    }
    for u in &unit {
        for ed in &e {
            let a = u.cross(ed);
            if a.norm_squared() > 0.0 && !axes_hit(&a) {
                return false;
            }
        }
    }
    true
}

/// 6-connected growth from `seeds` through bone voxels inside the region,
/// joined with `enclosed`, closed and hole-filled, then clipped to the region.
pub fn grow(
    volume: &VoxelVolume,
    seeds: &[usize],
    enclosed: &Mask,
    region: &ConstraintRegion,
    pair: &GaussianPair,
    close_radius: f64,
) -> Mask {
    let grid = *volume.grid();
    let inside = region.rasterize(&grid);
    let mut grown = Mask::empty(grid);
    let mut queue = VecDeque::new();
    for &s in seeds {
        if inside.get(s) && !grown.get(s) {
            grown.set(s, true);
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let c = grid.coords(v);
        for d in Grid::N6 {
            if let Some(n) = grid.offset(c, d) {
                let ni = grid.index(n[0], n[1], n[2]);
                if !grown.get(ni) && inside.get(ni) && is_bone(volume, ni, pair) {
                    grown.set(ni, true);
                    queue.push_back(ni);
                }
            }
        }
    }
    close_and_fill(&grown.or(enclosed), close_radius).and(&inside)
}

/// Body zone, process zones and the contact surface between them.
#[derive(Debug, Clone)]
pub struct CutResult {
    pub body: Mask,
    pub process: Mask,
    pub cut: Mask,
}

/// Splits a vertebra mask at the thinnest parts of its pedicles.
///
/// Ultimate-erosion residuals with a dynamic below `min_dynamic` mm are
/// dropped as noise. Each remaining residual is reconstructed by its own distance value
/// (the union of its maximal balls). Residuals chained to the body residual
/// within `merge_radius` mm form the body seed, the rest the process seed, and
/// the influence zones of the two seeds inside the mask give the partition.
pub fn cut_processes(mask: &Mask, body_center: &Vec3, merge_radius: f64, min_dynamic: f64) -> Result<CutResult> {
    let grid = *mask.grid();
    let all = ultimate_erode(mask)?;
    let dynamics = residual_dynamics(mask, &all);
    let residuals: Vec<_> = all
        .into_iter()
        .zip(dynamics)
        .filter(|(_, h)| *h >= min_dynamic)
        .map(|(r, _)| r)
        .collect();
    let centre = grid
        .nearest_voxel(body_center)
        .map(|c| grid.index(c[0], c[1], c[2]))
        .filter(|&i| mask.get(i));

    // body residual: the one whose influence zone holds the centre
    let mut owner = vec![0u32; grid.len()];
    for (n, r) in residuals.iter().enumerate() {
        for &v in &r.voxels {
            owner[v] = n as u32 + 1;
        }
    }
    let body_idx = match centre {
        Some(c) => {
            let zones = skiz_partition(&owner, mask)?;
            match zones.label(c) {
                0 => None,
                l => Some(l as usize - 1),
            }
        }
        None => None,
    };
    let body_idx = match body_idx {
        Some(b) => b,
        None => residuals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.distance.total_cmp(&b.1.distance).then(b.0.cmp(&a.0)))
            .map(|(n, _)| n)
            .ok_or_else(|| Error::EmptyMask("no residual for the body".into()))?,
    };

    // chain-merge residuals near the body group, measured voxel to voxel, and
    // residuals inside the group's maximal balls
    let mut in_body = vec![false; residuals.len()];
    in_body[body_idx] = true;
    let r2 = merge_radius * merge_radius;
    loop {
        let members = || residuals.iter().zip(&in_body).filter(|r| *r.1).map(|r| r.0);
        let mut group = Mask::empty(grid);
        for r in members() {
            for &v in &r.voxels {
                group.set(v, true);
            }
        }
        let near = distance_transform(&group)?;
        let balls = reconstruct(&grid, mask, members())?;
        let mut grew = false;
        for (n, r) in residuals.iter().enumerate() {
            if !in_body[n] && r.voxels.iter().any(|&v| near.sq(v) <= r2 || balls.get(v)) {
                in_body[n] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }

    let body_seed = reconstruct(
        &grid,
        mask,
        residuals.iter().zip(&in_body).filter(|r| *r.1).map(|r| r.0),
    )?;
    let process_seed = reconstruct(
        &grid,
        mask,
        residuals.iter().zip(&in_body).filter(|r| !*r.1).map(|r| r.0),
    )?;
    let seeds: Vec<u32> = (0..grid.len())
        .map(|i| {
            if body_seed.get(i) {
                1
            } else if process_seed.get(i) {
                2
            } else {
                0
            }
        })
        .collect();
    let zones = skiz_partition(&seeds, mask)?;
    Ok(CutResult {
        body: zones.zone(1),
        process: zones.zone(2),
        cut: zones.cut().clone(),
    })
}

/// Mask voxels within the maximal ball of any residual voxel. Residual voxels
/// are grouped by distance value so each group needs one transform.
fn reconstruct<'a>(
    grid: &Grid,
    mask: &Mask,
    residuals: impl Iterator<Item = &'a crate::morphology::Residual>,
) -> Result<Mask> {
    let mut levels: Vec<(f64, Vec<usize>)> = Vec::new();
    for r in residuals {
        match levels.iter_mut().find(|l| l.0 == r.distance) {
            Some(l) => l.1.extend_from_slice(&r.voxels),
            None => levels.push((r.distance, r.voxels.clone())),
        }
    }
    let mut out = Mask::empty(*grid);
    for (d, voxels) in levels {
        let mut src = Mask::empty(*grid);
        for v in voxels {
            src.set(v, true);
        }
        let field = distance_transform(&src)?;
        let d2 = d * d;
        for i in mask.indices() {
            if field.sq(i) <= d2 {
                out.set(i, true);
            }
        }
    }
    Ok(out)
}

/// Trabecular compartment (largest 6-connected part left by grey-value
/// erosion of the body) and its peeled core.
pub fn extract_trabecular(
    body: &Mask,
    volume: &VoxelVolume,
    pair: &GaussianPair,
    peel_depth: f64,
) -> Result<(Mask, Mask)> {
    if body.is_empty() {
        return Err(Error::EmptyMask("body mask is empty".into()));
    }
    // the body's partial-volume skin is never hot and survives as debris
    // outside the eroded shell
    let trabecular = adaptive_erode(body, volume, pair.high).largest_component(Connectivity::Six);
    if trabecular.is_empty() {
        return Err(Error::EmptyMask("adaptive erosion removed the whole body".into()));
    }
    let peeled = if peel_depth > 0.0 {
        peel(&trabecular, peel_depth)
    } else {
        trabecular.clone()
    };
    Ok((trabecular, peeled))
}

/// Tight voxel box around the region's voxels, widened by `margin` voxels.
fn region_box(region: &ConstraintRegion, grid: &Grid, margin: usize) -> Result<([usize; 3], [usize; 3])> {
    let (blo, bhi) = region.voxel_bounds(grid);
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for k in blo[2]..=bhi[2] {
        for j in blo[1]..=bhi[1] {
            for i in blo[0]..=bhi[0] {
                if region.contains(&grid.world(i, j, k)) {
                    for (a, c) in [i, j, k].into_iter().enumerate() {
                        lo[a] = lo[a].min(c);
                        hi[a] = hi[a].max(c);
                    }
                }
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(Error::EmptyRegion("constraint region holds no voxel centre".into()));
    }
    for a in 0..3 {
        lo[a] = lo[a].saturating_sub(margin);
        hi[a] = (hi[a] + margin).min(grid.dims[a] - 1);
    }
    Ok((lo, hi))
}

/// Runs every stage for one vertebra inside its constraint region.
pub fn segment_vertebra(volume: &VoxelVolume, region: &ConstraintRegion, params: &PipelineParams) -> VertebraOutcome {
    let mut flags = Flags {
        partial_canal: canal_partial(region),
        ..Flags::default()
    };
    let full = *volume.grid();
    let (lo, hi) = region_box(region, &full, 2).map_err(|e| fail(Stage::Constraints, e, flags))?;
    let crop = volume.crop(lo, hi).map_err(|e| fail(Stage::Constraints, e, flags))?;
    let grid = *crop.grid();

    let pair = build_histogram(&crop, region)
        .and_then(|h| fit_bimodal(&h))
        .map_err(|e| {
            if matches!(e, Error::Unimodal(_)) {
                flags.unimodal_histogram = true;
            }
            fail(Stage::Threshold, e, flags)
        })?;
    let pair = match params.thresholds {
        Some((low, high)) => GaussianPair { low, high, ..pair },
        None => pair,
    };

    let mut bp = params.balloon;
    if let Some(div) = params.edge_gradient_divisor {
        let max_spacing = grid.spacing.iter().cloned().fold(0.0, f64::max);
        bp.edge_gradient = (pair.bone.mean - pair.soft.mean) / (div * max_spacing);
    }
    let smooth = crop.box_smoothed();
    let init = icosphere(region.center, params.balloon_radius, params.balloon_subdivisions);
    let run = evolve(&init, &smooth, region, &bp).map_err(|e| fail(Stage::Balloon, e, flags))?;
    flags.non_convergence = !run.converged;

    let seeds = collect_seeds(&run.mesh, &crop, &pair).map_err(|e| fail(Stage::Seeds, e, flags))?;
    let enclosed = enclosed_voxels(&run.mesh, &grid);
    let grown = grow(
        &crop,
        &seeds,
        &enclosed,
        region,
        &pair,
        params.close_radius_voxels * grid.min_spacing(),
    );
    let cut = cut_processes(&grown, &region.center, params.merge_radius, params.min_dynamic)
        .map_err(|e| fail(Stage::Cut, e, flags))?;

    let embed = |m: &Mask| m.embed(&full, lo);
    let mut result = VertebraResult {
        region: region.clone(),
        mesh: run.mesh,
        body: embed(&cut.body),
        process: embed(&cut.process),
        trabecular: Mask::empty(full),
        peeled: Mask::empty(full),
        cut: embed(&cut.cut),
        pair: pair.clone(),
        balloon_iterations: run.iterations,
        balloon_max_displacement: run.final_max_displacement,
        flags,
    };
    match extract_trabecular(&cut.body, &crop, &pair, params.peel_depth) {
        Ok((t, p)) => {
            result.trabecular = embed(&t);
            result.peeled = embed(&p);
            Ok(result)
        }
        Err(e) => {
            result.flags.empty_trabecular = true;
            let flags = result.flags;
            Err(StageFailure {
                stage: Stage::Trabecular,
                error: e,
                flags,
                partial: Some(Box::new(result)),
            })
        }
    }
}

/// The canal was lost, or is not enclosed by bone at the vertebra centre.
fn canal_partial(region: &ConstraintRegion) -> bool {
    if region.canal.lost {
        return true;
    }
    let z = region.center.z;
    region
        .canal
        .slices
        .iter()
        .min_by(|a, b| (a.center.z - z).abs().total_cmp(&(b.center.z - z).abs()))
        .is_none_or(|s| s.open)
}

/// Builds all constraint regions and segments every vertebra; vertebrae run
/// concurrently.
pub fn segment_all(volume: &VoxelVolume, seeds: &SeedSet, params: &PipelineParams) -> Result<Vec<VertebraOutcome>> {
    let (_, regions) = build_regions(volume, seeds, &params.canal, &params.disk, &params.region)?;
    Ok(regions
        .into_par_iter()
        .map(|r| match r {
            Ok(region) => segment_vertebra(volume, &region, params),
            Err(e) => Err(fail(Stage::Constraints, e, Flags::default())),
        })
        .collect())
}
