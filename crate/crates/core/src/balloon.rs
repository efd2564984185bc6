//! Deformable balloon: an explicit triangle mesh pulled onto rising edges by
//! radial grey-value profiles and held together by a spring network.
//!
//! Each vertex obeys `m·p̈ + γ·ṗ = f` with
//! `f = w_img·f_img + w_smg·f_smg + w_inf·f_inf`. The default integration is
//! the overdamped (position-based) limit `p ← p + clamp(Δt²·f / m)`, which is
//! stable and shares the fixed points of the second-order system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintRegion;
use crate::error::{Error, Result};
use crate::grid::Vec3;
use crate::mesh::TriangleMesh;
use crate::volgrid::VoxelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Velocity reset every step.
    PositionBased,
    /// Semi-implicit Euler on `m·p̈ + γ·ṗ = f`.
    Newtonian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalloonParams {
    pub mass: f64,
    pub damping: f64,
    pub smoothing_weight: f64,
    pub image_weight: f64,
    pub inflation_weight: f64,
    /// Profile half-length along the normal, mm.
    pub profile_length: f64,
    pub profile_step: f64,
    pub time_step: f64,
    /// Per-step displacement cap, mm; `None` means half the smallest spacing.
    pub max_displacement: Option<f64>,
    /// Converged once every vertex moves less than this in a step, mm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Minimum outward-rising gradient that attracts a vertex, HU/mm.
    pub edge_gradient: f64,
    /// Minimum cosine between the profile and the 3-D grey-value gradient at
    /// an attracting edge; edges met at a grazing angle are skipped.
    pub edge_alignment: f64,
    /// Refinement runs every this many iterations.
    pub insertion_interval: usize,
    pub max_edge: f64,
    pub min_displacement: f64,
    pub max_vertices: usize,
    pub integration: Integration,
}

impl Default for BalloonParams {
    fn default() -> Self {
        BalloonParams {
            mass: 1.0,
            damping: 0.0,
            smoothing_weight: 0.4,
            image_weight: 1.0,
            inflation_weight: 0.0,
            profile_length: 6.0,
            profile_step: 0.25,
            time_step: 0.7,
            max_displacement: None,
            tolerance: 0.01,
            max_iterations: 500,
            edge_gradient: 100.0,
            edge_alignment: 0.7,
            insertion_interval: 10,
            max_edge: 1.5,
            min_displacement: 0.05,
            max_vertices: 12_000,
            integration: Integration::PositionBased,
        }
    }
}

impl BalloonParams {
    pub fn validate(&self, min_spacing: f64) -> Result<()> {
        if self.mass != 1.0 || self.inflation_weight != 0.0 {
            return Err(Error::Balloon("mass is fixed to 1 and inflation to 0".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing_weight) {
            return Err(Error::Balloon("smoothing weight must lie in [0, 1]".into()));
        }
        if !(self.profile_step > 0.0 && self.profile_step < min_spacing) {
            return Err(Error::Balloon(
                "profile step must be positive and below the voxel spacing".into(),
            ));
        }
        if !(self.profile_length > self.profile_step) || !(self.time_step > 0.0) || self.damping < 0.0 {
            return Err(Error::Balloon(
                "profile length, time step and damping out of range".into(),
            ));
        }
        if !(self.max_edge > 0.0 && self.min_displacement > 0.0) {
            return Err(Error::Balloon("insertion thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn step_cap(&self, min_spacing: f64) -> f64 {
        self.max_displacement.unwrap_or(0.5 * min_spacing)
    }
}

/// Signed distance along `normal` to the strongest outward-rising edge on the
/// profile through `origin`, or `None` if no gradient exceeds the threshold.
/// Edges behind a falling edge of at least half their strength, seen from
/// `origin`, are not candidates.
pub fn image_force(volume: &VoxelVolume, origin: &Vec3, normal: &Vec3, params: &BalloonParams) -> Option<f64> {
    profile_edge(volume, origin, normal, params, None)
}

/// As [`image_force`], ignoring profile samples outside `region`.
pub fn image_force_in(
    volume: &VoxelVolume,
    origin: &Vec3,
    normal: &Vec3,
    params: &BalloonParams,
    region: &ConstraintRegion,
) -> Option<f64> {
    profile_edge(volume, origin, normal, params, Some(region))
}

fn profile_edge(
    volume: &VoxelVolume,
    origin: &Vec3,
    normal: &Vec3,
    params: &BalloonParams,
    region: Option<&ConstraintRegion>,
) -> Option<f64> {
    let h = params.profile_step;
    let half = (params.profile_length / h).round() as i64;
    let samples: Vec<Option<f64>> = (-half - 1..=half + 1)
        .map(|i| {
            let p = origin + normal * (i as f64 * h);
            match region {
                Some(r) if !r.contains(&p) => None,
                _ => Some(volume.sample_trilinear(&p)),
            }
        })
        .collect();
    // central differences at positions -half..=half
    let grad: Vec<Option<f64>> = (1..samples.len() - 1)
        .map(|i| match (samples[i - 1], samples[i], samples[i + 1]) {
            (Some(a), Some(_), Some(b)) => Some((b - a) / (2.0 * h)),
            _ => None,
        })
        .collect();
    let mut candidates: Vec<(usize, f64)> = grad
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.filter(|&g| g > params.edge_gradient).map(|g| (i, g)))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    // an edge hidden behind a falling edge lies beyond the structure the
    // vertex sits in
    let origin_idx = half as usize;
    let hidden = |i: usize, g: f64| {
        let (a, b) = if i < origin_idx {
            (i, origin_idx)
        } else {
            (origin_idx, i)
        };
        let block = -(0.5 * g).max(params.edge_gradient);
        grad[a..=b].iter().any(|x| x.is_some_and(|x| x < block))
    };
    let (i, g) = candidates.into_iter().find(|&(i, g)| {
        if hidden(i, g) {
            return false;
        }
        let p = origin + normal * ((i as i64 - half) as f64 * h);
        let full = gradient(volume, &p, h).norm();
        g >= params.edge_alignment * full
    })?;
    // centroid of the lobe above half the peak, weighted by the excess so
    // that the estimate moves continuously with the vertex
    let excess = |k: usize| grad[k].map_or(0.0, |x| x - 0.5 * g);
    let (mut lo, mut hi) = (i, i);
    while lo > 0 && excess(lo - 1) > 0.0 {
        lo -= 1;
    }
    while hi + 1 < grad.len() && excess(hi + 1) > 0.0 {
        hi += 1;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in lo..=hi {
        num += excess(k) * k as f64;
        den += excess(k);
    }
    let pos = num / den;
    Some((pos - half as f64) * h)
}

fn gradient(volume: &VoxelVolume, p: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        g[axis] = (volume.sample_trilinear(&(p + e)) - volume.sample_trilinear(&(p - e))) / (2.0 * h);
    }
    g
}

/// Spring force: vector from the vertex to the centroid of its 1-ring.
pub fn smoothing_force(mesh: &TriangleMesh, v: usize) -> Vec3 {
    mesh.ring_centroid(v) - mesh.position(v)
}

/// Outcome of [`evolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalloonRun {
    pub mesh: TriangleMesh,
    pub iterations: usize,
    pub converged: bool,
    /// Largest vertex displacement in the final step, mm.
    pub final_max_displacement: f64,
    /// Largest vertex displacement per iteration, mm.
    pub history: Vec<f64>,
}

/// Incident faces further than 60° from the vertex normal mark a crumpled ring.
const FOLD_COSINE: f64 = 0.5;

/// Last point inside `region` on the segment `from` → `to`, with `from` inside.
fn project_into(region: &ConstraintRegion, from: &Vec3, to: &Vec3) -> Vec3 {
    if region.contains(to) {
        return *to;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if region.contains(&from.lerp(to, mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    from.lerp(to, lo)
}

/// Shortens the move of `v` towards `target` until none of its triangles
/// turns over relative to `face_normals`.
fn unfolded_target(
    mesh: &TriangleMesh,
    face_normals: &[Vec3],
    region: &ConstraintRegion,
    v: usize,
    target: Vec3,
) -> Vec3 {
    let p = mesh.position(v);
    let keeps_orientation = |q: &Vec3| {
        mesh.faces_of(v).iter().all(|&f| {
            let [a, b, c] = mesh.triangles()[f].map(|u| if u == v { *q } else { mesh.position(u) });
            let n = &face_normals[f];
            *n == Vec3::zeros() || (b - a).cross(&(c - a)).dot(n) > 0.0
        })
    };
    let mut q = target;
    for _ in 0..4 {
        if keeps_orientation(&q) && region.contains(&q) {
            return q;
        }
        q = p.lerp(&q, 0.5);
    }
    p
}

/// Evolves the balloon inside `region` until every vertex moves less than the
/// tolerance in one step or the iteration budget runs out; a run that does
/// not converge is reported through [`BalloonRun::converged`].
pub fn evolve(
    mesh: &TriangleMesh,
    volume: &VoxelVolume,
    region: &ConstraintRegion,
    params: &BalloonParams,
) -> Result<BalloonRun> {
    let min_spacing = volume.grid().min_spacing();
    params.validate(min_spacing)?;
    if let Some(v) = mesh.positions().iter().position(|p| !region.contains(p)) {
        return Err(Error::Balloon(format!(
            "initial vertex {v} lies outside the constraint region"
        )));
    }
    let cap = params.step_cap(min_spacing);
    let dt = params.time_step;
    let mut mesh = mesh.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..params.max_iterations {
        iterations = it + 1;
        let normals = mesh.vertex_normals();
        let face_normals: Vec<Vec3> = (0..mesh.triangle_count())
            .map(|f| mesh.triangle_normal_area(f).0)
            .collect();
        let snapshot = &mesh;
        let steps: Vec<(Vec3, Vec3)> = (0..snapshot.vertex_count())
            .into_par_iter()
            .map(|v| {
                let p = snapshot.position(v);
                let n = normals[v];
                let mut force = smoothing_force(snapshot, v) * params.smoothing_weight;
                // a crumpled 1-ring has no meaningful normal; smoothing alone relaxes it
                let folded = snapshot
                    .faces_of(v)
                    .iter()
                    .any(|&f| face_normals[f].dot(&n) < FOLD_COSINE);
                if params.image_weight != 0.0 && !folded {
                    if let Some(s) = image_force_in(volume, &p, &n, params, region) {
                        force += n * (params.image_weight * s);
                    }
                }
                let (step, velocity) = match params.integration {
                    Integration::PositionBased => (force * (dt * dt / params.mass), Vec3::zeros()),
                    Integration::Newtonian => {
                        let vel =
                            (snapshot.velocities()[v] * params.mass + force * dt) / (params.mass + params.damping * dt);
                        (vel * dt, vel)
                    }
                };
                (step, velocity)
            })
            .collect();
        let updates: Vec<(Vec3, Vec3)> = steps
            .into_iter()
            .enumerate()
            .map(|(v, (mut step, velocity))| {
                let len = step.norm();
                if len > cap {
                    step *= cap / len;
                }
                let p = mesh.position(v);
                (project_into(region, &p, &(p + step)), velocity)
            })
            .collect();

        let mut max_disp: f64 = 0.0;
        for (v, (target, velocity)) in updates.into_iter().enumerate() {
            let target = unfolded_target(&mesh, &face_normals, region, v, target);
            let d = (target - mesh.position(v)).norm();
            max_disp = max_disp.max(d);
            mesh.set_position(v, target);
            mesh.set_displacement(v, d);
            mesh.set_velocity(v, velocity);
        }
        history.push(max_disp);
        debug_assert!(mesh.positions().iter().all(|p| region.contains(p)));
        if max_disp < params.tolerance {
            converged = true;
            break;
        }
        if params.insertion_interval > 0 && iterations % params.insertion_interval == 0 {
            let marked = mesh.mark_for_insertion(params.max_edge, params.min_displacement);
            if !marked.is_empty() {
                mesh = mesh.insert_vertices_capped(&marked, params.max_vertices);
            }
        }
    }
    let final_max_displacement = history.last().copied().unwrap_or(0.0);
    Ok(BalloonRun {
        mesh,
        iterations,
        converged,
        final_max_displacement,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_region, CanalTrack, Plane, RegionParams};
    use crate::grid::Grid;
    use crate::mesh::icosphere;

    fn line_volume(f: impl Fn(f64) -> i16) -> VoxelVolume {
        // profile runs along +x through the middle of a 1 mm lattice
        let g = Grid::new([41, 3, 3], [1.0; 3], [-20.0, -1.0, -1.0]).unwrap();
        VoxelVolume::from_fn(g, |i, _, _| f(i as f64 - 20.0))
    }

    /// Ideal step at `e` sampled on the lattice: the voxel on the edge holds the midpoint.
    fn step(x: f64, e: f64, lo: i16, hi: i16) -> i16 {
        match x.partial_cmp(&e).unwrap() {
            std::cmp::Ordering::Less => lo,
            std::cmp::Ordering::Equal => (lo + hi) / 2,
            std::cmp::Ordering::Greater => hi,
        }
    }

    fn params() -> BalloonParams {
        BalloonParams {
            profile_step: 0.1,
            ..BalloonParams::default()
        }
    }

    #[test]
    fn step_edge_distance() {
        let v = line_volume(|x| step(x, 2.0, 0, 800));
        let s = image_force(&v, &Vec3::zeros(), &Vec3::x(), &params()).unwrap();
        assert!((s - 2.0).abs() <= 0.1, "{s}");
    }

    #[test]
    fn constant_profile_has_no_edge() {
        let v = line_volume(|_| 300);
        assert_eq!(image_force(&v, &Vec3::zeros(), &Vec3::x(), &params()), None);
    }

    #[test]
    fn falling_edges_do_not_attract() {
        let v = line_volume(|x| step(x, 2.0, 800, 0));
        assert_eq!(image_force(&v, &Vec3::zeros(), &Vec3::x(), &params()), None);
        // but seen from the other side, the same edge is rising
        let s = image_force(&v, &Vec3::zeros(), &(-Vec3::x()), &params()).unwrap();
        assert!((s + 2.0).abs() <= 0.1, "{s}");
    }

    #[test]
    fn strongest_edge_wins() {
        let v = line_volume(|x| {
            if x < 2.5 {
                step(x, 1.0, 0, 400)
            } else {
                step(x, 4.0, 400, 1200)
            }
        });
        let p = params();
        let s = image_force(&v, &Vec3::zeros(), &Vec3::x(), &p).unwrap();
        // brute force: argmax of the sampled central-difference gradient
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        for i in -60..=60 {
            let t = i as f64 * p.profile_step;
            let g =
                v.sample_trilinear(&Vec3::new(t + 0.1, 0.0, 0.0)) - v.sample_trilinear(&Vec3::new(t - 0.1, 0.0, 0.0));
            if g > best {
                best = g;
                arg = t;
            }
        }
        assert!((s - 4.0).abs() <= 0.1 && (s - arg).abs() <= 0.55, "{s} vs {arg}");
    }

    #[test]
    fn weak_edge_below_threshold_is_ignored() {
        let v = line_volume(|x| step(x, 2.0, 0, 50));
        assert_eq!(image_force(&v, &Vec3::zeros(), &Vec3::x(), &params()), None);
    }

    pub(crate) fn hex_fan(hub: Vec3) -> TriangleMesh {
        crate::mesh::tests_support::hex_cone(hub)
    }

    #[test]
    fn centroid_equilibrium() {
        let m = hex_fan(Vec3::zeros());
        let c = m.ring_centroid(0);
        assert_eq!(smoothing_force(&m, 0), c);
        let mut m = m;
        m.set_position(0, c);
        assert!(smoothing_force(&m, 0).norm() < 1e-12);
    }

    #[test]
    fn planar_hexagon_displacement() {
        use std::f64::consts::PI;
        // planar hexagonal ring around the hub
        let mut pts = vec![Vec3::new(0.3, -0.2, 0.0)];
        for k in 0..6 {
            let a = k as f64 * PI / 3.0;
            pts.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let tris: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let m = TriangleMesh::new(pts, tris);
        let f = smoothing_force(&m, 0);
        assert!((f - Vec3::new(-0.3, 0.2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn icosphere_smoothing_is_radial() {
        let r = 10.0;
        let m = icosphere(Vec3::zeros(), r, 2);
        let mut tangential: f64 = 0.0;
        for v in 0..m.vertex_count() {
            let f = smoothing_force(&m, v);
            let n = m.position(v).normalize();
            tangential = tangential.max((f - n * f.dot(&n)).norm());
        }
        // an umbrella on a geodesic sphere is not exactly radial: valence-5
        // vertices pull their neighbours sideways by a few percent of r
        assert!(tangential < 0.05 * r, "{tangential}");
    }

    pub(crate) fn open_region(radius: f64) -> ConstraintRegion {
        let canal = CanalTrack::straight(0.0, 1e4, (-1e4, 1e4), 1.0);
        let mut r = build_region(
            &Vec3::zeros(),
            (Plane::axial(-radius), Plane::axial(radius)),
            &canal,
            &RegionParams::default(),
        )
        .unwrap();
        r.radii = [radius, radius];
        r
    }

    /// Shell between `inner` and `outer` mm, 4x supersampled, minus an
    /// optional polar cap of `gap_deg` half-angle around +z.
    pub(crate) fn shell_volume(spacing: f64, inner: f64, outer: f64, gap_deg: f64) -> VoxelVolume {
        let n = ((outer + 2.0) / spacing).ceil() as usize;
        let g = Grid::new([2 * n + 1; 3], [spacing; 3], [-(n as f64) * spacing; 3]).unwrap();
        let cos_gap = gap_deg.to_radians().cos();
        VoxelVolume::from_fn(g, |i, j, k| {
            let c = g.world(i, j, k);
            let mut sum = 0.0f64;
            for s in 0..64 {
                let f = Vec3::new(
                    ((s % 4) as f64 + 0.5) / 4.0 - 0.5,
                    (((s / 4) % 4) as f64 + 0.5) / 4.0 - 0.5,
                    ((s / 16) as f64 + 0.5) / 4.0 - 0.5,
                );
                let p = c + f * spacing;
                let r = p.norm();
                let in_gap = gap_deg > 0.0 && p.z / r >= cos_gap;
                sum += if r >= inner && r <= outer && !in_gap {
                    800.0
                } else if r < inner {
                    100.0
                } else {
                    0.0
                };
            }
            (sum / 64.0).round() as i16
        })
    }

    #[test]
    fn inflates_onto_inner_shell_wall() {
        let s = 0.3;
        let vol = shell_volume(s, 20.0 * s, 26.0 * s, 0.0);
        let mesh = icosphere(Vec3::zeros(), 5.0 * s, 2);
        let p = BalloonParams {
            max_edge: 1.5,
            ..BalloonParams::default()
        };
        let run = evolve(&mesh, &vol, &open_region(50.0), &p).unwrap();
        assert!(run.converged && run.iterations <= 500);
        let m = &run.mesh;
        let mean = m.positions().iter().map(|q| q.norm()).sum::<f64>() / m.vertex_count() as f64;
        assert!((mean / s - 20.0).abs() <= 0.5, "mean radius {} voxels", mean / s);
        m.check_invariants().unwrap();
        let cap = p.step_cap(s);
        assert!(run.history.iter().all(|&d| d <= cap + 1e-12));
    }

    #[test]
    fn bridges_a_missing_cap() {
        let s = 0.3;
        let vol = shell_volume(s, 20.0 * s, 26.0 * s, 30.0);
        let mesh = icosphere(Vec3::zeros(), 5.0 * s, 2);
        let p = BalloonParams {
            max_edge: 1.5,
            ..BalloonParams::default()
        };
        let run = evolve(&mesh, &vol, &open_region(50.0), &p).unwrap();
        let cos_gap = 30f64.to_radians().cos();
        let dev: Vec<f64> = run
            .mesh
            .positions()
            .iter()
            .filter(|q| q.z / q.norm() >= cos_gap)
            .map(|q| q.norm() / s - 20.0)
            .collect();
        assert!(!dev.is_empty());
        let rms = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
        // the membrane stays closed and spans the cap without escaping
        run.mesh.check_invariants().unwrap();
        assert!(run.mesh.positions().iter().all(|q| q.norm() < 26.0 * s));
        assert!(rms < 5.0, "rms {rms} voxels over {} vertices", dev.len());
    }

    #[test]
    fn featureless_volume_keeps_a_sphere() {
        let g = Grid::new([30, 30, 30], [0.5; 3], [-7.5; 3]).unwrap();
        let vol = VoxelVolume::filled(g, 100);
        let mesh = icosphere(Vec3::zeros(), 5.0, 2);
        let run = evolve(&mesh, &vol, &open_region(50.0), &BalloonParams::default()).unwrap();
        // displacement per step decays
        let h = &run.history;
        assert!(run.converged);
        assert!(h.last().unwrap() < &(0.25 * h[0]));
        let radii: Vec<f64> = run.mesh.positions().iter().map(|q| q.norm()).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let spread = radii.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
        assert!(spread < 0.05 * mean + 1e-9, "spread {spread} mean {mean}");
    }

    #[test]
    fn pure_smoothing_force_decreases() {
        let g = Grid::new([10, 10, 10], [0.5; 3], [-2.5; 3]).unwrap();
        let vol = VoxelVolume::filled(g, 0);
        let mut mesh = icosphere(Vec3::zeros(), 5.0, 2);
        // perturb deterministically
        for v in 0..mesh.vertex_count() {
            let p = mesh.position(v);
            mesh.set_position(v, p * (1.0 + 0.05 * ((v * 7919) % 13) as f64 / 13.0));
        }
        let p = BalloonParams {
            image_weight: 0.0,
            max_iterations: 1,
            insertion_interval: 0,
            ..BalloonParams::default()
        };
        let region = open_region(50.0);
        let mut forces = Vec::new();
        for _ in 0..60 {
            let f = (0..mesh.vertex_count())
                .map(|v| smoothing_force(&mesh, v).norm())
                .fold(0.0, f64::max);
            forces.push(f);
            mesh = evolve(&mesh, &vol, &region, &p).unwrap().mesh;
        }
        assert!(forces[10..].windows(2).all(|w| w[1] <= w[0] + 1e-12), "{forces:?}");
    }

    #[test]
    fn vertices_stay_in_region() {
        let s = 0.5;
        let vol = shell_volume(s, 8.0, 10.0, 0.0);
        let mesh = icosphere(Vec3::zeros(), 2.0, 2);
        let region = open_region(5.0);
        let run = evolve(&mesh, &vol, &region, &BalloonParams::default()).unwrap();
        assert!(run.mesh.positions().iter().all(|p| region.contains(p)));
        // the region caps at |z| = 5 stop the balloon short of the wall
        let zmax = run.mesh.positions().iter().map(|p| p.z).fold(0.0, f64::max);
        assert!(zmax <= 5.0);
    }

    #[test]
    fn rejects_bad_params() {
        let g = Grid::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let vol = VoxelVolume::filled(g, 0);
        let mesh = icosphere(Vec3::new(1.5, 1.5, 1.5), 0.5, 0);
        let region = open_region(50.0);
        for p in [
            BalloonParams {
                mass: 2.0,
                ..BalloonParams::default()
            },
            BalloonParams {
                inflation_weight: 0.1,
                ..BalloonParams::default()
            },
            BalloonParams {
                smoothing_weight: 1.5,
                ..BalloonParams::default()
            },
            BalloonParams {
                profile_step: 1.0,
                ..BalloonParams::default()
            },
        ] {
            assert!(evolve(&mesh, &vol, &region, &p).is_err());
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let s = 0.5;
        let vol = shell_volume(s, 5.0, 7.0, 0.0);
        let mesh = icosphere(Vec3::zeros(), 2.0, 2);
        let region = open_region(50.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evolve(&mesh, &vol, &region, &BalloonParams::default()).unwrap())
        };
        assert_eq!(run(1).mesh, run(3).mesh);
    }
}
