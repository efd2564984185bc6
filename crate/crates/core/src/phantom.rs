//! Geometrically defined spine phantom with exact ground truth.
//!
//! Each vertebra is an elliptic cylinder (trabecular core inside a cortical
//! shell and endplates of equal thickness) with two pedicles running
//! posteriorly to a laminar arch around the spinal canal, plus transverse and
//! spinous processes. Local axes: x lateral, y posterior, z cranial.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};
use crate::morphology::{label, LabelMask};
use crate::volgrid::VoxelVolume;

/// Soft-tissue gap between the posterior body wall and the canal, mm.
pub const CANAL_GAP: f64 = 2.0;
/// Radial thickness of the laminar arch, mm.
pub const ARCH_THICKNESS: f64 = 8.0;
/// The arch reaches this far (as a sine) anterior of the canal centre.
const ARCH_REACH: f64 = 0.5;
/// Thickness of the transverse processes along y, mm.
pub const TRANSVERSE_THICKNESS: f64 = 6.0;
/// Height of the transverse and spinous processes, mm.
pub const PROCESS_HEIGHT: f64 = 8.0;
/// Width of the spinous process, mm.
pub const SPINOUS_WIDTH: f64 = 4.0;
const DEFECT_AREA_FRACTION: f64 = 0.2;
const NOISE_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraSpec {
    pub center: Vec3,
    /// Lateral and anterior-posterior half-axes of the body, mm.
    pub half_axes: [f64; 2],
    pub height: f64,
    pub shell_thickness: f64,
    pub trabecular_density: f64,
    pub cortical_density: f64,
    pub pedicle_radius: f64,
    pub process_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub vertebrae: Vec<VertebraSpec>,
    pub canal_radius: f64,
    pub background_density: f64,
    pub supersampling: u32,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    /// Empty border around the geometry, mm.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Punch a central trabecular-density hole of 20% area into every endplate.
    #[serde(default)]
    pub endplate_defects: bool,
}

fn default_spacing() -> [f64; 3] {
    [0.5, 0.5, 1.0]
}

fn default_margin() -> f64 {
    6.0
}

impl Default for PhantomSpec {
    /// Three lumbar-like vertebrae at 50, 100 and 200 mg/cm³, 0.5 mm pixels,
    /// 1 mm slices, 50 HU noise.
    fn default() -> Self {
        let vertebra = |z: f64, density: f64| VertebraSpec {
            center: Vec3::new(0.0, 0.0, z),
            half_axes: [18.0, 14.0],
            height: 25.0,
            shell_thickness: 2.0,
            trabecular_density: density,
            cortical_density: 800.0,
            pedicle_radius: 2.0,
            process_extent: 10.0,
        };
        PhantomSpec {
            vertebrae: vec![vertebra(0.0, 50.0), vertebra(31.0, 100.0), vertebra(62.0, 200.0)],
            canal_radius: 8.0,
            background_density: 0.0,
            supersampling: 4,
            noise_sigma: 50.0,
            seed: 1,
            spacing: default_spacing(),
            margin: default_margin(),
            endplate_defects: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Material {
    Background,
    Trabecular(usize),
    Cortical(usize),
    Posterior(usize),
}

/// Derived geometry of one vertebra in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VertebraGeometry {
    pub spec: VertebraSpec,
    pub canal_radius: f64,
    pub endplate_defects: bool,
}

impl VertebraGeometry {
    fn local(&self, p: &Vec3) -> Vec3 {
        p - self.spec.center
    }

    /// Canal centre in local coordinates (on the y axis).
    pub fn canal_offset(&self) -> f64 {
        self.spec.half_axes[1] + CANAL_GAP + self.canal_radius
    }

    pub fn canal_center(&self) -> Vec3 {
        self.spec.center + Vec3::new(0.0, self.canal_offset(), 0.0)
    }

    /// Lateral offset of the pedicle axes.
    pub fn pedicle_offset(&self) -> f64 {
        self.canal_radius + 0.5 * ARCH_THICKNESS
    }

    pub fn in_body(&self, p: &Vec3) -> bool {
        let q = self.local(p);
        let [a, b] = self.spec.half_axes;
        q.z.abs() <= 0.5 * self.spec.height && (q.x / a).powi(2) + (q.y / b).powi(2) <= 1.0
    }

    pub fn core_half_axes(&self) -> [f64; 2] {
        let t = self.spec.shell_thickness;
        [self.spec.half_axes[0] - t, self.spec.half_axes[1] - t]
    }

    pub fn core_half_height(&self) -> f64 {
        0.5 * self.spec.height - self.spec.shell_thickness
    }

    pub fn in_core(&self, p: &Vec3) -> bool {
        let q = self.local(p);
        let [a, b] = self.core_half_axes();
        q.z.abs() <= self.core_half_height() && (q.x / a).powi(2) + (q.y / b).powi(2) <= 1.0
    }

    fn in_defect(&self, p: &Vec3) -> bool {
        if !self.endplate_defects {
            return false;
        }
        let q = self.local(p);
        let [a, b] = self.core_half_axes();
        let s = DEFECT_AREA_FRACTION.sqrt();
        q.z.abs() <= 0.5 * self.spec.height && (q.x / (a * s)).powi(2) + (q.y / (b * s)).powi(2) <= 1.0
    }

    /// Inside one of the two pedicle cylinders (the full cylinders between the
    /// body centre plane and the canal centre plane).
    pub fn in_pedicle(&self, p: &Vec3) -> bool {
        let q = self.local(p);
        let px = self.pedicle_offset();
        let r2 = self.spec.pedicle_radius.powi(2);
        q.y >= 0.0 && q.y <= self.canal_offset() && ((q.x.abs() - px).powi(2) + q.z * q.z) <= r2
    }

    /// Laminar arch, transverse and spinous processes.
    pub fn in_arch(&self, p: &Vec3) -> bool {
        let q = self.local(p);
        let yc = self.canal_offset();
        let rc = self.canal_radius;
        let half_h = 0.5 * self.spec.height;
        let dy = q.y - yc;
        let r = (q.x * q.x + dy * dy).sqrt();
        let lamina = q.z.abs() <= half_h && r >= rc && r <= rc + ARCH_THICKNESS && dy >= -ARCH_REACH * r;
        let px = self.pedicle_offset();
        let extent = self.spec.process_extent;
        let in_process_band = q.z.abs() <= 0.5 * PROCESS_HEIGHT;
        let transverse =
            in_process_band && q.x.abs() >= px && q.x.abs() <= px + extent && dy.abs() <= 0.5 * TRANSVERSE_THICKNESS;
        let spinous =
            in_process_band && q.x.abs() <= 0.5 * SPINOUS_WIDTH && dy >= rc && dy <= rc + ARCH_THICKNESS + extent;
        lamina || transverse || spinous
    }

    pub fn in_posterior(&self, p: &Vec3) -> bool {
        !self.in_body(p) && (self.in_pedicle(p) || self.in_arch(p))
    }

    pub fn true_trabecular_volume_cm3(&self) -> f64 {
        let [a, b] = self.core_half_axes();
        std::f64::consts::PI * a * b * 2.0 * self.core_half_height() / 1000.0
    }

    /// Axis-aligned extent of all structures, world mm.
    fn bounds(&self) -> (Vec3, Vec3) {
        let s = &self.spec;
        let lateral = s.half_axes[0].max(self.pedicle_offset() + s.process_extent);
        let posterior = self.canal_offset() + self.canal_radius + ARCH_THICKNESS + s.process_extent;
        let lo = s.center + Vec3::new(-lateral, -s.half_axes[1], -0.5 * s.height);
        let hi = s.center + Vec3::new(lateral, posterior, 0.5 * s.height);
        (lo, hi)
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::PhantomSpec(m));
        if self.vertebrae.is_empty() {
            return bad("no vertebrae".into());
        }
        if self.supersampling < 1 {
            return bad("supersampling must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative".into());
        }
        if !(self.canal_radius > 0.0) {
            return bad("canal radius must be positive".into());
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("spacing must be positive".into());
        }
        for (n, v) in self.vertebrae.iter().enumerate() {
            let [a, b] = v.half_axes;
            if !(a > 0.0 && b > 0.0 && v.height > 0.0) {
                return bad(format!("vertebra {n}: non-positive body size"));
            }
            if !(v.shell_thickness > 0.0) || v.shell_thickness >= a.min(b) || 2.0 * v.shell_thickness >= v.height {
                return bad(format!(
                    "vertebra {n}: shell thickness must be below the smallest half-axis"
                ));
            }
            if !(v.pedicle_radius > 0.0) || v.pedicle_radius >= a.min(b) {
                return bad(format!("vertebra {n}: pedicle radius must be below the body half-axes"));
            }
            if v.pedicle_radius >= 0.5 * ARCH_THICKNESS {
                return bad(format!("vertebra {n}: pedicle radius would cut into the canal"));
            }
            if self.canal_radius + 0.5 * ARCH_THICKNESS >= a {
                return bad(format!("vertebra {n}: pedicles miss the body (canal too wide)"));
            }
            if !(self.background_density < v.trabecular_density && v.trabecular_density < v.cortical_density) {
                return bad(format!(
                    "vertebra {n}: densities must rise background < trabecular < cortical"
                ));
            }
            if v.process_extent < 0.0 {
                return bad(format!("vertebra {n}: negative process extent"));
            }
        }
        for (n, w) in self.vertebrae.windows(2).enumerate() {
            let need = 0.5 * (w[0].height + w[1].height) + 2.0;
            if w[1].center.z - w[0].center.z < need {
                return bad(format!("vertebrae {n} and {} closer than body height + 2 mm", n + 1));
            }
        }
        Ok(())
    }

    pub fn geometries(&self) -> Vec<VertebraGeometry> {
        self.vertebrae
            .iter()
            .map(|v| VertebraGeometry {
                spec: v.clone(),
                canal_radius: self.canal_radius,
                endplate_defects: self.endplate_defects,
            })
            .collect()
    }

    /// Lattice covering all structures plus the margin; the first vertebra
    /// centre sits exactly on a voxel centre.
    pub fn grid(&self) -> Result<Grid> {
        let geoms = self.geometries();
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for g in &geoms {
            let (a, b) = g.bounds();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        let anchor = self.vertebrae[0].center;
        let mut dims = [0usize; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            let s = self.spacing[a];
            let below = ((anchor[a] - lo[a] + self.margin) / s).ceil();
            let above = ((hi[a] - anchor[a] + self.margin) / s).ceil();
            origin[a] = anchor[a] - below * s;
            dims[a] = (below + above) as usize + 1;
        }
        Grid::new(dims, self.spacing, origin)
    }

    fn material(&self, geoms: &[VertebraGeometry], p: &Vec3) -> Material {
        for (n, g) in geoms.iter().enumerate() {
            if (p.z - g.spec.center.z).abs() > 0.5 * g.spec.height {
                continue;
            }
            if g.in_body(p) {
                return if g.in_core(p) || g.in_defect(p) {
                    Material::Trabecular(n)
                } else {
                    Material::Cortical(n)
                };
            }
            if g.in_pedicle(p) || g.in_arch(p) {
                return Material::Posterior(n);
            }
        }
        Material::Background
    }

    fn density(&self, m: Material) -> f64 {
        match m {
            Material::Background => self.background_density,
            Material::Trabecular(n) => self.vertebrae[n].trabecular_density,
            Material::Cortical(n) | Material::Posterior(n) => self.vertebrae[n].cortical_density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraTruth {
    pub center: Vec3,
    pub trabecular_volume_cm3: f64,
    pub trabecular_density: f64,
}

/// Nominal values, recorded before noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub vertebrae: Vec<VertebraTruth>,
    /// Per vertebra: body (1), trabecular core (3) and posterior elements (2)
    /// by voxel-centre membership.
    pub masks: Vec<LabelMask>,
    pub geometry: Vec<VertebraGeometry>,
}

/// Renders the phantom with partial-volume averaging at `supersampling`³
/// points per voxel, then adds the configured noise.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(VoxelVolume, GroundTruth)> {
    spec.validate()?;
    let grid = spec.grid()?;
    let geoms = spec.geometries();
    let ss = spec.supersampling as usize;
    let sp = Vec3::from(grid.spacing);

    let values: Vec<i16> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let c = grid.world_of(idx);
            let centre = spec.material(&geoms, &c);
            if ss == 1 {
                return spec.density(centre).round() as i16;
            }
            // voxels whose 3x3x3 probe lattice is uniform are taken as pure
            let mut pure = true;
            'probe: for a in -1..=1 {
                for b in -1..=1 {
                    for d in -1..=1 {
                        let off = Vec3::new(a as f64, b as f64, d as f64).component_mul(&sp) * 0.5;
                        if spec.material(&geoms, &(c + off)) != centre {
                            pure = false;
                            break 'probe;
                        }
                    }
                }
            }
            if pure {
                return spec.density(centre).round() as i16;
            }
            let mut sum = 0.0;
            for a in 0..ss {
                for b in 0..ss {
                    for d in 0..ss {
                        let f = Vec3::new(
                            (a as f64 + 0.5) / ss as f64 - 0.5,
                            (b as f64 + 0.5) / ss as f64 - 0.5,
                            (d as f64 + 0.5) / ss as f64 - 0.5,
                        );
                        sum += spec.density(spec.material(&geoms, &(c + f.component_mul(&sp))));
                    }
                }
            }
            (sum / (ss * ss * ss) as f64).round() as i16
        })
        .collect();
    let clean = VoxelVolume::new(grid, values)?;

    let masks = geoms
        .iter()
        .map(|g| {
            let mut labels = vec![label::BACKGROUND; grid.len()];
            for (idx, l) in labels.iter_mut().enumerate() {
                let p = grid.world_of(idx);
                if g.in_core(&p) {
                    *l = label::TRABECULAR;
                } else if g.in_body(&p) {
                    *l = label::BODY;
                } else if g.in_posterior(&p) {
                    *l = label::PROCESS;
                }
            }
            LabelMask::from_labels(grid, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = GroundTruth {
        vertebrae: geoms
            .iter()
            .map(|g| VertebraTruth {
                center: g.spec.center,
                trabecular_volume_cm3: g.true_trabecular_volume_cm3(),
                trabecular_density: g.spec.trabecular_density,
            })
            .collect(),
        masks,
        geometry: geoms,
    };
    Ok((add_noise(&clean, spec.noise_sigma, spec.seed), truth))
}

/// Adds i.i.d. N(0, sigma²) noise and rounds; the random stream depends only
/// on `seed` and the voxel index.
pub fn add_noise(volume: &VoxelVolume, sigma: f64, seed: u64) -> VoxelVolume {
    if sigma <= 0.0 {
        return volume.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut values = volume.values().to_vec();
    values
        .par_chunks_mut(NOISE_CHUNK)
        .enumerate()
        .for_each(|(chunk, vals)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            for v in vals {
                let x = *v as f64 + normal.sample(&mut rng);
                *v = x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            }
        });
    VoxelVolume::new(*volume.grid(), values).expect("same geometry")
}
