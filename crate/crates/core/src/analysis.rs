//! BMD and volume per VOI, accuracy against nominal values and precision
//! statistics over repeated analyses.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::SeedSet;
use crate::error::{Error, Result};
use crate::grid::{Grid, Vec3};
use crate::morphology::{label, LabelMask, Mask};
use crate::phantom::VertebraTruth;
use crate::pipeline::VertebraResult;
use crate::volgrid::{Calibration, VoxelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoiStats {
    /// Mean calibrated density, mg/cm³.
    pub bmd: f64,
    /// cm³.
    pub volume: f64,
    pub count: usize,
}

/// Labels whose voxels also belong to `value` under the nesting
/// peeled ⊆ trabecular ⊆ body.
fn nested(value: u8) -> &'static [u8] {
    match value {
        label::BODY => &[label::BODY, label::TRABECULAR, label::TRABECULAR_PEELED],
        label::TRABECULAR => &[label::TRABECULAR, label::TRABECULAR_PEELED],
        label::TRABECULAR_PEELED => &[label::TRABECULAR_PEELED],
        label::PROCESS => &[label::PROCESS],
        label::CUT_SURFACE => &[label::CUT_SURFACE],
        _ => &[],
    }
}

/// Statistics over the voxels carrying `value` or any label nested inside it.
pub fn voi_stats(volume: &VoxelVolume, labels: &LabelMask, value: u8, cal: &Calibration) -> Result<VoiStats> {
    if labels.grid() != volume.grid() {
        return Err(Error::Geometry("label mask and volume grids differ".into()));
    }
    mask_stats(volume, &labels.select_any(nested(value)), cal)
}

pub fn mask_stats(volume: &VoxelVolume, mask: &Mask, cal: &Calibration) -> Result<VoiStats> {
    if mask.grid() != volume.grid() {
        return Err(Error::Geometry("mask and volume grids differ".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in mask.indices() {
        sum += cal.calibrate(volume.at(i) as f64);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("no voxels carry the requested label".into()));
    }
    Ok(VoiStats {
        bmd: sum / count as f64,
        volume: count as f64 * volume.grid().voxel_volume_mm3() / 1000.0,
        count,
    })
}

/// Percent deviation from the nominal value, unsigned.
pub fn accuracy_error(measured: f64, nominal: f64) -> Result<f64> {
    if nominal == 0.0 || !nominal.is_finite() {
        return Err(Error::Stats(format!(
            "nominal value must be finite and non-zero, got {nominal}"
        )));
    }
    Ok(100.0 * (measured - nominal).abs() / nominal.abs())
}

/// Percent CV with the sample (n − 1) standard deviation.
pub fn coefficient_of_variation(repeats: &[f64]) -> Result<f64> {
    if repeats.len() < 2 {
        return Err(Error::Stats(format!("need at least 2 repeats, got {}", repeats.len())));
    }
    let n = repeats.len() as f64;
    let mean = repeats.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::Stats("repeats have zero mean".into()));
    }
    let var = repeats.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(100.0 * var.sqrt() / mean.abs())
}

pub fn root_mean_square(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    /// Root mean square of the per-subject CVs, %.
    pub cv_rms: f64,
    /// Sample SD of the per-subject CVs (0 for a single subject), %.
    pub cv_sd: f64,
    pub subject_cvs: Vec<f64>,
}

/// `measurements[s]` holds the repeated values for subject `s`.
pub fn precision_cv(measurements: &[Vec<f64>]) -> Result<Precision> {
    if measurements.is_empty() {
        return Err(Error::Stats("no subjects".into()));
    }
    let cvs = measurements
        .iter()
        .map(|r| coefficient_of_variation(r))
        .collect::<Result<Vec<_>>>()?;
    let n = cvs.len() as f64;
    let mean = cvs.iter().sum::<f64>() / n;
    let cv_sd = if cvs.len() > 1 {
        (cvs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Precision {
        cv_rms: root_mean_square(&cvs),
        cv_sd,
        subject_cvs: cvs,
    })
}

/// BMD over the peeled VOI and volume over the trabecular VOI of one vertebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub bmd: f64,
    pub volume: f64,
    pub peeled_count: usize,
    pub trabecular_count: usize,
}

pub fn measure(result: &VertebraResult, volume: &VoxelVolume, cal: &Calibration) -> Result<Measurement> {
    let labels = result.label_mask();
    let peeled = voi_stats(volume, &labels, label::TRABECULAR_PEELED, cal)?;
    let trabecular = voi_stats(volume, &labels, label::TRABECULAR, cal)?;
    Ok(Measurement {
        bmd: peeled.bmd,
        volume: trabecular.volume,
        peeled_count: peeled.count,
        trabecular_count: trabecular.count,
    })
}

/// One study arm of an accuracy run: a noise level (or any other condition)
/// with a measurement per vertebra, `None` where segmentation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRun {
    pub condition: String,
    pub measurements: Vec<Option<Measurement>>,
    pub truth: Vec<VertebraTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub condition: String,
    pub vertebra: usize,
    pub nominal_bmd: f64,
    pub nominal_volume: f64,
    pub measured: Option<Measurement>,
    /// Percent errors; absent for failed vertebrae.
    pub bmd_error: Option<f64>,
    pub volume_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub cells: Vec<AccuracyCell>,
}

pub fn accuracy_report(runs: &[AccuracyRun]) -> Result<AccuracyReport> {
    let mut cells = Vec::new();
    for run in runs {
        if run.measurements.len() != run.truth.len() {
            return Err(Error::Layout(format!(
                "condition {}: {} measurements for {} vertebrae",
                run.condition,
                run.measurements.len(),
                run.truth.len()
            )));
        }
        for (v, (m, t)) in run.measurements.iter().zip(&run.truth).enumerate() {
            let (bmd_error, volume_error) = match m {
                Some(m) => (
                    Some(accuracy_error(m.bmd, t.trabecular_density)?),
                    Some(accuracy_error(m.volume, t.trabecular_volume_cm3)?),
                ),
                None => (None, None),
            };
            cells.push(AccuracyCell {
                condition: run.condition.clone(),
                vertebra: v,
                nominal_bmd: t.trabecular_density,
                nominal_volume: t.trabecular_volume_cm3,
                measured: *m,
                bmd_error,
                volume_error,
            });
        }
    }
    Ok(AccuracyReport { cells })
}

impl AccuracyReport {
    /// One row per condition, BMD and volume error columns per vertebra.
    pub fn to_csv(&self) -> String {
        let mut conditions: Vec<&str> = Vec::new();
        let mut vertebrae = 0;
        for c in &self.cells {
            if !conditions.contains(&c.condition.as_str()) {
                conditions.push(&c.condition);
            }
            vertebrae = vertebrae.max(c.vertebra + 1);
        }
        let mut out = String::from("condition");
        for v in 0..vertebrae {
            let _ = write!(out, ",v{v}_bmd_err_pct,v{v}_vol_err_pct");
        }
        out.push('\n');
        let fmt = |x: Option<f64>| x.map(|x| format!("{x:.4}")).unwrap_or_default();
        for cond in conditions {
            out.push_str(cond);
            for v in 0..vertebrae {
                let cell = self.cells.iter().find(|c| c.condition == cond && c.vertebra == v);
                let _ = write!(
                    out,
                    ",{},{}",
                    fmt(cell.and_then(|c| c.bmd_error)),
                    fmt(cell.and_then(|c| c.volume_error))
                );
            }
            out.push('\n');
        }
        out
    }
}

/// Seed set for precision repeat `repeat`: every vertebra centre moved by an
/// independent uniform offset of up to `voxels` voxels per axis. The canal
/// seed stays put. Zero jitter returns the seeds unchanged.
pub fn jitter_seeds(seeds: &SeedSet, grid: &Grid, voxels: f64, rng_seed: u64, repeat: u64) -> SeedSet {
    if voxels <= 0.0 {
        return seeds.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(repeat);
    let s = grid.spacing;
    let centers = seeds
        .centers
        .iter()
        .map(|c| {
            let mut d = || rng.random_range(-voxels..=voxels);
            c + Vec3::new(d() * s[0], d() * s[1], d() * s[2])
        })
        .collect();
    SeedSet {
        centers,
        ..seeds.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub vertebra: usize,
    pub measurement: Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub repeats: usize,
    /// Vertebra index of each subject, in subject order.
    pub vertebrae: Vec<usize>,
    pub records: Vec<RepeatRecord>,
    pub bmd: Precision,
    pub volume: Precision,
}

/// `runs[r][v]` is vertebra `v` in repeat `r`; vertebrae are the subjects.
pub fn precision_report(runs: &[Vec<Measurement>]) -> Result<PrecisionReport> {
    let subjects = runs.first().map_or(0, Vec::len);
    if runs.len() < 2 || subjects == 0 {
        return Err(Error::Layout(format!(
            "precision needs at least 2 repeats of at least 1 vertebra, got {} × {subjects}",
            runs.len()
        )));
    }
    if let Some((r, run)) = runs.iter().enumerate().find(|(_, r)| r.len() != subjects) {
        return Err(Error::Layout(format!(
            "repeat {r} has {} vertebrae, expected {subjects}",
            run.len()
        )));
    }
    let column = |f: fn(&Measurement) -> f64| -> Vec<Vec<f64>> {
        (0..subjects).map(|v| runs.iter().map(|r| f(&r[v])).collect()).collect()
    };
    let records = runs
        .iter()
        .enumerate()
        .flat_map(|(r, run)| {
            run.iter().enumerate().map(move |(v, m)| RepeatRecord {
                repeat: r,
                vertebra: v,
                measurement: *m,
            })
        })
        .collect();
    Ok(PrecisionReport {
        repeats: runs.len(),
        vertebrae: (0..subjects).collect(),
        records,
        bmd: precision_cv(&column(|m| m.bmd))?,
        volume: precision_cv(&column(|m| m.volume))?,
    })
}

impl PrecisionReport {
    /// Per-repeat records followed by the per-vertebra CVs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("repeat,vertebra,bmd_mg_cm3,volume_cm3\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6}",
                r.repeat, r.vertebra, r.measurement.bmd, r.measurement.volume
            );
        }
        out.push_str("\nvertebra,bmd_cv_pct,volume_cv_pct\n");
        let cvs = self.bmd.subject_cvs.iter().zip(&self.volume.subject_cvs);
        for (v, (b, vol)) in self.vertebrae.iter().zip(cvs) {
            let _ = writeln!(out, "{v},{b:.6},{vol:.6}");
        }
        let _ = writeln!(out, "rms,{:.6},{:.6}", self.bmd.cv_rms, self.volume.cv_rms);
        out
    }
}
