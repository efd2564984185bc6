use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vertseg::analysis::{
    accuracy_report, jitter_seeds, measure, precision_report, AccuracyRun, Measurement, PrecisionReport,
};
use vertseg::constraints::SeedSet;
use vertseg::phantom::{generate_phantom, PhantomSpec};
use vertseg::pipeline::{segment_all, Flags, Stage, VertebraOutcome, VertebraResult};
use vertseg::threshold::Gaussian;
use vertseg::{load_volume, save_label_mask, save_volume, write_atomic, VoxelVolume};

use crate::config::{read_json, RunConfig, TruthFile};
use crate::{CliError, Outcome};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

pub fn phantom(spec: Option<&Path>, out: &Path) -> Result<Outcome, CliError> {
    let spec: PhantomSpec = match spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    let (volume, truth) = generate_phantom(&spec)?;
    create_dir(out)?;
    save_volume(&volume, out.join("volume.mhd"))?;
    for (n, mask) in truth.masks.iter().enumerate() {
        save_label_mask(mask, out.join(format!("truth_v{n}.mhd")))?;
    }
    let seeds = SeedSet {
        centers: truth.vertebrae.iter().map(|v| v.center).collect(),
        canal: truth.geometry[0].canal_center(),
        plane_overrides: Vec::new(),
    };
    write_json(
        &out.join("truth.json"),
        &TruthFile {
            spec,
            vertebrae: truth.vertebrae,
            seeds,
        },
    )?;
    Ok(Outcome::Clean)
}

#[derive(Debug, Serialize)]
struct Thresholds {
    low: f64,
    high: f64,
    soft: Gaussian,
    bone: Gaussian,
    em_iterations: usize,
}

#[derive(Debug, Serialize)]
struct VertebraLog {
    vertebra: usize,
    status: &'static str,
    failed_stage: Option<Stage>,
    error: Option<String>,
    flags: Flags,
    balloon_iterations: Option<usize>,
    balloon_vertices: Option<usize>,
    thresholds: Option<Thresholds>,
    measurement: Option<Measurement>,
    files: Vec<String>,
}

struct Segmented {
    outcomes: Vec<VertebraOutcome>,
    measurements: Vec<Option<Measurement>>,
    flagged: bool,
}

fn measure_all(volume: &VoxelVolume, outcomes: Vec<VertebraOutcome>, cfg: &RunConfig) -> Segmented {
    let measurements = outcomes
        .iter()
        .map(|o| o.as_ref().ok().and_then(|r| measure(r, volume, &cfg.calibration).ok()))
        .collect();
    let flagged = outcomes.iter().any(|o| o.as_ref().map_or(true, |r| r.flags.any()));
    Segmented {
        outcomes,
        measurements,
        flagged,
    }
}

fn run_pipeline(volume: &VoxelVolume, seeds: &SeedSet, cfg: &RunConfig) -> Result<Segmented, CliError> {
    let outcomes = segment_all(volume, seeds, &cfg.params)?;
    Ok(measure_all(volume, outcomes, cfg))
}

fn write_result(r: &VertebraResult, n: usize, out: &Path) -> Result<Vec<String>, CliError> {
    let labels = format!("v{n}_labels.mhd");
    let mesh = format!("v{n}_mesh.obj");
    save_label_mask(&r.label_mask(), out.join(&labels))?;
    r.mesh.write_obj(out.join(&mesh))?;
    Ok(vec![labels, format!("v{n}_labels.raw"), mesh])
}

/// Writes masks, meshes and the stage log for one segmentation pass.
fn write_segmentation(seg: &Segmented, out: &Path) -> Result<(), CliError> {
    let mut log = Vec::new();
    for (n, (o, m)) in seg.outcomes.iter().zip(&seg.measurements).enumerate() {
        let (result, failure) = match o {
            Ok(r) => (Some(r), None),
            Err(f) => (f.partial.as_deref(), Some(f)),
        };
        let files = match result {
            Some(r) => write_result(r, n, out)?,
            None => Vec::new(),
        };
        log.push(VertebraLog {
            vertebra: n,
            status: if failure.is_some() { "failed" } else { "ok" },
            failed_stage: failure.map(|f| f.stage),
            error: failure.map(|f| f.error.to_string()),
            flags: failure.map_or_else(|| result.map(|r| r.flags).unwrap_or_default(), |f| f.flags),
            balloon_iterations: result.map(|r| r.balloon_iterations),
            balloon_vertices: result.map(|r| r.mesh.vertex_count()),
            thresholds: result.map(|r| Thresholds {
                low: r.pair.low,
                high: r.pair.high,
                soft: r.pair.soft,
                bone: r.pair.bone,
                em_iterations: r.pair.iterations,
            }),
            measurement: *m,
            files,
        });
    }
    write_json(&out.join("stage_log.json"), &log)
}

fn outcome(flagged: bool) -> Outcome {
    if flagged {
        Outcome::Flagged
    } else {
        Outcome::Clean
    }
}

pub fn segment(config: &Path) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(config)?;
    let volume = load_volume(&cfg.volume)?;
    let seg = run_pipeline(&volume, &cfg.seeds, &cfg)?;
    create_dir(&cfg.output)?;
    write_segmentation(&seg, &cfg.output)?;
    Ok(outcome(seg.flagged))
}

fn condition_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".into())
}

pub fn accuracy(config: &Path) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(config)?;
    let truth_path: PathBuf = cfg
        .truth
        .clone()
        .ok_or_else(|| CliError::Input("accuracy mode needs `truth` in the config".into()))?;
    let truth: TruthFile = read_json(&truth_path)?;
    if truth.vertebrae.len() != cfg.seeds.centers.len() {
        return Err(CliError::Input(format!(
            "{} seeds for {} vertebrae in {}",
            cfg.seeds.centers.len(),
            truth.vertebrae.len(),
            truth_path.display()
        )));
    }
    let volume = load_volume(&cfg.volume)?;
    let seg = run_pipeline(&volume, &cfg.seeds, &cfg)?;
    create_dir(&cfg.output)?;
    write_segmentation(&seg, &cfg.output)?;
    let report = accuracy_report(&[AccuracyRun {
        condition: condition_name(&cfg.volume),
        measurements: seg.measurements.clone(),
        truth: truth.vertebrae,
    }])?;
    write_json(&cfg.output.join("accuracy.json"), &report)?;
    write_atomic(&cfg.output.join("accuracy.csv"), report.to_csv().as_bytes())?;
    Ok(outcome(seg.flagged))
}

#[derive(Debug, Serialize)]
struct PrecisionFile {
    /// Vertebrae left out because a repeat failed for them.
    excluded: Vec<usize>,
    report: PrecisionReport,
}

pub fn precision(config: &Path) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.study.repeats < 2 {
        return Err(CliError::Input("precision mode needs study.repeats ≥ 2".into()));
    }
    let volume = load_volume(&cfg.volume)?;
    let mut flagged = false;
    let mut runs: Vec<Vec<Option<Measurement>>> = Vec::new();
    for r in 0..cfg.study.repeats {
        let seeds = jitter_seeds(
            &cfg.seeds,
            volume.grid(),
            cfg.study.jitter_voxels,
            cfg.study.rng_seed,
            r as u64,
        );
        let seg = run_pipeline(&volume, &seeds, &cfg)?;
        flagged |= seg.flagged;
        runs.push(seg.measurements);
    }
    let subjects = cfg.seeds.centers.len();
    let (kept, excluded): (Vec<usize>, Vec<usize>) =
        (0..subjects).partition(|&v| runs.iter().all(|run| run[v].is_some()));
    create_dir(&cfg.output)?;
    if kept.is_empty() {
        write_json(
            &cfg.output.join("precision.json"),
            &serde_json::json!({ "excluded": excluded }),
        )?;
        return Ok(Outcome::Flagged);
    }
    let complete: Vec<Vec<Measurement>> = runs
        .iter()
        .map(|run| {
            kept.iter()
                .map(|&v| run[v].expect("kept vertebrae are complete"))
                .collect()
        })
        .collect();
    let mut report = precision_report(&complete)?;
    for rec in &mut report.records {
        rec.vertebra = kept[rec.vertebra];
    }
    report.vertebrae = kept;
    write_atomic(&cfg.output.join("precision.csv"), report.to_csv().as_bytes())?;
    write_json(&cfg.output.join("precision.json"), &PrecisionFile { excluded, report })?;
    Ok(outcome(flagged))
}
