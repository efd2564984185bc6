use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vertseg::constraints::SeedSet;
use vertseg::phantom::{PhantomSpec, VertebraTruth};
use vertseg::pipeline::PipelineParams;
use vertseg::Calibration;

use crate::CliError;

/// Batch run description. Relative paths are taken relative to the config
/// file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub volume: PathBuf,
    pub seeds: SeedSet,
    #[serde(default)]
    pub params: PipelineParams,
    #[serde(default)]
    pub calibration: Calibration,
    pub output: PathBuf,
    /// `truth.json` written by `vertseg phantom`; needed in accuracy mode.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub study: StudyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub repeats: usize,
    /// Maximum seed offset per axis, voxels.
    pub jitter_voxels: f64,
    pub rng_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            repeats: 3,
            jitter_voxels: 2.0,
            rng_seed: 0,
        }
    }
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: PhantomSpec,
    pub vertebrae: Vec<VertebraTruth>,
    /// Seeds placed at the true centres, ready for a run config.
    pub seeds: SeedSet,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.volume = resolve(&cfg.volume);
        cfg.output = resolve(&cfg.output);
        cfg.truth = cfg.truth.as_deref().map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.volume.is_file() {
            return Err(CliError::Input(format!(
                "volume {} does not exist",
                self.volume.display()
            )));
        }
        if let Some(t) = &self.truth {
            if !t.is_file() {
                return Err(CliError::Input(format!("truth file {} does not exist", t.display())));
            }
        }
        if self.study.repeats < 1 {
            return Err(CliError::Input("study.repeats must be at least 1".into()));
        }
        if !(self.study.jitter_voxels >= 0.0) || !self.study.jitter_voxels.is_finite() {
            return Err(CliError::Input(
                "study.jitter_voxels must be finite and non-negative".into(),
            ));
        }
        self.seeds
            .validate()
            .map_err(|e| CliError::Input(format!("seeds: {e}")))
    }
}
