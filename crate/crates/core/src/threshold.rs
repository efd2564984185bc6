//! Two-class histogram modelling: a two-Gaussian mixture fitted by EM, the
//! derived soft/bone threshold pair, and the noise-adaptive voxel classifier.

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintRegion;
use crate::error::{Error, Result};
use crate::morphology::Mask;
use crate::volgrid::VoxelVolume;

/// Smallest admissible component standard deviation, HU.
pub const SIGMA_FLOOR: f64 = 0.5;
const SMOOTH_WIDTH: usize = 5;
const MAX_EM_ITERATIONS: usize = 2000;
const LL_TOLERANCE: f64 = 1e-6;
/// Minimum Ashman's D between the fitted components.
const MIN_SEPARATION: f64 = 2.0;

/// Voxel counts in 1 HU bins from `min` to `min + counts.len() - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub min: i32,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = i16>) -> Result<Self> {
        let values: Vec<i16> = values.into_iter().collect();
        let (Some(&lo), Some(&hi)) = (values.iter().min(), values.iter().max()) else {
            return Err(Error::EmptyRegion("histogram of zero voxels".into()));
        };
        let mut counts = vec![0u64; (hi as i32 - lo as i32 + 1) as usize];
        for v in values {
            counts[(v as i32 - lo as i32) as usize] += 1;
        }
        Ok(Histogram { min: lo as i32, counts })
    }

    pub fn from_mask(volume: &VoxelVolume, mask: &Mask) -> Result<Self> {
        Self::from_values(mask.indices().map(|i| volume.at(i)))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn value(&self, bin: usize) -> f64 {
        (self.min + bin as i32) as f64
    }

    pub fn count_at(&self, hu: i32) -> u64 {
        usize::try_from(hu - self.min)
            .ok()
            .and_then(|b| self.counts.get(b).copied())
            .unwrap_or(0)
    }

    /// Centred box filter of width 5, truncated at the ends.
    pub fn smoothed(&self) -> Vec<f64> {
        let n = self.counts.len();
        let h = SMOOTH_WIDTH / 2;
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(h);
                let hi = (i + h).min(n - 1);
                self.counts[lo..=hi].iter().sum::<u64>() as f64 / SMOOTH_WIDTH as f64
            })
            .collect()
    }
}

/// Histogram of the voxels whose centres lie inside `region`.
pub fn build_histogram(volume: &VoxelVolume, region: &ConstraintRegion) -> Result<Histogram> {
    let mask = region.rasterize(volume.grid());
    if mask.is_empty() {
        return Err(Error::EmptyRegion("constraint region holds no voxel centre".into()));
    }
    Histogram::from_mask(volume, &mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sigma: f64,
    pub weight: f64,
}

impl Gaussian {
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn weighted_pdf(&self, x: f64) -> f64 {
        self.weight * self.pdf(x)
    }
}

/// Fitted soft-tissue (`soft`) and bone (`bone`) components with the derived
/// thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub soft: Gaussian,
    pub bone: Gaussian,
    pub low: f64,
    pub high: f64,
    /// Noise estimate used by the transition rule: the soft component's sigma.
    pub noise_sigma: f64,
    pub iterations: usize,
    /// Mean log-likelihood per sample after every EM iteration.
    pub log_likelihood: Vec<f64>,
}

impl GaussianPair {
    /// Pair with the given components and thresholds derived from them.
    pub fn from_components(soft: Gaussian, bone: Gaussian) -> Self {
        let mut pair = GaussianPair {
            soft,
            bone,
            low: 0.0,
            high: 0.0,
            noise_sigma: soft.sigma,
            iterations: 0,
            log_likelihood: Vec::new(),
        };
        (pair.low, pair.high) = derive_thresholds(&pair);
        pair
    }
}

/// Local maxima of the smoothed histogram; plateaus report their middle bin.
fn smoothed_peaks(s: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let left = i == 0 || s[i - 1] < s[i];
        let right = j + 1 == s.len() || s[j + 1] < s[i];
        if left && right && s[i] > 0.0 {
            peaks.push((i + j) / 2);
        }
        i = j + 1;
    }
    peaks
}

/// Fits two Gaussians to `hist` by expectation-maximisation, starting from the
/// dominant smoothed peak and the peak maximising `height * distance²` to it.
pub fn fit_bimodal(hist: &Histogram) -> Result<GaussianPair> {
    let smooth = hist.smoothed();
    let peaks = smoothed_peaks(&smooth);
    if peaks.len() < 2 {
        return Err(Error::Unimodal(format!(
            "{} local maximum after smoothing",
            peaks.len()
        )));
    }
    let first = *peaks
        .iter()
        .max_by(|&&a, &&b| smooth[a].total_cmp(&smooth[b]).then(b.cmp(&a)))
        .unwrap();
    let second = *peaks
        .iter()
        .filter(|&&p| p != first)
        .max_by(|&&a, &&b| {
            let score = |p: usize| smooth[p] * (p as f64 - first as f64).powi(2);
            score(a).total_cmp(&score(b)).then(b.cmp(&a))
        })
        .unwrap();
    let (lo_peak, hi_peak) = (first.min(second), first.max(second));

    let bins: Vec<(f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| (hist.value(b), c as f64))
        .collect();
    let n: f64 = bins.iter().map(|b| b.1).sum();

    // initial split at the midpoint between the peaks
    let split = 0.5 * (hist.value(lo_peak) + hist.value(hi_peak));
    let init = |keep: &dyn Fn(f64) -> bool, peak: f64| {
        let (mut w, mut ss) = (0.0, 0.0);
        for &(x, c) in bins.iter().filter(|b| keep(b.0)) {
            w += c;
            ss += c * (x - peak).powi(2);
        }
        Gaussian {
            mean: peak,
            sigma: (ss / w.max(1.0)).sqrt().max(SIGMA_FLOOR),
            weight: (w / n).max(1e-6),
        }
    };
    let mut comps = [
        init(&|x| x < split, hist.value(lo_peak)),
        init(&|x| x >= split, hist.value(hi_peak)),
    ];

    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut resp = vec![0.0; bins.len()];
    let mut iterations = 0;
    for it in 0..MAX_EM_ITERATIONS {
        iterations = it + 1;
        // E step; log-likelihood of the current parameters
        let mut ll = 0.0;
        for (r, &(x, c)) in resp.iter_mut().zip(&bins) {
            let p0 = comps[0].weighted_pdf(x);
            let p1 = comps[1].weighted_pdf(x);
            let total = p0 + p1;
            if total > 0.0 {
                *r = p1 / total;
                ll += c * total.ln();
            } else {
                // both densities underflow: assign to the nearer mean in z units
                let z0 = ((x - comps[0].mean) / comps[0].sigma).abs();
                let z1 = ((x - comps[1].mean) / comps[1].sigma).abs();
                *r = if z1 < z0 { 1.0 } else { 0.0 };
                ll += c * f64::MIN_POSITIVE.ln();
            }
        }
        let ll = ll / n;
        history.push(ll);
        if ll - prev < LL_TOLERANCE && it > 0 {
            break;
        }
        prev = ll;

        // M step
        for (k, comp) in comps.iter_mut().enumerate() {
            let (mut w, mut sx) = (0.0, 0.0);
            for (&r, &(x, c)) in resp.iter().zip(&bins) {
                let g = if k == 1 { r } else { 1.0 - r } * c;
                w += g;
                sx += g * x;
            }
            if w <= 0.0 {
                return Err(Error::Unimodal("a mixture component lost all support".into()));
            }
            let mean = sx / w;
            let ss: f64 = resp
                .iter()
                .zip(&bins)
                .map(|(&r, &(x, c))| if k == 1 { r } else { 1.0 - r } * c * (x - mean).powi(2))
                .sum();
            *comp = Gaussian {
                mean,
                sigma: (ss / w).sqrt().max(SIGMA_FLOOR),
                weight: w / n,
            };
        }
    }

    if comps[0].mean >= comps[1].mean {
        comps.swap(0, 1);
    }
    if comps[1].mean - comps[0].mean < f64::EPSILON {
        return Err(Error::Unimodal("components collapsed onto one mean".into()));
    }
    // Ashman's D; a single noisy mode splits into heavily overlapping halves
    let separation = std::f64::consts::SQRT_2 * (comps[1].mean - comps[0].mean)
        / (comps[0].sigma.powi(2) + comps[1].sigma.powi(2)).sqrt();
    if separation < MIN_SEPARATION {
        return Err(Error::Unimodal(format!(
            "components overlap (separation {separation:.2})"
        )));
    }
    let mut pair = GaussianPair::from_components(comps[0], comps[1]);
    pair.iterations = iterations;
    pair.log_likelihood = history;
    Ok(pair)
}

/// Low threshold: the crossing of the weighted densities between the means
/// (midpoint when they do not cross there). High threshold: `mean₂ − σ₂`,
/// kept inside `[low, mean₂]`.
pub fn derive_thresholds(pair: &GaussianPair) -> (f64, f64) {
    let (a, b) = (pair.soft, pair.bone);
    let low = density_crossing(&a, &b).unwrap_or(0.5 * (a.mean + b.mean));
    let high = (b.mean - b.sigma).clamp(low, b.mean);
    (low, high)
}

/// Root of `w₁·N(x; μ₁, σ₁) = w₂·N(x; μ₂, σ₂)` strictly between the means.
fn density_crossing(a: &Gaussian, b: &Gaussian) -> Option<f64> {
    // log-density difference is the quadratic q(x) = A x² + B x + C
    let (va, vb) = (a.sigma * a.sigma, b.sigma * b.sigma);
    let qa = 0.5 / vb - 0.5 / va;
    let qb = a.mean / va - b.mean / vb;
    let qc =
        0.5 * b.mean * b.mean / vb - 0.5 * a.mean * a.mean / va + (a.weight / a.sigma).ln() - (b.weight / b.sigma).ln();
    let inside = |x: f64| x > a.mean && x < b.mean;
    if qa.abs() < 1e-15 {
        if qb.abs() < 1e-300 {
            return None;
        }
        return Some(-qc / qb).filter(|&x| inside(x));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let t = -0.5 * (qb + qb.signum() * sq);
    let mut roots = [t / qa, if t != 0.0 { qc / t } else { f64::NAN }];
    roots.sort_by(|x, y| x.total_cmp(y));
    let mid = 0.5 * (a.mean + b.mean);
    roots
        .into_iter()
        .filter(|&x| x.is_finite() && inside(x))
        .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tissue {
    Soft,
    Bone,
}

/// Margin above `low` that the 27-neighbourhood mean must exceed in the
/// transition zone.
pub fn transition_margin(pair: &GaussianPair) -> f64 {
    (pair.noise_sigma / 27f64.sqrt()).max(1.0)
}

pub fn classify(volume: &VoxelVolume, idx: usize, pair: &GaussianPair) -> Tissue {
    let v = volume.at(idx) as f64;
    if v < pair.low {
        Tissue::Soft
    } else if v > pair.high {
        Tissue::Bone
    } else {
        let c = volume.grid().coords(idx);
        if volume.neighbourhood_mean(c) > pair.low + transition_margin(pair) {
            Tissue::Bone
        } else {
            Tissue::Soft
        }
    }
}

pub fn is_bone(volume: &VoxelVolume, idx: usize, pair: &GaussianPair) -> bool {
    classify(volume, idx, pair) == Tissue::Bone
}
