//! Smooth Gaussian-noise subject stacks and Monte Carlo checks of the
//! pipeline's false discovery rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdr::apply_fdr_to_clusters;
use crate::permnull::{analyze_contrast, PermutationConfig};
use crate::stats::RngStream;
use crate::volume::{Dims, Mask, SubjectStack, Volume};

/// Sphere of constant added signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub center: [f64; 3],
    pub radius: f64,
    /// In units of the (unit) noise standard deviation.
    pub amplitude: f64,
}

impl Signal {
    pub fn contains(&self, (x, y, z): (usize, usize, usize)) -> bool {
        let d2 = (x as f64 - self.center[0]).powi(2)
            + (y as f64 - self.center[1]).powi(2)
            + (z as f64 - self.center[2]).powi(2);
        d2 <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dims: Dims,
    pub subjects: usize,
    pub fwhm_vox: f64,
    pub signal: Option<Signal>,
    pub master_seed: u64,
    pub trial_index: u64,
}

impl SynthConfig {
    /// 20×20×20 grid, 20 subjects, FWHM 2 voxels, no signal.
    pub fn desk_scale(master_seed: u64) -> Self {
        SynthConfig {
            dims: Dims::new(20, 20, 20),
            subjects: 20,
            fwhm_vox: 2.0,
            signal: None,
            master_seed,
            trial_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidArgument(
                "synthetic grid must be non-empty".into(),
            ));
        }
        if self.subjects < 2 {
            return Err(Error::TooFewSubjects(self.subjects));
        }
        if !(self.fwhm_vox >= 0.0 && self.fwhm_vox.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "FWHM {} must be ≥ 0",
                self.fwhm_vox
            )));
        }
        if let Some(s) = &self.signal {
            if s.radius.is_nan() || s.radius < 0.0 || !s.amplitude.is_finite() {
                return Err(Error::InvalidArgument("signal radius must be ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// Normalized discrete Gaussian for the given FWHM, truncated at
/// ±ceil(4σ). Empty for FWHM 0.
pub fn gaussian_kernel(fwhm_vox: f64) -> Vec<f64> {
    if fwhm_vox == 0.0 {
        return Vec::new();
    }
    let sigma = fwhm_vox / (8.0 * 2f64.ln()).sqrt();
    let half = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn convolve_axis(data: &[f64], dims: Dims, kernel: &[f64], axis: usize) -> Vec<f64> {
    let half = (kernel.len() / 2) as i64;
    let (len, stride) = match axis {
        0 => (dims.nx, 1),
        1 => (dims.ny, dims.nx),
        _ => (dims.nz, dims.nx * dims.ny),
    };
    let mut out = vec![0.0; data.len()];
    for (v, slot) in out.iter_mut().enumerate() {
        let (x, y, z) = dims.coords(v);
        let pos = [x, y, z][axis] as i64;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let q = pos + k as i64 - half;
            if q < 0 || q >= len as i64 {
                continue;
            }
            let src = (v as i64 + (q - pos) * stride as i64) as usize;
            acc += w * data[src];
        }
        *slot = acc;
    }
    out
}

/// Separable Gaussian smoothing along x, then y, then z, with zero padding
/// outside the grid. FWHM 0 returns the input unchanged.
pub fn gaussian_smooth(volume: &Volume, fwhm_vox: f64) -> Result<Volume> {
    if !(fwhm_vox >= 0.0 && fwhm_vox.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "FWHM {fwhm_vox} must be ≥ 0"
        )));
    }
    if fwhm_vox == 0.0 {
        return Ok(volume.clone());
    }
    let kernel = gaussian_kernel(fwhm_vox);
    let dims = volume.dims();
    let mut data = volume.data().to_vec();
    for axis in 0..3 {
        data = convolve_axis(&data, dims, &kernel, axis);
    }
    Volume::with_metadata(dims, volume.voxel_size(), data, volume.datatype_origin())
}

/// Seed for the trial's data; subject i draws from stream i of it.
fn trial_data_seed(master_seed: u64, trial_index: u64) -> u64 {
    RngStream::new(master_seed, trial_index).next_u64()
}

/// Seed for the trial's sign-flips: the next output of the same stream, so
/// a shared master seed never reuses the data streams for signs.
fn trial_perm_seed(master_seed: u64, trial_index: u64) -> u64 {
    let mut s = RngStream::new(master_seed, trial_index);
    s.next_u64();
    s.next_u64()
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Subject maps: smoothed white noise rescaled to unit sample sd, plus the
/// optional signal sphere. The mask covers the full grid.
pub fn generate_stack(cfg: &SynthConfig) -> Result<SubjectStack> {
    cfg.validate()?;
    let dims = cfg.dims;
    let data_seed = trial_data_seed(cfg.master_seed, cfg.trial_index);
    let signal: Option<Vec<f64>> = cfg.signal.map(|s| {
        (0..dims.len())
            .map(|v| {
                if s.contains(dims.coords(v)) {
                    s.amplitude
                } else {
                    0.0
                }
            })
            .collect()
    });
    let subjects = (0..cfg.subjects as u64)
        .map(|i| {
            let mut rng = RngStream::new(data_seed, i);
            let noise: Vec<f64> = (0..dims.len()).map(|_| rng.standard_normal()).collect();
            let smooth = gaussian_smooth(&Volume::new(dims, noise)?, cfg.fwhm_vox)?;
            let sd = if dims.len() > 1 {
                sample_sd(smooth.data())
            } else {
                1.0
            };
            let scale = if sd > 0.0 { sd } else { 1.0 };
            let mut data: Vec<f64> = smooth.into_data().into_iter().map(|v| v / scale).collect();
            if let Some(sig) = &signal {
                for (d, s) in data.iter_mut().zip(sig) {
                    *d += s;
                }
            }
            Volume::new(dims, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SubjectStack::new(subjects, Mask::full(dims))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial_index: u64,
    pub clusters: usize,
    pub discoveries: usize,
    pub false_discoveries: usize,
    pub fdp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialAggregate {
    pub trials: usize,
    pub alpha_fdr: f64,
    pub mean_fdp: f64,
    pub mean_discoveries: f64,
    pub any_rejection_fraction: f64,
    /// Wilson score interval for `any_rejection_fraction`.
    pub ci95: [f64; 2],
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> [f64; 2] {
    const Z: f64 = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // The closed-form bounds are exactly 0 and 1 at the extremes; the
    // floating-point expression is not.
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes >= n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    [lo, hi]
}

pub fn aggregate(outcomes: &[TrialOutcome], alpha_fdr: f64) -> TrialAggregate {
    let n = outcomes.len();
    let nf = n as f64;
    let any = outcomes.iter().filter(|o| o.discoveries > 0).count();
    TrialAggregate {
        trials: n,
        alpha_fdr,
        mean_fdp: outcomes.iter().map(|o| o.fdp).sum::<f64>() / nf,
        mean_discoveries: outcomes.iter().map(|o| o.discoveries as f64).sum::<f64>() / nf,
        any_rejection_fraction: any as f64 / nf,
        ci95: wilson_interval(any, n),
    }
}

/// One trial: generate data, build the null, score clusters, apply BH.
/// Discoveries whose peak falls outside the signal sphere are false.
pub fn run_trial(
    template: &SynthConfig,
    trial_index: u64,
    perm: &PermutationConfig,
) -> Result<TrialOutcome> {
    let cfg = SynthConfig {
        trial_index,
        ..*template
    };
    let stack = generate_stack(&cfg)?;
    let perm = PermutationConfig {
        master_seed: trial_perm_seed(perm.master_seed, trial_index),
        ..*perm
    };
    let analysis = analyze_contrast(&stack, &perm)?;
    let clusters = apply_fdr_to_clusters(&analysis.clusters, perm.alpha_fdr)?;
    let rejected: Vec<_> = clusters
        .iter()
        .filter(|c| c.significant_fdr == Some(true))
        .collect();
    let false_discoveries = rejected
        .iter()
        .filter(|c| {
            !cfg.signal
                .is_some_and(|s| s.amplitude != 0.0 && s.contains(c.peak_xyz))
        })
        .count();
    let discoveries = rejected.len();
    Ok(TrialOutcome {
        trial_index,
        clusters: clusters.len(),
        discoveries,
        false_discoveries,
        fdp: false_discoveries as f64 / discoveries.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub outcomes: Vec<TrialOutcome>,
    pub aggregate: TrialAggregate,
}

/// Trials 0..trials, run in parallel and reported in trial order.
pub fn run_trials(
    template: &SynthConfig,
    trials: usize,
    perm: &PermutationConfig,
) -> Result<TrialReport> {
    if trials < 1 {
        return Err(Error::InvalidArgument(
            "at least one trial is required".into(),
        ));
    }
    template.validate()?;
    perm.validate()?;
    let outcomes = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(template, t, perm))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&outcomes, perm.alpha_fdr);
    Ok(TrialReport {
        outcomes,
        aggregate,
    })
}
