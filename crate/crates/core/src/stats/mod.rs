//! Voxel-wise one-sample t statistics, Student-t numerics, and the seeded
//! random streams behind sign-flipping and simulation.

pub mod rng;
pub mod tdist;

pub use rng::{sign_vector, RngStream};
pub use tdist::{t_upper_quantile, t_upper_tail};

use crate::error::{Error, Result};
use crate::volume::{Datatype, SubjectStack, Volume};

/// A map of one-sample t values.
#[derive(Debug, Clone)]
pub struct TMap {
    pub volume: Volume,
    pub df: usize,
    /// In-mask voxels whose sample variance was exactly 0 (assigned t = 0).
    pub zero_variance_count: usize,
}

/// One-sample t-map of `signs[i] * subject_i`, computed voxel-wise with a
/// two-pass mean and variance. Out-of-mask voxels are 0.
pub fn one_sample_tmap(stack: &SubjectStack, signs: &[f64]) -> Result<TMap> {
    let mut out = vec![0.0; stack.dims().len()];
    let zero_variance_count = tmap_into(stack, signs, &mut out)?;
    let volume = Volume::with_metadata(
        stack.dims(),
        stack.subjects()[0].voxel_size(),
        out,
        Datatype::Float64,
    )?;
    Ok(TMap {
        volume,
        df: stack.len() - 1,
        zero_variance_count,
    })
}

/// Fills `out` with the t-map and returns the zero-variance count. `out`
/// must have one entry per voxel.
pub(crate) fn tmap_into(stack: &SubjectStack, signs: &[f64], out: &mut [f64]) -> Result<usize> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    if signs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} signs given for {n} subjects",
            signs.len()
        )));
    }
    if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
    }
    debug_assert_eq!(out.len(), stack.dims().len());

    let columns: Vec<&[f64]> = stack.subjects().iter().map(|v| v.data()).collect();
    let mask = stack.mask();
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let mut zero_variance = 0;
    let mut signed = vec![0.0; n];
    for (v, slot) in out.iter_mut().enumerate() {
        if !mask.contains(v) {
            *slot = 0.0;
            continue;
        }
        let mut sum = 0.0;
        for ((y, col), s) in signed.iter_mut().zip(&columns).zip(signs) {
            *y = s * col[v];
            sum += *y;
        }
        let mean = sum / nf;
        let ss: f64 = signed.iter().map(|y| (y - mean) * (y - mean)).sum();
        if ss == 0.0 {
            zero_variance += 1;
            *slot = 0.0;
        } else {
            let sd = (ss / (nf - 1.0)).sqrt();
            *slot = mean / (sd / sqrt_n);
        }
    }
    Ok(zero_variance)
}
