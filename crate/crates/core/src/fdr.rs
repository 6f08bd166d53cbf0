//! Benjamini–Hochberg step-up procedure over one contrast's cluster p-values.

use crate::clustering::Cluster;
use crate::error::{Error, Result};

/// Relative slack when comparing an adjusted p-value against alpha. Decimal
/// inputs that tie exactly with a step-up threshold (p = i·α/m) can land a
/// few ulps either side of it after rounding; the slack counts those as
/// ties, which BH rejects.
const TIE_RELATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    /// Per input p, in input order.
    pub rejected: Vec<bool>,
    /// Adjusted p-values, in input order.
    pub q_values: Vec<f64>,
    pub alpha: f64,
    /// Number of rejections.
    pub k_star: usize,
}

/// Benjamini–Hochberg at level `alpha`.
///
/// With p sorted ascending, the k* smallest are rejected where
/// k* = max{i : p(i) ≤ i·α/m}, and q(i) = min over j ≥ i of min(1, p(j)·m/j).
/// Rejection holds exactly when q ≤ α.
pub fn bh_step_up(pvals: &[f64], alpha: f64) -> Result<FdrResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "FDR level {alpha} must lie in (0, 1)"
        )));
    }
    for (index, &value) in pvals.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidP { index, value });
        }
    }
    let m = pvals.len();
    if m == 0 {
        return Ok(FdrResult {
            rejected: Vec::new(),
            q_values: Vec::new(),
            alpha,
            k_star: 0,
        });
    }

    let mut order: Vec<usize> = (0..m).collect();
    // Stable on ties, so equal p keep input order.
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));

    let mf = m as f64;
    let mut sorted_q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let p = pvals[order[rank - 1]];
        let adjusted = (p * (mf / rank as f64)).min(1.0);
        running = running.min(adjusted);
        sorted_q[rank - 1] = running;
    }

    let limit = alpha * (1.0 + TIE_RELATIVE_TOLERANCE);
    let k_star = sorted_q.iter().take_while(|&&q| q <= limit).count();
    let mut rejected = vec![false; m];
    let mut q_values = vec![0.0; m];
    for (rank, &idx) in order.iter().enumerate() {
        let mut q = sorted_q[rank];
        if rank < k_star {
            rejected[idx] = true;
            // Snap tie-level rounding noise so rejected ⇔ q ≤ α holds exactly.
            q = q.min(alpha);
        }
        q_values[idx] = q;
    }
    Ok(FdrResult {
        rejected,
        q_values,
        alpha,
        k_star,
    })
}

/// Fills `q_value` and `significant_fdr` using one BH pass over the
/// clusters' uncorrected p-values. Only pass clusters from one contrast.
pub fn apply_fdr_to_clusters(clusters: &[Cluster], alpha: f64) -> Result<Vec<Cluster>> {
    let pvals = clusters
        .iter()
        .map(|c| c.p_uncorrected.ok_or(Error::MissingP(c.id)))
        .collect::<Result<Vec<f64>>>()?;
    let res = bh_step_up(&pvals, alpha)?;
    Ok(clusters
        .iter()
        .zip(res.q_values.iter().zip(&res.rejected))
        .map(|(c, (&q, &r))| Cluster {
            q_value: Some(q),
            significant_fdr: Some(r),
            ..c.clone()
        })
        .collect())
}
