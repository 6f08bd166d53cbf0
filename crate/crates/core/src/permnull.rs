//! Sign-flip null distribution of cluster extent and uncorrected cluster
//! p-values.
//!
//! Each of B realizations flips the sign of every subject map at random,
//! recomputes the t-map, and extracts clusters at the cluster-forming
//! threshold. A realization contributes its extent histogram normalized to
//! total 1, or a point mass at extent 0 when it has no clusters. The null is
//! the average of those contributions, i.e. the distribution of the extent
//! of a uniformly chosen cluster from a random realization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::clustering::{extract_clusters, label_components, Cluster, Connectivity};
use crate::error::{Error, Result};
use crate::format::sig17;
use crate::stats::{one_sample_tmap, sign_vector, t_upper_quantile, tmap_into};
use crate::volume::SubjectStack;

pub const DEFAULT_REALIZATIONS: usize = 5000;
pub const DEFAULT_CDTS: [f64; 2] = [0.001, 0.01];
pub const DEFAULT_ALPHA_FDR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    /// Number of sign-flip realizations (B).
    pub realizations: usize,
    pub master_seed: u64,
    /// Cluster-defining threshold as a one-sided voxel p-value.
    pub cdt_p: f64,
    pub connectivity: Connectivity,
    pub alpha_fdr: f64,
}

impl PermutationConfig {
    pub fn new(master_seed: u64, cdt_p: f64) -> Self {
        PermutationConfig {
            realizations: DEFAULT_REALIZATIONS,
            master_seed,
            cdt_p,
            connectivity: Connectivity::default(),
            alpha_fdr: DEFAULT_ALPHA_FDR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations < 1 {
            return Err(Error::InvalidArgument(
                "at least one realization is required".into(),
            ));
        }
        if !(self.cdt_p > 0.0 && self.cdt_p < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "cluster-defining threshold p = {} must lie in (0, 0.5)",
                self.cdt_p
            )));
        }
        if !(self.alpha_fdr > 0.0 && self.alpha_fdr < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "FDR level {} must lie in (0, 1)",
                self.alpha_fdr
            )));
        }
        Ok(())
    }
}

/// Settings that produced a null distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullFingerprint {
    pub cdt_p: f64,
    pub t_threshold: f64,
    pub df: usize,
    pub connectivity: Connectivity,
    pub master_seed: u64,
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtentNullDistribution {
    mass: BTreeMap<usize, f64>,
    realizations: usize,
    zero_cluster_fraction: f64,
    fingerprint: NullFingerprint,
}

impl ExtentNullDistribution {
    /// Pools per-realization cluster extents. `extents[r]` lists the extents
    /// found in realization r; the order of realizations fixes the order of
    /// the floating-point reduction.
    pub fn from_realizations(extents: &[Vec<usize>], fingerprint: NullFingerprint) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one realization is required".into(),
            ));
        }
        let b = extents.len();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut empty = 0usize;
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for list in extents {
            if list.is_empty() {
                empty += 1;
                *acc.entry(0).or_insert(0.0) += 1.0;
                continue;
            }
            hist.clear();
            for &e in list {
                if e == 0 {
                    return Err(Error::InvalidArgument(
                        "cluster extent 0 in realization".into(),
                    ));
                }
                *hist.entry(e).or_insert(0) += 1;
            }
            let k = list.len() as f64;
            for (&e, &count) in &hist {
                *acc.entry(e).or_insert(0.0) += count as f64 / k;
            }
        }
        let bf = b as f64;
        let mass = acc.into_iter().map(|(e, m)| (e, m / bf)).collect();
        Ok(ExtentNullDistribution {
            mass,
            realizations: b,
            zero_cluster_fraction: empty as f64 / bf,
            fingerprint: NullFingerprint {
                realizations: b,
                ..fingerprint
            },
        })
    }

    pub fn mass(&self) -> &BTreeMap<usize, f64> {
        &self.mass
    }

    pub fn mass_at(&self, extent: usize) -> f64 {
        self.mass.get(&extent).copied().unwrap_or(0.0)
    }

    pub fn realizations(&self) -> usize {
        self.realizations
    }

    pub fn zero_cluster_fraction(&self) -> f64 {
        self.zero_cluster_fraction
    }

    pub fn fingerprint(&self) -> &NullFingerprint {
        &self.fingerprint
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn to_json(&self) -> String {
        let f = &self.fingerprint;
        let mass = self
            .mass
            .iter()
            .map(|(&e, &m)| {
                let raw = RawValue::from_string(sig17(m)).expect("decimal is valid JSON");
                (e, raw)
            })
            .collect();
        let file = NullFile {
            format_version: 1,
            b: self.realizations,
            master_seed: f.master_seed,
            cdt_p: f.cdt_p,
            t_threshold: f.t_threshold,
            df: f.df,
            connectivity: f.connectivity,
            mass,
        };
        serde_json::to_string_pretty(&file).expect("null distribution serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        use serde::de::Error as _;
        let file: NullFileIn = serde_json::from_str(text)?;
        if file.format_version != 1 {
            return Err(serde_json::Error::custom(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        if file.b == 0 {
            return Err(serde_json::Error::custom("B must be at least 1"));
        }
        let mass: BTreeMap<usize, f64> = file.mass.into_iter().collect();
        let zero_cluster_fraction = mass.get(&0).copied().unwrap_or(0.0);
        Ok(ExtentNullDistribution {
            mass,
            realizations: file.b,
            zero_cluster_fraction,
            fingerprint: NullFingerprint {
                cdt_p: file.cdt_p,
                t_threshold: file.t_threshold,
                df: file.df,
                connectivity: file.connectivity,
                master_seed: file.master_seed,
                realizations: file.b,
            },
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Serialize)]
struct NullFile {
    format_version: u32,
    #[serde(rename = "B")]
    b: usize,
    master_seed: u64,
    cdt_p: f64,
    t_threshold: f64,
    df: usize,
    connectivity: Connectivity,
    mass: Vec<(usize, Box<RawValue>)>,
}

#[derive(Deserialize)]
struct NullFileIn {
    format_version: u32,
    #[serde(rename = "B")]
    b: usize,
    master_seed: u64,
    cdt_p: f64,
    t_threshold: f64,
    df: usize,
    connectivity: Connectivity,
    mass: Vec<(usize, f64)>,
}

/// t threshold for a one-sided cluster-defining p at `df` degrees of freedom.
pub fn cluster_forming_threshold(cdt_p: f64, df: usize) -> Result<f64> {
    t_upper_quantile(cdt_p, df as f64)
}

/// Cluster extents for realization `r` (r ≥ 1), in cluster order.
pub fn realization_extents(
    stack: &SubjectStack,
    master_seed: u64,
    r: u64,
    t_threshold: f64,
    conn: Connectivity,
) -> Result<Vec<usize>> {
    let signs = sign_vector(master_seed, r, stack.len())?;
    let mut t = vec![0.0; stack.dims().len()];
    tmap_into(stack, &signs, &mut t)?;
    let clusters = label_components(stack.dims(), &t, stack.mask().inside(), t_threshold, conn);
    Ok(clusters.iter().map(|c| c.extent).collect())
}

/// Runs realizations 1..=B (in parallel on the current rayon pool) and pools
/// them. The observed labeling is not among them.
pub fn build_null(stack: &SubjectStack, cfg: &PermutationConfig) -> Result<ExtentNullDistribution> {
    cfg.validate()?;
    let df = stack.len() - 1;
    let t_threshold = cluster_forming_threshold(cfg.cdt_p, df)?;
    let extents = (1..=cfg.realizations as u64)
        .into_par_iter()
        .map(|r| realization_extents(stack, cfg.master_seed, r, t_threshold, cfg.connectivity))
        .collect::<Result<Vec<_>>>()?;
    ExtentNullDistribution::from_realizations(
        &extents,
        NullFingerprint {
            cdt_p: cfg.cdt_p,
            t_threshold,
            df,
            connectivity: cfg.connectivity,
            master_seed: cfg.master_seed,
            realizations: cfg.realizations,
        },
    )
}

/// P(extent ≥ `extent`) under the null, floored at 1/(B+1) and capped at 1.
pub fn null_pvalue(dist: &ExtentNullDistribution, extent: usize) -> f64 {
    // Summing from the largest extent down keeps p monotone in `extent`
    // under rounding. The sum of per-realization fractions can land an ulp
    // or two above 1, hence the cap.
    let tail: f64 = dist.mass.range(extent.max(1)..).rev().map(|(_, m)| m).sum();
    tail.clamp(1.0 / (dist.realizations as f64 + 1.0), 1.0)
}

/// Observed clusters with uncorrected p-values, plus the null they were
/// scored against.
#[derive(Debug, Clone)]
pub struct ContrastAnalysis {
    pub clusters: Vec<Cluster>,
    pub null: ExtentNullDistribution,
    pub t_threshold: f64,
    pub df: usize,
    pub zero_variance_count: usize,
}

pub fn analyze_contrast(stack: &SubjectStack, cfg: &PermutationConfig) -> Result<ContrastAnalysis> {
    let null = build_null(stack, cfg)?;
    let t_threshold = null.fingerprint().t_threshold;
    let observed = one_sample_tmap(stack, &vec![1.0; stack.len()])?;
    let clusters = extract_clusters(&observed, stack.mask(), t_threshold, cfg.connectivity)?
        .into_iter()
        .map(|c| Cluster {
            p_uncorrected: Some(null_pvalue(&null, c.extent)),
            ..c
        })
        .collect();
    Ok(ContrastAnalysis {
        clusters,
        null,
        t_threshold,
        df: observed.df,
        zero_variance_count: observed.zero_variance_count,
    })
}
