//! Cluster-extent inference for volumetric group statistics.
//!
//! A one-sample t-map is thresholded at a cluster-defining threshold, and
//! the observed clusters are scored against a null distribution of cluster
//! extent built from random sign-flips of the subject maps. The resulting
//! uncorrected p-values go through Benjamini–Hochberg per contrast, and the
//! decisions can be set against published RFT-FWE tables.
//!
//! Modules, bottom-up:
//!
//! * [`volume`]: grids, masks, NIfTI-1 and raw I/O
//! * [`stats`]: t-maps, Student-t numerics, SplitMix64 streams
//! * [`clustering`]: connected components above threshold
//! * [`permnull`]: the sign-flip extent null and cluster p-values
//! * [`fdr`]: Benjamini–Hochberg step-up
//! * [`report`]: published-table joins, CSV and SVG output
//! * [`synth`]: synthetic stacks and Monte Carlo FDR checks

pub mod clustering;
pub mod error;
pub mod fdr;
pub mod format;
pub mod permnull;
pub mod report;
pub mod stats;
pub mod synth;
pub mod volume;

pub use clustering::{extent_histogram, extract_clusters, Cluster, Connectivity};
pub use error::{Error, Result};
pub use fdr::{apply_fdr_to_clusters, bh_step_up, FdrResult};
pub use permnull::{
    analyze_contrast, build_null, null_pvalue, ContrastAnalysis, ExtentNullDistribution,
    PermutationConfig,
};
pub use report::{
    emit_comparison_csv, emit_scatter_svg, join_tables, summarize, ComparisonRow,
    ComparisonSummary, PublishedRow,
};
pub use stats::{one_sample_tmap, sign_vector, t_upper_quantile, t_upper_tail, RngStream, TMap};
pub use synth::{gaussian_smooth, generate_stack, run_trials, Signal, SynthConfig, TrialOutcome};
pub use volume::{Dims, Mask, SubjectStack, Volume};
