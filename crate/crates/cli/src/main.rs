//! `clusterfdr`: t-maps, sign-flip cluster inference, RFT-FWE comparison
//! and Monte Carlo validation from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
//! 3 simulation validation failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "clusterfdr",
    version,
    about = "Permutation cluster-extent inference with FDR control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the observed one-sample t-map.
    Tmap(TmapArgs),
    /// Build sign-flip extent nulls and score observed clusters per CDT.
    Analyze(AnalyzeArgs),
    /// Join a published RFT-FWE table with analyzed clusters.
    Compare(CompareArgs),
    /// Monte Carlo check of FDR control on synthetic data.
    Simulate(SimulateArgs),
    /// Print the upper-tail Student-t quantile.
    Quantile(QuantileArgs),
}

#[derive(Args, Debug, Default)]
pub struct TmapArgs {
    /// Directory of subject volumes (lexicographic order) or a list file.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    /// Mask volume (.nii / .f32raw) or `x,y,z` coordinate CSV.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    /// Master seed (required).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Cluster-defining threshold p; repeat for several [default: 0.001 0.01].
    #[arg(long)]
    pub cdt: Vec<f64>,
    /// Number of sign-flip realizations [default: 5000].
    #[arg(long)]
    pub realizations: Option<usize>,
    /// FDR level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// 6, 18 or 26 [default: 26].
    #[arg(long)]
    pub connectivity: Option<String>,
    /// `upper`, or `lower` to analyze the negated maps [default: upper].
    #[arg(long)]
    pub tail: Option<String>,
    /// Label written to the contrast_id column [default: contrast].
    #[arg(long)]
    pub contrast_id: Option<String>,
    /// Worker threads; never changes output.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CompareArgs {
    /// CSV with header `contrast_id,extent,p_rft_fwe`.
    #[arg(long)]
    pub published: Option<PathBuf>,
    /// Cluster CSV written by `analyze`.
    #[arg(long)]
    pub analyzed: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub alpha_rft: Option<f64>,
    #[arg(long)]
    pub alpha_fdr: Option<f64>,
    /// Plot label; defaults to the `cdt…` part of the analyzed file name.
    #[arg(long)]
    pub cdt_label: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Summary JSON path [default: simulation_summary.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 200]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Grid as `nx,ny,nz` [default: 20,20,20].
    #[arg(long)]
    pub dims: Option<String>,
    /// [default: 20]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Smoothing FWHM in voxels [default: 2].
    #[arg(long)]
    pub fwhm: Option<f64>,
    /// [default: 500]
    #[arg(long)]
    pub realizations: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    pub cdt: Option<f64>,
    /// [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub connectivity: Option<String>,
    /// Signal sphere radius in voxels; enables the signal with --signal-amplitude.
    #[arg(long)]
    pub signal_radius: Option<f64>,
    #[arg(long)]
    pub signal_amplitude: Option<f64>,
    /// Sphere center `x,y,z` [default: grid center].
    #[arg(long)]
    pub signal_center: Option<String>,
    /// Exit 3 when the fraction of trials with any rejection exceeds this [default: 0.10].
    #[arg(long)]
    pub max_rejection_fraction: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QuantileArgs {
    /// Upper-tail probability in (0, 0.5].
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub df: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tmap(a) => commands::tmap(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Compare(a) => commands::compare(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Quantile(a) => commands::quantile(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
