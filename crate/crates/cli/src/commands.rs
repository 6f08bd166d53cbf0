use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use clusterfdr::permnull::analyze_contrast;
use clusterfdr::report::{read_cluster_csv, read_published_csv, write_cluster_csv, UnmatchedRow};
use clusterfdr::synth::{run_trials, TrialAggregate, TrialOutcome};
use clusterfdr::volume::{
    is_volume_path, load_mask, load_mask_list, load_volume, write_nifti, write_raw,
};
use clusterfdr::{
    apply_fdr_to_clusters, emit_comparison_csv, emit_scatter_svg, join_tables, one_sample_tmap,
    summarize, t_upper_quantile, ComparisonSummary, Dims, Error, PermutationConfig, Signal,
    SubjectStack, SynthConfig,
};

use crate::config::*;
use crate::{AnalyzeArgs, CompareArgs, QuantileArgs, SimulateArgs, TmapArgs};

/// Volumes named by a directory (lexicographic file-name order) or by a list
/// file with one path per line. Relative list entries resolve against the
/// list's directory; blank lines and `#` comments are skipped.
fn resolve_subjects(spec: &SubjectsSpec) -> CliResult<Vec<PathBuf>> {
    let source = match spec {
        SubjectsSpec::Files(files) => return Ok(files.clone()),
        SubjectsSpec::Source(p) => p,
    };
    let io = |e: std::io::Error| CliError::io(format!("cannot read {}: {e}", source.display()));
    if source.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(source).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.is_file() && is_volume_path(&path) {
                files.push(path);
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        return Ok(files);
    }
    let text = fs::read_to_string(source).map_err(io)?;
    let base = source.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

fn load_stack(files: &[PathBuf], mask: &Path, mask_threshold: f64) -> CliResult<SubjectStack> {
    if files.len() < 2 {
        return Err(Error::TooFewSubjects(files.len()).into());
    }
    let volumes = files
        .iter()
        .map(load_volume)
        .collect::<Result<Vec<_>, _>>()?;
    let mask = if mask.extension().is_some_and(|e| e == "csv") {
        load_mask_list(mask, volumes[0].dims())?
    } else {
        load_mask(mask, mask_threshold)?
    };
    Ok(SubjectStack::new(volumes, mask)?)
}

/// Runs `f` on a pool of exactly `threads` workers, or on the global pool.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::usage(format!("cannot start {k} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    if dir.as_os_str().is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

fn check_unit(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{name} must lie in (0, 1), got {v}"
        )))
    }
}

pub fn tmap(a: TmapArgs) -> CliResult<u8> {
    let mut flags = Flags::default();
    flags
        .set("subjects", a.subjects)
        .set("mask", a.mask)
        .set("mask_threshold", a.mask_threshold)
        .set("out", a.out);
    let merged = merge(tmap_defaults(), a.config.as_deref(), flags)?;
    for key in ["subjects", "mask", "out"] {
        merged.require(key, "")?;
    }
    let cfg: TmapConfig = merged.resolve()?;
    let files = resolve_subjects(&cfg.subjects)?;
    let stack = load_stack(&files, &cfg.mask, cfg.mask_threshold)?;
    let tm = one_sample_tmap(&stack, &vec![1.0; stack.len()])?;

    if let Some(dir) = cfg.out.parent() {
        create_dir(dir)?;
    }
    if cfg.out.extension().is_some_and(|e| e == "f32raw") {
        write_raw(&tm.volume, &cfg.out)?;
    } else {
        write_nifti(&tm.volume, &cfg.out)?;
    }
    let resolved = TmapConfig {
        subjects: SubjectsSpec::Files(files),
        ..cfg
    };
    let mut config_path = resolved.out.clone().into_os_string();
    config_path.push(".config.json");
    write_json(&resolved, Path::new(&config_path))?;

    println!("N = {}", stack.len());
    println!("df = {}", tm.df);
    println!("zero_variance_voxels = {}", tm.zero_variance_count);
    Ok(0)
}

pub fn analyze(a: AnalyzeArgs) -> CliResult<u8> {
    let connectivity = a
        .connectivity
        .as_deref()
        .map(parse_connectivity)
        .transpose()?;
    let tail = a
        .tail
        .as_deref()
        .map(|s| s.parse::<Tail>().map_err(CliError::usage))
        .transpose()?;
    let mut flags = Flags::default();
    flags
        .set("subjects", a.subjects)
        .set("mask", a.mask)
        .set("mask_threshold", a.mask_threshold)
        .set("seed", a.seed)
        .set("out_dir", a.out_dir)
        .set("cdt", (!a.cdt.is_empty()).then_some(a.cdt))
        .set("realizations", a.realizations)
        .set("alpha", a.alpha)
        .set("connectivity", connectivity)
        .set("tail", tail)
        .set("contrast_id", a.contrast_id)
        .set("threads", a.threads);
    let merged = merge(analyze_defaults(), a.config.as_deref(), flags)?;
    merged.require("seed", " (seeds are mandatory for stochastic commands)")?;
    for key in ["subjects", "mask", "out_dir"] {
        merged.require(key, "")?;
    }
    let threads = merged.threads;
    let cfg: AnalyzeConfig = merged.resolve()?;

    if cfg.cdt.is_empty() {
        return Err(CliError::usage("at least one --cdt is required"));
    }
    let perms: Vec<PermutationConfig> = cfg
        .cdt
        .iter()
        .map(|&cdt_p| PermutationConfig {
            realizations: cfg.realizations,
            master_seed: cfg.seed,
            cdt_p,
            connectivity: cfg.connectivity,
            alpha_fdr: cfg.alpha,
        })
        .collect();
    for (i, p) in perms.iter().enumerate() {
        p.validate()?;
        if cfg.cdt[..i].contains(&p.cdt_p) {
            return Err(CliError::usage(format!("--cdt {} given twice", p.cdt_p)));
        }
    }

    let files = resolve_subjects(&cfg.subjects)?;
    let mut stack = load_stack(&files, &cfg.mask, cfg.mask_threshold)?;
    if cfg.tail == Tail::Lower {
        stack = stack.negated();
    }
    create_dir(&cfg.out_dir)?;

    for perm in &perms {
        let analysis = with_threads(threads, || analyze_contrast(&stack, perm))??;
        let clusters = apply_fdr_to_clusters(&analysis.clusters, cfg.alpha)?;
        let suffix = format!("cdt{}", perm.cdt_p);
        write_cluster_csv(
            &cfg.contrast_id,
            &clusters,
            cfg.out_dir.join(format!("clusters_{suffix}.csv")),
        )?;
        analysis
            .null
            .write_json(cfg.out_dir.join(format!("null_{suffix}.json")))?;
        let resolved = AnalyzeConfig {
            subjects: SubjectsSpec::Files(files.clone()),
            cdt: vec![perm.cdt_p],
            ..cfg.clone()
        };
        write_json(
            &resolved,
            &cfg.out_dir.join(format!("config_{suffix}.json")),
        )?;

        let significant = clusters
            .iter()
            .filter(|c| c.significant_fdr == Some(true))
            .count();
        println!(
            "{suffix}: N = {}, df = {}, t* = {:.6}, clusters = {}, FDR-significant = {}, zero_variance_voxels = {}",
            stack.len(),
            analysis.df,
            analysis.t_threshold,
            clusters.len(),
            significant,
            analysis.zero_variance_count
        );
    }
    Ok(0)
}

/// `clusters_cdt0.01.csv` → `0.01`.
fn label_from_path(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let at = stem.find("cdt")?;
    let label = &stem[at + 3..];
    (!label.is_empty()).then(|| label.to_string())
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    config: &'a CompareConfig,
    summary: ComparisonSummary,
    matched: usize,
    unmatched: &'a [UnmatchedRow],
}

pub fn compare(a: CompareArgs) -> CliResult<u8> {
    let mut flags = Flags::default();
    flags
        .set("published", a.published)
        .set("analyzed", a.analyzed)
        .set("out_dir", a.out_dir)
        .set("alpha_rft", a.alpha_rft)
        .set("alpha_fdr", a.alpha_fdr)
        .set("cdt_label", a.cdt_label);
    let mut merged = merge(compare_defaults(), a.config.as_deref(), flags)?;
    for key in ["published", "analyzed", "out_dir"] {
        merged.require(key, "")?;
    }
    if merged.object.get("cdt_label").is_none_or(|v| v.is_null()) {
        let analyzed = merged.object["analyzed"].as_str().map(PathBuf::from);
        let label = analyzed
            .as_deref()
            .and_then(label_from_path)
            .unwrap_or_else(|| "unspecified".to_string());
        merged.object.insert("cdt_label".into(), label.into());
    }
    let cfg: CompareConfig = merged.resolve()?;
    check_unit("--alpha-rft", cfg.alpha_rft)?;
    check_unit("--alpha-fdr", cfg.alpha_fdr)?;

    let published = read_published_csv(&cfg.published)?;
    let analyzed = read_cluster_csv(&cfg.analyzed)?;
    let joined = join_tables(&published, &analyzed, cfg.alpha_rft, cfg.alpha_fdr)?;
    let summary = summarize(&joined.rows, cfg.alpha_rft, cfg.alpha_fdr);

    create_dir(&cfg.out_dir)?;
    emit_comparison_csv(&joined.rows, cfg.out_dir.join("comparison.csv"))?;
    emit_scatter_svg(
        &joined.rows,
        cfg.out_dir.join("scatter.svg"),
        &cfg.cdt_label,
    )?;
    write_json(
        &CompareSummary {
            config: &cfg,
            summary: summary.clone(),
            matched: joined.rows.len(),
            unmatched: &joined.unmatched,
        },
        &cfg.out_dir.join("summary.json"),
    )?;

    println!(
        "matched = {}, unmatched = {}, RFT+FDR = {}, RFT only = {}, FDR only = {}, neither = {}",
        joined.rows.len(),
        joined.unmatched.len(),
        summary.rft_sig_fdr_sig,
        summary.rft_sig_fdr_not,
        summary.rft_not_fdr_sig,
        summary.neither
    );
    Ok(0)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    trials: usize,
    alpha_fdr: f64,
    mean_fdp: f64,
    mean_discoveries: f64,
    any_rejection_fraction: f64,
    ci95: [f64; 2],
    validation_passed: bool,
    config: &'a SimulateConfig,
    outcomes: &'a [TrialOutcome],
}

pub fn simulate(a: SimulateArgs) -> CliResult<u8> {
    let connectivity = a
        .connectivity
        .as_deref()
        .map(parse_connectivity)
        .transpose()?;
    let dims = a
        .dims
        .as_deref()
        .map(|s| parse_triple::<usize>(s, "--dims"))
        .transpose()?;
    let center = a
        .signal_center
        .as_deref()
        .map(|s| parse_triple::<f64>(s, "--signal-center"))
        .transpose()?;
    let mut flags = Flags::default();
    flags
        .set("seed", a.seed)
        .set("out", a.out)
        .set("trials", a.trials)
        .set("dims", dims)
        .set("subjects", a.subjects)
        .set("fwhm", a.fwhm)
        .set("realizations", a.realizations)
        .set("cdt", a.cdt)
        .set("alpha", a.alpha)
        .set("connectivity", connectivity)
        .set("max_rejection_fraction", a.max_rejection_fraction)
        .set("threads", a.threads);
    let merged = merge(simulate_defaults(), a.config.as_deref(), flags)?;
    merged.require("seed", " (seeds are mandatory for stochastic commands)")?;
    let threads = merged.threads;
    let mut cfg: SimulateConfig = merged.resolve()?;

    if cfg.trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let bound = cfg.max_rejection_fraction;
    if !(0.0..=1.0).contains(&bound) {
        return Err(CliError::usage(format!(
            "--max-rejection-fraction must lie in [0, 1], got {bound}"
        )));
    }
    let any_signal_flag =
        a.signal_radius.is_some() || a.signal_amplitude.is_some() || center.is_some();
    if any_signal_flag {
        let mut spec = cfg.signal.unwrap_or_default();
        spec.radius = a.signal_radius.or(spec.radius);
        spec.amplitude = a.signal_amplitude.or(spec.amplitude);
        spec.center = center.or(spec.center);
        cfg.signal = Some(spec);
    }
    let [nx, ny, nz] = cfg.dims;
    let signal = cfg.signal.map(|s| Signal {
        center: s.center.unwrap_or([
            (nx as f64 - 1.0) / 2.0,
            (ny as f64 - 1.0) / 2.0,
            (nz as f64 - 1.0) / 2.0,
        ]),
        radius: s.radius.unwrap_or(DEFAULT_SIGNAL_RADIUS),
        amplitude: s.amplitude.unwrap_or(DEFAULT_SIGNAL_AMPLITUDE),
    });
    cfg.signal = signal.map(|s| SignalSpec {
        center: Some(s.center),
        radius: Some(s.radius),
        amplitude: Some(s.amplitude),
    });

    let template = SynthConfig {
        dims: Dims::new(nx, ny, nz),
        subjects: cfg.subjects,
        fwhm_vox: cfg.fwhm,
        signal,
        master_seed: cfg.seed,
        trial_index: 0,
    };
    let perm = PermutationConfig {
        realizations: cfg.realizations,
        master_seed: cfg.seed,
        cdt_p: cfg.cdt,
        connectivity: cfg.connectivity,
        alpha_fdr: cfg.alpha,
    };
    let report = with_threads(threads, || run_trials(&template, cfg.trials, &perm))??;
    let TrialAggregate {
        trials,
        alpha_fdr,
        mean_fdp,
        mean_discoveries,
        any_rejection_fraction,
        ci95,
    } = report.aggregate;
    let passed = any_rejection_fraction <= bound;

    if let Some(dir) = cfg.out.parent() {
        create_dir(dir)?;
    }
    write_json(
        &SimulateSummary {
            trials,
            alpha_fdr,
            mean_fdp,
            mean_discoveries,
            any_rejection_fraction,
            ci95,
            validation_passed: passed,
            config: &cfg,
            outcomes: &report.outcomes,
        },
        &cfg.out,
    )?;

    println!(
        "trials = {trials}, any_rejection_fraction = {any_rejection_fraction:.4} (95% CI {:.4}..{:.4}), mean_fdp = {mean_fdp:.4}, mean_discoveries = {mean_discoveries:.3}",
        ci95[0], ci95[1]
    );
    if passed {
        Ok(0)
    } else {
        eprintln!(
            "validation failed: any_rejection_fraction {any_rejection_fraction} exceeds bound {bound}"
        );
        Ok(3)
    }
}

pub fn quantile(a: QuantileArgs) -> CliResult<u8> {
    let t = t_upper_quantile(a.p, a.df as f64)?;
    println!("{t:.6}");
    Ok(0)
}
