//! Joining published RFT-FWE cluster tables to the permutation/FDR results,
//! plus the CSV and SVG artifacts of that comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::format::sig17;

pub const DEFAULT_ALPHA_RFT: f64 = 0.05;
/// Reference line drawn on the scatter alongside the RFT alpha.
pub const STRICT_RFT_REFERENCE: f64 = 0.00001;

/// One row of a published cluster table.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedRow {
    pub contrast_id: String,
    pub extent: usize,
    pub p_rft_fwe: f64,
}

/// A cluster found by the analysis, tagged with its contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzedCluster {
    pub contrast_id: String,
    pub cluster: Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub contrast_id: String,
    pub cluster_id: usize,
    pub extent: usize,
    pub p_rft_fwe: f64,
    pub p_uncorrected: f64,
    pub q_value: f64,
    pub significant_rft: bool,
    pub significant_fdr: bool,
}

/// A published row with no analyzed counterpart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmatchedRow {
    pub contrast_id: String,
    pub extent: usize,
    pub p_rft_fwe: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JoinOutcome {
    pub rows: Vec<ComparisonRow>,
    pub unmatched: Vec<UnmatchedRow>,
}

/// Pairs published rows with analyzed clusters on (contrast, extent).
///
/// Rows sharing a key are paired in order: published rows in input order,
/// clusters by ascending id. A key present on both sides with different
/// counts cannot be paired and is an error; a key with no analyzed clusters
/// sends its published rows to `unmatched`. Significance flags are
/// `p_rft_fwe ≤ alpha_rft` and `q ≤ alpha_fdr`.
pub fn join_tables(
    published: &[PublishedRow],
    analyzed: &[AnalyzedCluster],
    alpha_rft: f64,
    alpha_fdr: f64,
) -> Result<JoinOutcome> {
    let mut pub_by_key: BTreeMap<(&str, usize), Vec<&PublishedRow>> = BTreeMap::new();
    for p in published {
        pub_by_key
            .entry((&p.contrast_id, p.extent))
            .or_default()
            .push(p);
    }
    let mut ana_by_key: BTreeMap<(&str, usize), Vec<&AnalyzedCluster>> = BTreeMap::new();
    for a in analyzed {
        ana_by_key
            .entry((&a.contrast_id, a.cluster.extent))
            .or_default()
            .push(a);
    }
    for list in ana_by_key.values_mut() {
        list.sort_by_key(|a| a.cluster.id);
    }

    let mut out = JoinOutcome::default();
    let mut conflicts: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (&(contrast, extent), pubs) in &pub_by_key {
        let anas = ana_by_key
            .get(&(contrast, extent))
            .map_or(&[][..], |v| &v[..]);
        if anas.is_empty() {
            out.unmatched.extend(pubs.iter().map(|p| UnmatchedRow {
                contrast_id: p.contrast_id.clone(),
                extent: p.extent,
                p_rft_fwe: p.p_rft_fwe,
            }));
            continue;
        }
        if anas.len() != pubs.len() {
            conflicts.entry(contrast).or_default().push(format!(
                "extent {extent}: {} published vs {} analyzed",
                pubs.len(),
                anas.len()
            ));
            continue;
        }
        for (p, a) in pubs.iter().zip(anas) {
            let c = &a.cluster;
            let p_unc = c.p_uncorrected.ok_or(Error::MissingP(c.id))?;
            let q = c.q_value.ok_or(Error::MissingP(c.id))?;
            out.rows.push(ComparisonRow {
                contrast_id: contrast.to_string(),
                cluster_id: c.id,
                extent,
                p_rft_fwe: p.p_rft_fwe,
                p_uncorrected: p_unc,
                q_value: q,
                significant_rft: p.p_rft_fwe <= alpha_rft,
                significant_fdr: q <= alpha_fdr,
            });
        }
    }
    if !conflicts.is_empty() {
        let msg = conflicts
            .iter()
            .map(|(c, list)| format!("contrast `{c}`: {}", list.join("; ")))
            .collect::<Vec<_>>()
            .join(" | ");
        return Err(Error::DuplicateAmbiguity(msg));
    }
    sort_rows(&mut out.rows);
    Ok(out)
}

fn sort_rows(rows: &mut [ComparisonRow]) {
    rows.sort_by(|a, b| {
        a.contrast_id
            .cmp(&b.contrast_id)
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
}

/// Quadrant counts of RFT-FWE versus FDR significance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub alpha_rft: f64,
    pub alpha_fdr: f64,
    pub total: usize,
    pub rft_sig_fdr_sig: usize,
    pub rft_sig_fdr_not: usize,
    pub rft_not_fdr_sig: usize,
    pub neither: usize,
    /// Smallest p_RFT-FWE among clusters that are not FDR-significant.
    pub min_p_rft_among_fdr_failures: Option<f64>,
    /// Largest p_RFT-FWE among FDR-significant clusters.
    pub max_p_rft_among_fdr_successes: Option<f64>,
}

pub fn summarize(rows: &[ComparisonRow], alpha_rft: f64, alpha_fdr: f64) -> ComparisonSummary {
    let mut s = ComparisonSummary {
        alpha_rft,
        alpha_fdr,
        total: rows.len(),
        rft_sig_fdr_sig: 0,
        rft_sig_fdr_not: 0,
        rft_not_fdr_sig: 0,
        neither: 0,
        min_p_rft_among_fdr_failures: None,
        max_p_rft_among_fdr_successes: None,
    };
    for r in rows {
        let rft = r.p_rft_fwe <= alpha_rft;
        let fdr = r.q_value <= alpha_fdr;
        match (rft, fdr) {
            (true, true) => s.rft_sig_fdr_sig += 1,
            (true, false) => s.rft_sig_fdr_not += 1,
            (false, true) => s.rft_not_fdr_sig += 1,
            (false, false) => s.neither += 1,
        }
        if fdr {
            let m = s.max_p_rft_among_fdr_successes.get_or_insert(r.p_rft_fwe);
            *m = m.max(r.p_rft_fwe);
        } else {
            let m = s.min_p_rft_among_fdr_failures.get_or_insert(r.p_rft_fwe);
            *m = m.min(r.p_rft_fwe);
        }
    }
    s
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Positions of the named columns in a CSV header; errors name the first
/// missing column.
fn column_positions(path: &Path, header: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| schema(path, 1, format!("missing required column `{name}`")))
        })
        .collect()
}

struct CsvTable {
    cols: Vec<usize>,
    records: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path, names: &[&str]) -> Result<Option<CsvTable>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(&bytes[..]);
    let header = rdr
        .headers()
        .map_err(|e| schema(path, 1, e.to_string()))?
        .clone();
    let cols = column_positions(path, &header, names)?;
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            schema(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        records.push((line, rec));
    }
    Ok(Some(CsvTable { cols, records }))
}

fn field(rec: &csv::StringRecord, col: usize) -> &str {
    rec.get(col).unwrap_or("").trim()
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| schema(path, line, format!("`{name}` value `{s}` is not valid")))
}

fn parse_prob(path: &Path, line: usize, name: &str, s: &str, allow_zero: bool) -> Result<f64> {
    let v: f64 = parse_field(path, line, name, s)?;
    let ok = if allow_zero {
        (0.0..=1.0).contains(&v)
    } else {
        v > 0.0 && v <= 1.0
    };
    if !ok {
        return Err(schema(
            path,
            line,
            format!("`{name}` value {v} is not a valid probability"),
        ));
    }
    Ok(v)
}

fn parse_bool(path: &Path, line: usize, name: &str, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(schema(
            path,
            line,
            format!("`{name}` must be true or false, got `{s}`"),
        )),
    }
}

/// Reads a published table with header `contrast_id,extent,p_rft_fwe`.
pub fn read_published_csv(path: impl AsRef<Path>) -> Result<Vec<PublishedRow>> {
    let path = path.as_ref();
    let names = ["contrast_id", "extent", "p_rft_fwe"];
    let Some(table) = read_table(path, &names)? else {
        return Err(schema(
            path,
            1,
            "missing header `contrast_id,extent,p_rft_fwe`",
        ));
    };
    let c = &table.cols;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let extent: usize = parse_field(path, *line, "extent", field(rec, c[1]))?;
            if extent == 0 {
                return Err(schema(path, *line, "`extent` must be at least 1"));
            }
            Ok(PublishedRow {
                contrast_id: field(rec, c[0]).to_string(),
                extent,
                p_rft_fwe: parse_prob(path, *line, "p_rft_fwe", field(rec, c[2]), false)?,
            })
        })
        .collect()
}

pub const CLUSTER_CSV_HEADER: [&str; 10] = [
    "contrast_id",
    "cluster_id",
    "extent",
    "peak_t",
    "peak_x",
    "peak_y",
    "peak_z",
    "p_uncorrected",
    "q_value",
    "significant_fdr",
];

fn opt_prob(v: Option<f64>) -> String {
    v.map(sig17).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => schema(path, 0, format!("{other:?}")),
    }
}

fn write_csv<F>(path: &Path, header: &[&str], mut body: F) -> Result<()>
where
    F: FnMut(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    body(&mut w).map_err(|e| csv_err(path, e))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes one contrast's clusters in the analysis CSV layout.
pub fn write_cluster_csv(
    contrast_id: &str,
    clusters: &[Cluster],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    write_csv(path, &CLUSTER_CSV_HEADER, |w| {
        for c in clusters {
            w.write_record([
                contrast_id.to_string(),
                c.id.to_string(),
                c.extent.to_string(),
                sig17(c.peak_t),
                c.peak_xyz.0.to_string(),
                c.peak_xyz.1.to_string(),
                c.peak_xyz.2.to_string(),
                opt_prob(c.p_uncorrected),
                opt_prob(c.q_value),
                c.significant_fdr.map(|b| b.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

/// Reads an analysis cluster CSV. An empty file yields no clusters.
pub fn read_cluster_csv(path: impl AsRef<Path>) -> Result<Vec<AnalyzedCluster>> {
    let path = path.as_ref();
    let Some(table) = read_table(path, &CLUSTER_CSV_HEADER)? else {
        return Ok(Vec::new());
    };
    let c = &table.cols;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let get = |i: usize| field(rec, c[i]);
            let opt_p = |i: usize, name: &str| -> Result<Option<f64>> {
                match get(i) {
                    "" => Ok(None),
                    s => parse_prob(path, line, name, s, true).map(Some),
                }
            };
            let coord = |i: usize, name: &str| parse_field::<usize>(path, line, name, get(i));
            let extent: usize = parse_field(path, line, "extent", get(2))?;
            if extent == 0 {
                return Err(schema(path, line, "`extent` must be at least 1"));
            }
            let cluster = Cluster {
                id: parse_field(path, line, "cluster_id", get(1))?,
                extent,
                peak_t: parse_field(path, line, "peak_t", get(3))?,
                peak_xyz: (
                    coord(4, "peak_x")?,
                    coord(5, "peak_y")?,
                    coord(6, "peak_z")?,
                ),
                peak_index: 0,
                p_uncorrected: opt_p(7, "p_uncorrected")?,
                q_value: opt_p(8, "q_value")?,
                significant_fdr: match get(9) {
                    "" => None,
                    s => Some(parse_bool(path, line, "significant_fdr", s)?),
                },
            };
            Ok(AnalyzedCluster {
                contrast_id: get(0).to_string(),
                cluster,
            })
        })
        .collect()
}

pub const COMPARISON_CSV_HEADER: [&str; 8] = [
    "contrast_id",
    "cluster_id",
    "extent",
    "p_rft_fwe",
    "p_uncorrected",
    "q_value",
    "significant_rft",
    "significant_fdr",
];

/// Writes comparison rows sorted by (contrast_id, cluster_id).
pub fn emit_comparison_csv(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    write_csv(path, &COMPARISON_CSV_HEADER, |w| {
        for r in &sorted {
            w.write_record([
                r.contrast_id.clone(),
                r.cluster_id.to_string(),
                r.extent.to_string(),
                sig17(r.p_rft_fwe),
                sig17(r.p_uncorrected),
                sig17(r.q_value),
                r.significant_rft.to_string(),
                r.significant_fdr.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn read_comparison_csv(path: impl AsRef<Path>) -> Result<Vec<ComparisonRow>> {
    let path = path.as_ref();
    let Some(table) = read_table(path, &COMPARISON_CSV_HEADER)? else {
        return Ok(Vec::new());
    };
    let c = &table.cols;
    table
        .records
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let get = |i: usize| field(rec, c[i]);
            Ok(ComparisonRow {
                contrast_id: get(0).to_string(),
                cluster_id: parse_field(path, line, "cluster_id", get(1))?,
                extent: parse_field(path, line, "extent", get(2))?,
                p_rft_fwe: parse_prob(path, line, "p_rft_fwe", get(3), false)?,
                p_uncorrected: parse_prob(path, line, "p_uncorrected", get(4), false)?,
                q_value: parse_prob(path, line, "q_value", get(5), false)?,
                significant_rft: parse_bool(path, line, "significant_rft", get(6))?,
                significant_fdr: parse_bool(path, line, "significant_fdr", get(7))?,
            })
        })
        .collect()
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

/// Marker position in data units: (−log10 p_RFT-FWE, −log10 p_uncorrected).
pub fn scatter_coordinates(row: &ComparisonRow) -> (f64, f64) {
    (-row.p_rft_fwe.log10(), -row.p_uncorrected.log10())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Static scatter of −log10 p_RFT-FWE against −log10 p_uncorrected. Filled
/// markers are FDR-significant. Output depends only on the inputs.
pub fn render_scatter_svg(rows: &[ComparisonRow], cdt_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="640" height="480" viewBox="0 0 640 480">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="640" height="480" fill="white"/>"#
    );
    let title = format!(
        "RFT-FWE vs permutation FDR, CDT = {}",
        xml_escape(cdt_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="320" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#
    );
    if rows.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="320" y="240" text-anchor="middle" font-family="sans-serif" font-size="18">no data</text>"#
        );
        s.push_str("</svg>\n");
        return s;
    }

    let coords: Vec<(f64, f64)> = rows.iter().map(scatter_coordinates).collect();
    let max_x = coords.iter().map(|c| c.0).fold(0.0, f64::max);
    let max_y = coords.iter().map(|c| c.1).fold(0.0, f64::max);
    let x_max = (max_x + 0.5).ceil().max(6.0);
    let y_max = (max_y + 0.5).ceil().max(4.0);
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + x / x_max * plot_w;
    let py = |y: f64| MARGIN_TOP + plot_h - y / y_max * plot_h;
    let bottom = MARGIN_TOP + plot_h;

    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=(x_max as usize) {
        let x = px(i as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.3}" y1="{bottom}" x2="{x:.3}" y2="{:.3}" stroke="black"/><text x="{x:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{i}</text>"#,
            bottom + 5.0,
            bottom + 18.0
        );
    }
    for i in 0..=(y_max as usize) {
        let y = py(i as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{MARGIN_LEFT}" y2="{y:.3}" stroke="black"/><text x="{:.3}" y="{:.3}" text-anchor="end" font-family="sans-serif" font-size="11">{i}</text>"#,
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="13">-log10 p (RFT-FWE, published)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        SVG_HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {:.3})">-log10 p (uncorrected, permutation)</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );
    for p in [DEFAULT_ALPHA_RFT, STRICT_RFT_REFERENCE] {
        let x = px(-p.log10());
        let _ = writeln!(
            s,
            r#"<line class="reference" data-p="{p}" x1="{x:.3}" y1="{MARGIN_TOP}" x2="{x:.3}" y2="{bottom}" stroke="gray" stroke-dasharray="6,4"/>"#
        );
    }
    for (r, &(x, y)) in rows.iter().zip(&coords) {
        let fill = if r.significant_fdr {
            r##"fill="#1f77b4""##
        } else {
            r#"fill="none""#
        };
        let _ = writeln!(
            s,
            r##"<circle class="marker" cx="{:.3}" cy="{:.3}" r="4" {fill} stroke="#1f77b4" stroke-width="1.5" data-contrast="{}" data-cluster="{}" data-x="{}" data-y="{}"/>"##,
            px(x),
            py(y),
            xml_escape(&r.contrast_id),
            r.cluster_id,
            sig17(x),
            sig17(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_scatter_svg(
    rows: &[ComparisonRow],
    path: impl AsRef<Path>,
    cdt_label: &str,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_scatter_svg(rows, cdt_label)).map_err(|e| Error::io(path, e))
}
