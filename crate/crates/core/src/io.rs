//! File formats: data CSVs, fit traces, fit reports, chain dumps, density
//! grids and comparison tables.
//!
//! Every CSV begins with a comment line `# vbil v<version> seed=<seed>
//! config=<hash>`; JSON reports carry the same information in a leading
//! `meta` field. Readers skip `#` lines. Wall-clock timings live in plain
//! `.txt` sidecars so the statistical outputs stay byte-identical across
//! reruns with the same seed.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VbilError};
use crate::expfam::{FactorSpec, ProductFamily};
use crate::likelihood::{GlmmData, GlmmPanel};
use crate::models::VbilModel;
use crate::optimizer::{FitTrace, StopReason};
use crate::pmmh::PmmhChain;
use crate::rng::seed_stream;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped on every output file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputMeta {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl OutputMeta {
    pub fn new(seed: u64, config_hash: &str) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_hash: config_hash.to_string(),
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# vbil v{} seed={} config={}",
            self.tool_version, self.seed, self.config_hash
        )
    }
}

/// Short hex digest of a config file's bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::Digest;
    let digest = sha2::Sha256::digest(bytes);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn read_data_lines(path: &Path) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path)?;
    let lines: Vec<String> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if lines.is_empty() {
        return Err(VbilError::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(lines)
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        VbilError::Parse(format!("{}: invalid numeric field '{field}'", path.display()))
    })
}

// ---------------------------------------------------------------------------
// data sets

/// Writes panel data as `panel_id,y,x1..xp` (the intercept column of the
/// stored covariate matrix is implicit and not written).
pub fn write_panel_csv(path: &Path, data: &GlmmData, meta: &OutputMeta) -> Result<()> {
    let p = data.n_covariates() - 1;
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    let mut header = "panel_id,y".to_string();
    for j in 1..=p {
        write!(header, ",x{j}").unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for (i, panel) in data.panels.iter().enumerate() {
        for (row, &y) in panel.y.iter().enumerate() {
            write!(out, "{i},{y}").unwrap();
            for j in 1..=p {
                write!(out, ",{}", panel.x[(row, j)]).unwrap();
            }
            writeln!(out).unwrap();
        }
    }
    write_atomic(path, &out)
}

/// Reads `panel_id,y,x1..xp`, prepending the intercept column.
pub fn read_panel_csv(path: &Path) -> Result<GlmmData> {
    let lines = read_data_lines(path)?;
    let header = &lines[0];
    if !header.starts_with("panel_id,y") {
        return Err(VbilError::Parse(format!(
            "{}: expected a 'panel_id,y,...' header, got '{header}'",
            path.display()
        )));
    }
    let n_cov = header.split(',').count() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<(f64, Vec<f64>)>> =
        std::collections::HashMap::new();
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cov + 2 {
            return Err(VbilError::Parse(format!(
                "{}: row has {} fields, expected {}",
                path.display(),
                fields.len(),
                n_cov + 2
            )));
        }
        let id = fields[0].trim().to_string();
        let y = parse_f64(fields[1], path)?;
        let xs = fields[2..]
            .iter()
            .map(|f| parse_f64(f, path))
            .collect::<Result<Vec<f64>>>()?;
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        grouped.entry(id).or_default().push((y, xs));
    }
    let mut panels = Vec::with_capacity(order.len());
    for id in order {
        let rows = grouped.remove(&id).unwrap();
        let n_i = rows.len();
        let mut x = DMatrix::zeros(n_i, n_cov + 1);
        let mut y = Vec::with_capacity(n_i);
        for (r, (yi, xs)) in rows.into_iter().enumerate() {
            y.push(yi);
            x[(r, 0)] = 1.0;
            for (j, v) in xs.into_iter().enumerate() {
                x[(r, j + 1)] = v;
            }
        }
        panels.push(GlmmPanel { y, x });
    }
    GlmmData::new(panels)
}

/// Writes a time series as `t,y`.
pub fn write_series_csv(path: &Path, y: &[f64], meta: &OutputMeta) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    writeln!(out, "t,y").unwrap();
    for (t, v) in y.iter().enumerate() {
        writeln!(out, "{},{}", t + 1, v).unwrap();
    }
    write_atomic(path, &out)
}

pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let lines = read_data_lines(path)?;
    if lines[0] != "t,y" {
        return Err(VbilError::Parse(format!(
            "{}: expected a 't,y' header, got '{}'",
            path.display(),
            lines[0]
        )));
    }
    lines[1..]
        .iter()
        .map(|line| {
            let mut fields = line.split(',');
            let _t = fields.next();
            let y = fields
                .next()
                .ok_or_else(|| VbilError::Parse(format!("{}: short row", path.display())))?;
            parse_f64(y, path)
        })
        .collect()
}

/// Writes raw observations as a single `y` column.
pub fn write_scalar_csv(path: &Path, y: &[f64], meta: &OutputMeta) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    writeln!(out, "y").unwrap();
    for v in y {
        writeln!(out, "{v}").unwrap();
    }
    write_atomic(path, &out)
}

pub fn read_scalar_csv(path: &Path) -> Result<Vec<f64>> {
    let lines = read_data_lines(path)?;
    if lines[0] != "y" {
        return Err(VbilError::Parse(format!(
            "{}: expected a 'y' header, got '{}'",
            path.display(),
            lines[0]
        )));
    }
    lines[1..].iter().map(|l| parse_f64(l, path)).collect()
}

// ---------------------------------------------------------------------------
// fit outputs

/// Trace CSV: `iter,lb_hat,lb_scaled,lb_window_avg,lambda_1..lambda_p`.
pub fn write_trace_csv(path: &Path, trace: &FitTrace, meta: &OutputMeta) -> Result<()> {
    let p = trace.final_family.dim_lambda();
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    let mut header = "iter,lb_hat,lb_scaled,lb_window_avg".to_string();
    for i in 1..=p {
        write!(header, ",lambda_{i}").unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for rec in &trace.iterations {
        write!(out, "{},{},{}", rec.iter, rec.lb_hat, rec.lb_scaled).unwrap();
        match rec.lb_window_avg {
            Some(w) => write!(out, ",{w}").unwrap(),
            None => write!(out, ",").unwrap(),
        }
        for v in rec.lambda.iter() {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out).unwrap();
    }
    write_atomic(path, &out)
}

/// One reported parameter's posterior summary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// The fit report serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub meta: OutputMeta,
    pub model: String,
    pub family: Vec<FactorSpec>,
    pub lambda: Vec<f64>,
    pub parameters: Vec<ParamSummary>,
    pub log_marginal_likelihood: f64,
    pub stop_reason: StopReason,
    pub iterations_run: usize,
}

/// Monte Carlo push-through summaries of the fitted family on the reported
/// scale (deterministic given the seed).
pub fn report_summaries<M: VbilModel>(
    model: &M,
    family: &ProductFamily,
    draws: usize,
    seed: u64,
) -> Result<Vec<ParamSummary>> {
    let report = model.report();
    let mut rng = seed_stream(seed, 0x5u64, 0x44);
    let m = family.uniform_dim();
    let mut sums = vec![0.0f64; report.coords.len()];
    let mut sums_sq = vec![0.0f64; report.coords.len()];
    let mut urow = vec![0.0f64; m];
    for _ in 0..draws {
        for u in urow.iter_mut() {
            *u = rand::Rng::random::<f64>(&mut rng)
                .clamp(f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0);
        }
        let theta = family.sample_theta(&urow)?;
        for (i, c) in report.coords.iter().enumerate() {
            let v = c.transform.value(theta[c.source_coord]);
            sums[i] += v;
            sums_sq[i] += v * v;
        }
    }
    let n = draws as f64;
    Ok(report
        .coords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mean = sums[i] / n;
            let var = (sums_sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
            ParamSummary { name: c.name.clone(), mean, sd: var.sqrt() }
        })
        .collect())
}

pub fn build_fit_report<M: VbilModel>(
    model: &M,
    trace: &FitTrace,
    meta: &OutputMeta,
    summary_draws: usize,
) -> Result<FitReport> {
    Ok(FitReport {
        meta: meta.clone(),
        model: model.name().to_string(),
        family: trace.final_family.specs(),
        lambda: trace.final_lambda().as_slice().to_vec(),
        parameters: report_summaries(model, &trace.final_family, summary_draws, meta.seed)?,
        log_marginal_likelihood: trace.final_log_marginal_likelihood,
        stop_reason: trace.stop_reason,
        iterations_run: trace.iterations.len(),
    })
}

pub fn write_fit_json(path: &Path, report: &FitReport) -> Result<()> {
    let body = serde_json::to_string_pretty(report)
        .map_err(|e| VbilError::Parse(format!("fit serialization failed: {e}")))?;
    write_atomic(path, &(body + "\n"))
}

pub fn read_fit_json(path: &Path) -> Result<FitReport> {
    let raw = std::fs::read_to_string(path)?;
    serde_json::from_str(&raw)
        .map_err(|e| VbilError::Parse(format!("{}: {e}", path.display())))
}

/// Fitted marginal densities on the reported scale:
/// `parameter,value,density` rows, 512 grid points per parameter.
///
/// Grids span the push-through sample range; densities are exact
/// change-of-variable transforms of the factor marginals.
pub fn write_density_csv<M: VbilModel>(
    path: &Path,
    model: &M,
    family: &ProductFamily,
    meta: &OutputMeta,
) -> Result<()> {
    const GRID: usize = 512;
    const RANGE_DRAWS: usize = 4096;
    let report = model.report();
    let mut rng = seed_stream(meta.seed, 0xD6, 0);
    let m = family.uniform_dim();
    let mut lo = vec![f64::INFINITY; report.coords.len()];
    let mut hi = vec![f64::NEG_INFINITY; report.coords.len()];
    let mut urow = vec![0.0f64; m];
    for _ in 0..RANGE_DRAWS {
        for u in urow.iter_mut() {
            *u = rand::Rng::random::<f64>(&mut rng)
                .clamp(f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0);
        }
        let theta = family.sample_theta(&urow)?;
        for (i, c) in report.coords.iter().enumerate() {
            let v = c.transform.value(theta[c.source_coord]);
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }

    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    writeln!(out, "parameter,value,density").unwrap();
    for (i, c) in report.coords.iter().enumerate() {
        let span = (hi[i] - lo[i]).max(1e-12);
        let (start, end) = (lo[i] - 0.05 * span, hi[i] + 0.05 * span);
        let (factor_idx, within) = family.factor_of_coord(c.source_coord);
        let factor = family.factor(factor_idx);
        for g in 0..GRID {
            let r = start + (end - start) * g as f64 / (GRID - 1) as f64;
            let x = c.transform.inverse(r);
            let density = if x.is_finite() {
                match factor.marginal_log_density(within, x) {
                    Ok(ld) => (ld.exp() / c.transform.derivative(x).abs()).max(0.0),
                    Err(_) => 0.0,
                }
            } else {
                0.0
            };
            writeln!(out, "{},{},{}", c.name, r, density).unwrap();
        }
    }
    write_atomic(path, &out)
}

// ---------------------------------------------------------------------------
// chains

/// Chain CSV: `iter,theta_1..theta_d,log_lik_hat,accepted`.
pub fn write_chain_csv(path: &Path, chain: &PmmhChain, meta: &OutputMeta) -> Result<()> {
    let d = chain.dim();
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    let mut header = "iter".to_string();
    for i in 1..=d {
        write!(header, ",theta_{i}").unwrap();
    }
    writeln!(out, "{header},log_lik_hat,accepted").unwrap();
    for (i, draw) in chain.draws.iter().enumerate() {
        write!(out, "{}", i + 1).unwrap();
        for v in draw.iter() {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{}", chain.stored_log_lik[i], u8::from(chain.accepted[i])).unwrap();
    }
    write_atomic(path, &out)
}

/// Reads a chain CSV back into draws (theta columns only).
pub fn read_chain_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
    let lines = read_data_lines(path)?;
    let header: Vec<&str> = lines[0].split(',').collect();
    let d = header.iter().filter(|h| h.starts_with("theta_")).count();
    if d == 0 {
        return Err(VbilError::Parse(format!(
            "{}: no theta columns in header",
            path.display()
        )));
    }
    lines[1..]
        .iter()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < d + 1 {
                return Err(VbilError::Parse(format!("{}: short row", path.display())));
            }
            let vals = fields[1..=d]
                .iter()
                .map(|f| parse_f64(f, path))
                .collect::<Result<Vec<f64>>>()?;
            Ok(DVector::from_column_slice(&vals))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// comparison table

/// One method's column in the comparison table.
#[derive(Debug, Clone)]
pub struct MethodColumn {
    pub method: String,
    pub summaries: Vec<ParamSummary>,
    /// Seconds reported in the trailing wall-clock row (from the timing
    /// sidecars; never measured inside the compare command).
    pub wall_clock_seconds: Option<f64>,
}

/// Writes the parameter-by-method table: one row per parameter with
/// `mean,sd` per method, plus a trailing `wall_clock_seconds` row.
pub fn write_compare_csv(path: &Path, columns: &[MethodColumn], meta: &OutputMeta) -> Result<()> {
    if columns.is_empty() {
        return Err(VbilError::Contract("comparison needs at least one method".to_string()));
    }
    let names: Vec<String> = columns[0].summaries.iter().map(|s| s.name.clone()).collect();
    for col in columns {
        let theirs: Vec<String> = col.summaries.iter().map(|s| s.name.clone()).collect();
        if theirs != names {
            return Err(VbilError::Contract(format!(
                "parameterizations differ between methods: {names:?} vs {theirs:?}"
            )));
        }
    }
    let mut out = String::new();
    writeln!(out, "{}", meta.comment_line()).unwrap();
    let mut header = "parameter".to_string();
    for col in columns {
        write!(header, ",{}_mean,{}_sd", col.method, col.method).unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for (i, name) in names.iter().enumerate() {
        write!(out, "{name}").unwrap();
        for col in columns {
            write!(out, ",{},{}", col.summaries[i].mean, col.summaries[i].sd).unwrap();
        }
        writeln!(out).unwrap();
    }
    write!(out, "wall_clock_seconds").unwrap();
    for col in columns {
        match col.wall_clock_seconds {
            Some(s) => write!(out, ",{s},").unwrap(),
            None => write!(out, ",,").unwrap(),
        }
    }
    writeln!(out).unwrap();
    write_atomic(path, &out)
}

// ---------------------------------------------------------------------------
// timing sidecars

/// Writes elapsed seconds to a plain-text sidecar (not CSV/JSON: timings are
/// inherently non-reproducible and live outside the deterministic outputs).
pub fn write_timing_txt(path: &Path, seconds: f64) -> Result<()> {
    write_atomic(path, &format!("{seconds}\n"))
}

pub fn read_timing_txt(path: &Path) -> Option<f64> {
    std::fs::read_to_string(path).ok()?.trim().parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::glmm_simulate_large;
    use crate::rng::seed_stream;

    #[test]
    fn panel_roundtrip() {
        let data =
            glmm_simulate_large(&[-1.5, 2.5], 1.5, 7, 5, &mut seed_stream(1, 0, 0)).unwrap();
        let dir = std::env::temp_dir().join("vbil_io_test_panel");
        let path = dir.join("panel.csv");
        let meta = OutputMeta::new(42, "abc123");
        write_panel_csv(&path, &data, &meta).unwrap();
        let back = read_panel_csv(&path).unwrap();
        assert_eq!(back, data);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with("# vbil v"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn series_and_scalar_roundtrip() {
        let dir = std::env::temp_dir().join("vbil_io_test_series");
        let meta = OutputMeta::new(7, "d00d00");
        let y = vec![0.25, -1.5, 3.75];
        let sp = dir.join("series.csv");
        write_series_csv(&sp, &y, &meta).unwrap();
        assert_eq!(read_series_csv(&sp).unwrap(), y);
        let cp = dir.join("obs.csv");
        write_scalar_csv(&cp, &y, &meta).unwrap();
        assert_eq!(read_scalar_csv(&cp).unwrap(), y);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = std::env::temp_dir().join("vbil_io_test_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("empty.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_series_csv(&p), Err(VbilError::Io(_) | VbilError::Parse(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn config_hash_is_stable() {
        assert_eq!(config_hash(b"hello"), config_hash(b"hello"));
        assert_ne!(config_hash(b"hello"), config_hash(b"world"));
        assert_eq!(config_hash(b"x").len(), 12);
    }
}
