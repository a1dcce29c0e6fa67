//! Post-processing of completed runs into tables and fit reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use embedqmc::analysis::{
    bootstrap_ci, collapsed_points, critical_shift_fit, data_collapse, ecdf, normal_cdf_fit, realization_average,
    BinderCurve, CollapseOptions, CollapseResult, LinearFit,
};
use embedqmc::observables::{binning_errors, histogram};
use embedqmc::oracle::{fit_mean_field_h, MeanFieldFitOptions};
use embedqmc::qmc::{read_records_tsv, Mode};
use embedqmc::seeding::derive_seed;
use embedqmc::{BinningOptions, Estimate};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{format_k, ExperimentConfig};
use crate::error::CliError;
use crate::runner::{write_atomic, RunResult};

pub const REPORT_VERSION: u32 = 1;

const BOOTSTRAP_TAG: u64 = 0x424f_4f54;

/// Sorts floats used as map keys.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn mode_rank(m: Mode) -> u8 {
    match m {
        Mode::Standard => 0,
        Mode::Rejection => 1,
        Mode::Lc => 2,
    }
}

/// `(L, K, mode, β, Γ)`
type PointId = (usize, Key, u8, Key, Key);

fn point_id(r: &RunResult) -> PointId {
    (r.side_length, Key(r.k), mode_rank(r.mode), Key(r.beta), Key(r.gamma))
}

/// Collapse and fit results as written to `collapse_*.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub report_version: u32,
    pub gamma_c: f64,
    pub nu: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub inputs_hash: String,
    #[serde(rename = "L")]
    pub side_lengths: Vec<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalShiftReport {
    pub report_version: u32,
    pub mode: Mode,
    pub beta: f64,
    /// `(K, Γ_c)`
    pub points: Vec<(f64, f64)>,
    pub fit: LinearFit,
}

/// Mean and error over realizations: the run's own error for one
/// realization, the standard error of the mean otherwise.
pub fn combine(values: &[Estimate]) -> Option<Estimate> {
    match values.len() {
        0 => None,
        1 => Some(values[0]),
        n => {
            let n = n as f64;
            let mean = values.iter().map(|e| e.mean).sum::<f64>() / n;
            let var = values.iter().map(|e| (e.mean - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Some(Estimate { mean, stderr: (var / n).sqrt() })
        }
    }
}

fn fmt_est(e: Option<Estimate>) -> String {
    match e {
        Some(e) => format!("{}\t{}", e.mean, e.stderr),
        None => "NaN\tNaN".into(),
    }
}

fn group_points(results: &[RunResult]) -> BTreeMap<PointId, Vec<&RunResult>> {
    let mut groups: BTreeMap<PointId, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(point_id(r)).or_default().push(r);
    }
    for v in groups.values_mut() {
        v.sort_by_key(|r| r.realization);
    }
    groups
}

/// Realization-aggregated observables, one row per `(L, K, mode, β, Γ)`.
pub fn observables_table(results: &[RunResult]) -> String {
    let mut out = String::from(
        "L\tK\tmode\tbeta\tgamma\trealizations\tP_L\tP_L_err\tH_diag\tH_diag_err\tabs_M_AFM\tabs_M_AFM_err\tbinder\tbinder_err\n",
    );
    for (_, runs) in group_points(results) {
        let r0 = runs[0];
        let all = |f: fn(&RunResult) -> Option<Estimate>| -> Option<Estimate> {
            let v: Option<Vec<Estimate>> = runs.iter().map(|r| f(r)).collect();
            v.and_then(|v| combine(&v))
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r0.side_length,
            r0.k,
            r0.mode,
            r0.beta,
            r0.gamma,
            runs.len(),
            fmt_est(all(|r| Some(r.summary.logical_probability))),
            fmt_est(all(|r| r.summary.energy)),
            fmt_est(all(|r| r.summary.abs_magnetization)),
            fmt_est(all(|r| r.summary.binder)),
        );
    }
    out
}

/// Binder curves per `L` for one `(K, mode, β)`, realization-averaged when
/// there are several realizations.
fn binder_curves(results: &[&RunResult]) -> anyhow::Result<Vec<BinderCurve>> {
    let mut by_l: BTreeMap<usize, BTreeMap<usize, Vec<(f64, f64, f64)>>> = BTreeMap::new();
    for r in results {
        let g = r.summary.binder.with_context(|| format!("run {} has no Binder estimate", r.run_id))?;
        by_l.entry(r.side_length).or_default().entry(r.realization).or_default().push((r.gamma, g.mean, g.stderr));
    }
    let mut curves = Vec::new();
    for (l, reals) in by_l {
        let per: Vec<BinderCurve> = reals
            .into_values()
            .map(|mut pts| {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                BinderCurve::new(l, pts)
            })
            .collect::<embedqmc::Result<_>>()?;
        curves.push(if per.len() == 1 { per.into_iter().next().expect("one curve") } else { realization_average(&per)? });
    }
    Ok(curves)
}

fn curves_hash(curves: &[BinderCurve]) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(curves).expect("curves serialize")))
}

/// Runs the collapse on `curves` and packages the result.
pub fn collapse_curves(curves: &[BinderCurve], opts: &CollapseOptions) -> Result<CollapseReport, CliError> {
    let res = data_collapse(curves, opts).map_err(|e| CliError::Other(e.into()))?;
    Ok(CollapseReport {
        report_version: REPORT_VERSION,
        gamma_c: res.gamma_c,
        nu: res.nu,
        residual: res.residual,
        window: res.window,
        inputs_hash: curves_hash(curves),
        side_lengths: curves.iter().map(|c| c.side_length).collect(),
        k: None,
        mode: None,
        beta: None,
    })
}

/// `x = L^{1/ν}(Γ − Γ_c)`, `g`, `L` for every point inside the window.
pub fn collapsed_points_tsv(curves: &[BinderCurve], report: &CollapseReport) -> String {
    let res = CollapseResult { gamma_c: report.gamma_c, nu: report.nu, residual: report.residual, window: report.window };
    let mut out = String::from("x\tg\tL\n");
    for (x, g, l) in collapsed_points(curves, &res) {
        let _ = writeln!(out, "{x}\t{g}\t{l}");
    }
    out
}

/// Reads `L gamma g [g_err]` rows into one curve per `L`.
pub fn read_curves_tsv(text: &str) -> Result<Vec<BinderCurve>, CliError> {
    let bad = |m: String| CliError::Config(m);
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("curve file is empty".into()))?.split('\t').collect();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (cl, cg, cv) = match (col("L"), col("gamma"), col("g")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("curve file needs columns L, gamma, g".into())),
    };
    let ce = col("g_err");
    let mut by_l: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| -> Result<&str, CliError> {
            f.get(c).copied().ok_or_else(|| bad(format!("row {}: missing column", i + 1)))
        };
        let num = |c: usize| -> Result<f64, CliError> {
            get(c)?.trim().parse().map_err(|_| bad(format!("row {}: bad number", i + 1)))
        };
        let l: usize = get(cl)?.trim().parse().map_err(|_| bad(format!("row {}: bad L", i + 1)))?;
        let err = match ce {
            Some(c) => num(c)?,
            None => 0.0,
        };
        by_l.entry(l).or_default().push((num(cg)?, num(cv)?, err));
    }
    by_l.into_iter()
        .map(|(l, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            BinderCurve::new(l, pts).map_err(|e| bad(e.to_string()))
        })
        .collect()
}

pub fn write_curves_tsv(curves: &[BinderCurve]) -> String {
    let mut out = String::from("L\tgamma\tg\tg_err\n");
    for c in curves {
        for &(x, g, e) in &c.points {
            let _ = writeln!(out, "{}\t{x}\t{g}\t{e}", c.side_length);
        }
    }
    out
}

/// Collapses every `(K, mode, β)` group with at least two system sizes and
/// fits `Γ_c(K)` where several `K` were collapsed.
pub fn collapse_groups(
    results: &[RunResult],
    opts: &CollapseOptions,
) -> (Vec<(String, CollapseReport, Vec<BinderCurve>)>, Vec<(String, CriticalShiftReport)>) {
    let mut groups: BTreeMap<(u8, Key, Key), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry((mode_rank(r.mode), Key(r.beta), Key(r.k))).or_default().push(r);
    }
    let betas: Vec<Key> = {
        let mut b: Vec<Key> = results.iter().map(|r| Key(r.beta)).collect();
        b.sort();
        b.dedup();
        b
    };
    let mut reports = Vec::new();
    let mut shifts: BTreeMap<(u8, Key), (Mode, Vec<(f64, f64)>)> = BTreeMap::new();
    for ((rank, beta, k), runs) in groups {
        let mode = runs[0].mode;
        let bi = betas.iter().position(|b| *b == beta).unwrap_or(0);
        let tag = format!("K{}_{mode}_b{bi}", format_k(k.0));
        let curves = match binder_curves(&runs) {
            Ok(c) if c.len() >= 2 => c,
            Ok(_) => {
                info!("collapse {tag}: skipped, needs at least two system sizes");
                continue;
            }
            Err(e) => {
                warn!("collapse {tag}: {e:#}");
                continue;
            }
        };
        match collapse_curves(&curves, opts) {
            Ok(mut rep) => {
                rep.k = Some(k.0);
                rep.mode = Some(mode);
                rep.beta = Some(beta.0);
                shifts.entry((rank, beta)).or_insert_with(|| (mode, Vec::new())).1.push((k.0, rep.gamma_c));
                reports.push((tag, rep, curves));
            }
            Err(e) => warn!("collapse {tag}: {e}"),
        }
    }
    let mut fits = Vec::new();
    for ((_, beta), (mode, points)) in shifts {
        if points.len() < 2 {
            continue;
        }
        let bi = betas.iter().position(|b| *b == beta).unwrap_or(0);
        match critical_shift_fit(&points) {
            Ok(fit) => fits.push((
                format!("{mode}_b{bi}"),
                CriticalShiftReport { report_version: REPORT_VERSION, mode, beta: beta.0, points, fit },
            )),
            Err(e) => warn!("critical shift fit {mode} b{bi}: {e}"),
        }
    }
    (reports, fits)
}

/// Per-measurement `M_AFM` samples of a run's record file.
fn magnetization_samples(path: &Path) -> anyhow::Result<Vec<f64>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_records_tsv(std::io::BufReader::new(file))?;
    Ok(records.iter().filter(|r| r.logical_count > 0).map(|r| r.sum_m / f64::from(r.logical_count)).collect())
}

fn histogram_files(
    run: &RunResult,
    runs_dir: &Path,
    bins: usize,
    lo: f64,
    hi: f64,
    opts: BinningOptions,
) -> anyhow::Result<(String, String)> {
    let samples = magnetization_samples(&runs_dir.join(format!("{}.tsv", run.run_id)))?;
    let h = histogram(&samples, bins, lo, hi, opts)?;
    let mut hist = String::from("center\tprobability\terror\n");
    for i in 0..bins {
        let _ = writeln!(hist, "{}\t{}\t{}", h.centers[i], h.probabilities[i], h.errors[i]);
    }
    let peak = (0..bins).max_by(|&a, &b| h.probabilities[a].total_cmp(&h.probabilities[b])).expect("bins >= 2");
    let width = (hi - lo) / bins as f64;
    let indicator: Vec<f64> = samples
        .iter()
        .map(|&x| {
            let b = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            if b == peak { 1.0 } else { 0.0 }
        })
        .collect();
    let mut binning = format!("# peak bin center {}\nlevel\tbin_size\tstderr\n", h.centers[peak]);
    if let Ok(b) = binning_errors(&indicator, opts) {
        for l in &b.levels {
            let _ = writeln!(binning, "{}\t{}\t{}", l.level, l.bin_size, l.stderr);
        }
    }
    Ok((hist, binning))
}

/// Binder distribution over realizations for every point with at least
/// three of them.
fn binder_distribution(results: &[RunResult], resamples: usize, master: u64) -> (String, String) {
    let mut table = String::from("L\tK\tmode\tbeta\tgamma\tsamples\tmu\tsigma\tsigma_ci_lo\tsigma_ci_hi\tresidual\n");
    let mut cdf = String::from("L\tK\tmode\tbeta\tgamma\tx\tF\n");
    for (_, runs) in group_points(results) {
        let samples: Vec<f64> = runs.iter().filter_map(|r| r.summary.binder.map(|g| g.mean)).collect();
        let r0 = runs[0];
        if samples.len() < 3 {
            continue;
        }
        let (Ok(e), Ok(fit)) = (ecdf(&samples), normal_cdf_fit(&samples)) else {
            warn!("Binder distribution at L={} K={} Γ={}: fit failed", r0.side_length, r0.k, r0.gamma);
            continue;
        };
        let seed = derive_seed(master, &[BOOTSTRAP_TAG, r0.side_length as u64, r0.k.to_bits(), r0.beta.to_bits(), r0.gamma.to_bits()]);
        let sigma = |s: &[f64]| normal_cdf_fit(s).map_or(0.0, |f| f.sigma);
        let (lo, hi) = bootstrap_ci(&samples, sigma, 0.95, resamples, seed).unwrap_or((f64::NAN, f64::NAN));
        let prefix = format!("{}\t{}\t{}\t{}\t{}", r0.side_length, r0.k, r0.mode, r0.beta, r0.gamma);
        let _ = writeln!(table, "{prefix}\t{}\t{}\t{}\t{lo}\t{hi}\t{}", samples.len(), fit.mu, fit.sigma, fit.residual);
        for &x in e.samples() {
            let _ = writeln!(cdf, "{prefix}\t{x}\t{}", e.eval(x));
        }
    }
    (table, cdf)
}

/// Mean-field `h` fits of rejection-mode `P_L(Γ)` per `(L, K, β)`.
fn mean_field_fits(results: &[RunResult], j_f: f64) -> String {
    let mut out = String::from("L\tK\tbeta\th\tresidual\tpoints\n");
    let mut groups: BTreeMap<(usize, Key, Key), BTreeMap<Key, Vec<Estimate>>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.mode == Mode::Rejection) {
        groups
            .entry((r.side_length, Key(r.k), Key(r.beta)))
            .or_default()
            .entry(Key(r.gamma))
            .or_default()
            .push(r.summary.logical_probability);
    }
    for ((l, k, beta), by_gamma) in groups {
        let observed: Vec<(f64, f64)> =
            by_gamma.into_iter().filter_map(|(g, v)| combine(&v).map(|e| (g.0, e.mean))).collect();
        match fit_mean_field_h(&observed, l * l, k.0, j_f, beta.0, MeanFieldFitOptions::default()) {
            Ok(fit) => {
                let _ = writeln!(out, "{l}\t{}\t{}\t{}\t{}\t{}", k.0, beta.0, fit.h, fit.residual, observed.len());
            }
            Err(e) => warn!("mean-field fit L={l} K={} β={}: {e}", k.0, beta.0),
        }
    }
    out
}

/// Writes every configured analysis of an experiment into `<dir>/report/`
/// and returns the files written.
pub fn write_report(dir: &Path, config: &ExperimentConfig, results: &[RunResult]) -> Result<Vec<PathBuf>, CliError> {
    let out_dir = dir.join("report");
    fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<(), CliError> {
        let p = out_dir.join(name);
        write_atomic(&p, bytes)?;
        files.push(p);
        Ok(())
    };
    put("observables.tsv".into(), observables_table(results).as_bytes())?;
    let a = &config.analysis;
    if let Some(c) = &a.collapse {
        let (reports, fits) = collapse_groups(results, &c.options());
        for (tag, rep, curves) in reports {
            put(format!("collapse_{tag}.json"), &serde_json::to_vec_pretty(&rep)?)?;
            put(format!("collapse_{tag}_points.tsv"), collapsed_points_tsv(&curves, &rep).as_bytes())?;
            put(format!("binder_curves_{tag}.tsv"), write_curves_tsv(&curves).as_bytes())?;
        }
        for (tag, fit) in fits {
            put(format!("critical_shift_{tag}.json"), &serde_json::to_vec_pretty(&fit)?)?;
        }
    }
    if let Some(h) = &a.histogram {
        let opts = BinningOptions { threshold: config.qmc.binning_threshold, ..BinningOptions::default() };
        for r in results {
            match histogram_files(r, &dir.join("runs"), h.bins, h.lo, h.hi, opts) {
                Ok((hist, binning)) => {
                    put(format!("histogram_{}.tsv", r.run_id), hist.as_bytes())?;
                    put(format!("peak_binning_{}.tsv", r.run_id), binning.as_bytes())?;
                }
                Err(e) => warn!("histogram {}: {e:#}", r.run_id),
            }
        }
    }
    if a.binder_distribution {
        let (table, cdf) = binder_distribution(results, a.bootstrap_resamples, config.qmc.master_seed);
        put("binder_distribution.tsv".into(), table.as_bytes())?;
        put("binder_ecdf.tsv".into(), cdf.as_bytes())?;
    }
    if a.mean_field_fit {
        put("mean_field_fit.tsv".into(), mean_field_fits(results, config.embedding.j_f).as_bytes())?;
    }
    Ok(files)
}
