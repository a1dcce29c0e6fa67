//! Planning and execution of an experiment's runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use embedqmc::embedding::embed_uniform;
use embedqmc::oracle::exact_observables;
use embedqmc::qmc::{write_records_tsv, Mode, QmcRun, QmcRunConfig, RunSummary, RECORD_TSV_VERSION};
use embedqmc::seeding::{embedding_seed, run_seed};
use embedqmc::{BinningOptions, EmbeddedProblem, ModelParams, NativeProblem};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{format_k, ExperimentConfig, Format, Scheme};
use crate::error::CliError;

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// One QMC run of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub side_length: usize,
    pub k_index: usize,
    pub k: f64,
    pub realization: usize,
    pub beta_index: usize,
    pub gamma_index: usize,
    pub beta: f64,
    pub gamma: f64,
    pub mode: Mode,
    pub ell: usize,
    pub seed: u64,
    pub embedding_seed: Option<u64>,
}

impl RunSpec {
    fn embedding_key(&self) -> (usize, usize, usize) {
        (self.side_length, self.k_index, self.realization)
    }

    fn point_key(&self) -> PointKey {
        PointKey {
            side_length: self.side_length,
            k_index: self.k_index,
            realization: self.realization,
            beta_index: self.beta_index,
            gamma_index: self.gamma_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PointKey {
    side_length: usize,
    k_index: usize,
    realization: usize,
    beta_index: usize,
    gamma_index: usize,
}

/// Runs and embeddings of a validated config.
pub struct Plan {
    pub config: ExperimentConfig,
    pub experiment_id: String,
    pub runs: Vec<RunSpec>,
    embeddings: HashMap<(usize, usize, usize), EmbeddedProblem>,
}

impl Plan {
    pub fn embedding(&self, spec: &RunSpec) -> &EmbeddedProblem {
        &self.embeddings[&spec.embedding_key()]
    }
}

/// Validates the config and derives every run and embedding.
///
/// Runs are ordered `L`, `K`, realization, `β`, `Γ`, mode. The Γ index fed
/// to the run seed is the position in the flattened `(β, Γ)` grid, β-major,
/// so a single-temperature experiment uses the plain Γ index.
pub fn plan(config: &ExperimentConfig) -> Result<Plan, CliError> {
    config.validate()?;
    let cfg_err = |e: embedqmc::Error| CliError::Config(e.to_string());
    let master = config.qmc.master_seed;
    let emb = &config.embedding;
    let mut embeddings = HashMap::new();
    let mut runs = Vec::new();
    for &l in &config.problem.side_lengths {
        let native = NativeProblem::square_lattice_afm(l).map_err(cfg_err)?;
        for (ki, &k) in emb.k.iter().enumerate() {
            let ell = config.ell_for(k)?;
            for r in 0..emb.realizations {
                let (embedded, seed) = if (k - 1.0).abs() < 1e-9 {
                    (EmbeddedProblem::trivial(&native).map_err(cfg_err)?, None)
                } else {
                    match emb.scheme {
                        Scheme::Uniform => (embed_uniform(&native, k, emb.j_f).map_err(cfg_err)?, None),
                        Scheme::Random => {
                            let seed = match &emb.realization_seeds {
                                Some(s) => s[r],
                                None => embedding_seed(master, l, k, r),
                            };
                            (EmbeddedProblem::random_realization(&native, k, emb.j_f, seed).map_err(cfg_err)?, Some(seed))
                        }
                    }
                };
                embeddings.insert((l, ki, r), embedded);
                for (bi, &beta) in config.model.beta.iter().enumerate() {
                    for (gi, &gamma) in config.model.gamma_list.iter().enumerate() {
                        let point = bi * config.model.gamma_list.len() + gi;
                        for &mode in &config.qmc.mode {
                            runs.push(RunSpec {
                                run_id: format!("L{l}_K{}_r{r}_b{bi}_g{gi}_{mode}", format_k(k)),
                                side_length: l,
                                k_index: ki,
                                k,
                                realization: r,
                                beta_index: bi,
                                gamma_index: gi,
                                beta,
                                gamma,
                                mode,
                                ell,
                                seed: run_seed(master, l, k, point, r, mode.as_str()),
                                embedding_seed: seed,
                            });
                        }
                    }
                }
            }
        }
    }
    let mut ids: Vec<&str> = runs.iter().map(|r| r.run_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Config("duplicate entries in the parameter lists".into()));
    }
    Ok(Plan { config: config.clone(), experiment_id: config.experiment_id(), runs, embeddings })
}

/// Dense-oracle values of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValues {
    pub logical_probability: f64,
    pub energy: f64,
    pub abs_magnetization: f64,
    pub m2: f64,
    pub m4: f64,
    pub binder: f64,
}

/// Contents of `runs/<run-id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub run_id: String,
    #[serde(rename = "L")]
    pub side_length: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub realization: usize,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub mode: Mode,
    pub ell: usize,
    pub sweeps: usize,
    pub thermalization: usize,
    pub measure_every: usize,
    pub seed: u64,
    pub embedding_seed: Option<u64>,
    pub physical_qubits: usize,
    pub summary: RunSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleValues>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub status: RunStatus,
    pub seed: u64,
    pub embedding_seed: Option<u64>,
    pub ell: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub experiment_id: String,
    pub config_hash: String,
    pub code_version: String,
    pub record_tsv_version: u32,
    pub config: ExperimentConfig,
    pub runs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub experiment_id: String,
    pub runs: Vec<RunResult>,
}

pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub results: Vec<RunResult>,
    pub new_runs: usize,
    pub reused_runs: usize,
    pub failures: Vec<(String, String)>,
}

impl ExperimentOutcome {
    pub fn total(&self) -> usize {
        self.results.len() + self.failures.len()
    }

    pub fn into_result(self) -> Result<Self, CliError> {
        if self.failures.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Partial { failed: self.failures.len(), total: self.total() })
        }
    }
}

/// Writes `bytes` next to `path` and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if jobs == Some(0) {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(e.into()))
}

pub fn experiment_dir(config: &ExperimentConfig) -> PathBuf {
    config.outputs.directory.join(config.experiment_id())
}

fn reusable(path: &Path, spec: &RunSpec, config: &ExperimentConfig) -> Option<RunResult> {
    let text = fs::read_to_string(path).ok()?;
    let r: RunResult = serde_json::from_str(&text).ok()?;
    (r.schema_version == RUN_SCHEMA_VERSION
        && r.seed == spec.seed
        && r.ell == spec.ell
        && r.sweeps == config.qmc.sweeps
        && r.mode == spec.mode)
        .then_some(r)
}

fn execute(plan: &Plan, spec: &RunSpec, runs_dir: &Path) -> anyhow::Result<RunResult> {
    let cfg = &plan.config;
    let embedded = plan.embedding(spec);
    let params = ModelParams::with_delta(spec.gamma, cfg.model.delta, spec.beta)?;
    let qmc_cfg = QmcRunConfig {
        mode: spec.mode,
        sweeps: cfg.qmc.sweeps,
        thermalization_sweeps: cfg.qmc.thermalization,
        slices: spec.ell,
        seed: spec.seed,
        measure_every: cfg.qmc.measure_every,
        ramp_stages: cfg.qmc.ramp_stages,
    };
    let start = std::time::Instant::now();
    let mut run = QmcRun::start(embedded, params, qmc_cfg)?;
    let chunk = (cfg.qmc.sweeps as u64 / 10).max(1);
    while !run.is_finished() {
        run.advance(chunk)?;
        info!("{}: {}/{} sweeps, {:.1}s", spec.run_id, run.sweeps_done(), cfg.qmc.sweeps, start.elapsed().as_secs_f64());
    }
    let out = run.finish()?;
    let opts = BinningOptions { threshold: cfg.qmc.binning_threshold, ..BinningOptions::default() };
    let summary = out.summary(opts)?;
    if cfg.wants(Format::Tsv) {
        let mut buf = Vec::new();
        write_records_tsv(BufWriter::new(&mut buf), &out.records)?;
        write_atomic(&runs_dir.join(format!("{}.tsv", spec.run_id)), &buf)?;
    }
    let result = RunResult {
        schema_version: RUN_SCHEMA_VERSION,
        run_id: spec.run_id.clone(),
        side_length: spec.side_length,
        k: spec.k,
        realization: spec.realization,
        beta: spec.beta,
        gamma: spec.gamma,
        delta: cfg.model.delta,
        mode: spec.mode,
        ell: spec.ell,
        sweeps: cfg.qmc.sweeps,
        thermalization: cfg.qmc.thermalization,
        measure_every: cfg.qmc.measure_every,
        seed: spec.seed,
        embedding_seed: spec.embedding_seed,
        physical_qubits: embedded.num_physical(),
        summary,
        oracle: None,
    };
    write_atomic(&runs_dir.join(format!("{}.json", spec.run_id)), &serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

fn oracle_values(plan: &Plan, spec: &RunSpec) -> anyhow::Result<OracleValues> {
    let params = ModelParams::with_delta(spec.gamma, plan.config.model.delta, spec.beta)?;
    let x = exact_observables(plan.embedding(spec), &params, plan.config.analysis.oracle_cap)?;
    Ok(OracleValues {
        logical_probability: x.logical_probability,
        energy: x.energy,
        abs_magnetization: x.abs_magnetization,
        m2: x.m2,
        m4: x.m4,
        binder: x.binder(),
    })
}

/// One oracle row per distinct grid point, in plan order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    #[serde(rename = "L")]
    pub side_length: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub realization: usize,
    pub beta: f64,
    pub gamma: f64,
    pub values: Option<OracleValues>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn oracle_rows(plan: &Plan, pool: &rayon::ThreadPool) -> Vec<(PointKey, OracleRow)> {
    let mut points: BTreeMap<PointKey, &RunSpec> = BTreeMap::new();
    for spec in &plan.runs {
        points.entry(spec.point_key()).or_insert(spec);
    }
    let specs: Vec<(PointKey, &RunSpec)> = points.into_iter().collect();
    pool.install(|| {
        specs
            .par_iter()
            .map(|&(key, spec)| {
                let v = oracle_values(plan, spec);
                let row = OracleRow {
                    side_length: spec.side_length,
                    k: spec.k,
                    realization: spec.realization,
                    beta: spec.beta,
                    gamma: spec.gamma,
                    error: v.as_ref().err().map(|e| e.to_string()),
                    values: v.ok(),
                };
                (key, row)
            })
            .collect()
    })
}

/// Evaluates the dense oracle at every grid point of the plan.
pub fn compute_oracle(plan: &Plan, pool: &rayon::ThreadPool) -> Vec<OracleRow> {
    oracle_rows(plan, pool).into_iter().map(|(_, r)| r).collect()
}

pub fn write_oracle_tsv<W: Write>(mut w: W, rows: &[OracleRow]) -> std::io::Result<()> {
    writeln!(w, "L\tK\trealization\tbeta\tgamma\tP_L\tH_diag\tabs_M_AFM\tM2_AFM\tM4_AFM\tbinder")?;
    for r in rows {
        let v = r.values;
        let f = |g: fn(&OracleValues) -> f64| v.as_ref().map_or(f64::NAN, g);
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.side_length,
            r.k,
            r.realization,
            r.beta,
            r.gamma,
            f(|v| v.logical_probability),
            f(|v| v.energy),
            f(|v| v.abs_magnetization),
            f(|v| v.m2),
            f(|v| v.m4),
            f(|v| v.binder)
        )?;
    }
    Ok(())
}

fn create_dirs(dir: &Path) -> Result<PathBuf, CliError> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", runs.display())))?;
    Ok(runs)
}

/// Runs every incomplete run of `config`, then writes `manifest.json`,
/// `summary.json` and `summary.tsv`.
pub fn run_experiment(config: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<ExperimentOutcome, CliError> {
    let plan = plan(config)?;
    let dir = experiment_dir(config);
    let runs_dir = create_dirs(&dir)?;

    let mut done: HashMap<usize, RunResult> = HashMap::new();
    let mut pending = Vec::new();
    for (i, spec) in plan.runs.iter().enumerate() {
        match reusable(&runs_dir.join(format!("{}.json", spec.run_id)), spec, config) {
            Some(r) => {
                done.insert(i, r);
            }
            None => pending.push(i),
        }
    }
    let reused_runs = done.len();
    info!("{}: {} runs, {} already complete", plan.experiment_id, plan.runs.len(), reused_runs);

    let outcomes: Vec<(usize, anyhow::Result<RunResult>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let spec = &plan.runs[i];
                let r = execute(&plan, spec, &runs_dir).with_context(|| format!("run {}", spec.run_id));
                if let Err(e) = &r {
                    warn!("{e:#}");
                }
                (i, r)
            })
            .collect()
    });
    let new_runs = outcomes.iter().filter(|(_, r)| r.is_ok()).count();
    let mut errors: HashMap<usize, String> = HashMap::new();
    for (i, r) in outcomes {
        match r {
            Ok(res) => {
                done.insert(i, res);
            }
            Err(e) => {
                errors.insert(i, format!("{e:#}"));
            }
        }
    }

    let oracle: HashMap<PointKey, OracleValues> = if config.analysis.oracle {
        let rows = oracle_rows(&plan, pool);
        let mut buf = Vec::new();
        write_oracle_tsv(&mut buf, &rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
        write_atomic(&dir.join("oracle.tsv"), &buf)?;
        rows.into_iter().filter_map(|(k, row)| row.values.map(|v| (k, v))).collect()
    } else {
        HashMap::new()
    };

    let mut results = Vec::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (i, spec) in plan.runs.iter().enumerate() {
        let mut entry = ManifestEntry {
            run_id: spec.run_id.clone(),
            status: RunStatus::Completed,
            seed: spec.seed,
            embedding_seed: spec.embedding_seed,
            ell: spec.ell,
            error: None,
        };
        if let Some(mut r) = done.remove(&i) {
            r.oracle = oracle.get(&spec.point_key()).copied();
            results.push(r);
        } else {
            let e = errors.remove(&i).unwrap_or_else(|| "run did not complete".into());
            entry.status = RunStatus::Failed;
            entry.error = Some(e.clone());
            failures.push((spec.run_id.clone(), e));
        }
        entries.push(entry);
    }

    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        experiment_id: plan.experiment_id.clone(),
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        record_tsv_version: RECORD_TSV_VERSION,
        config: config.clone(),
        runs: entries,
    };
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    let summary = SummaryDocument { experiment_id: plan.experiment_id.clone(), runs: results };
    if config.wants(Format::Json) {
        write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    }
    if config.wants(Format::Tsv) {
        let mut buf = Vec::new();
        write_summary_tsv(&mut buf, &summary.runs)?;
        write_atomic(&dir.join("summary.tsv"), &buf)?;
    }
    info!("{}: {new_runs} new, {reused_runs} reused, {} failed", plan.experiment_id, failures.len());
    Ok(ExperimentOutcome { dir, results: summary.runs, new_runs, reused_runs, failures })
}

/// Reads the manifest and per-run results of an experiment directory.
pub fn load_experiment(dir: &Path) -> Result<(Manifest, Vec<RunResult>), CliError> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("{} has no readable manifest.json: {e}", dir.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest in {}: {e}", dir.display())))?;
    let mut results = Vec::new();
    for entry in manifest.runs.iter().filter(|e| e.status == RunStatus::Completed) {
        let path = dir.join("runs").join(format!("{}.json", entry.run_id));
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        results.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    if let Ok(text) = fs::read_to_string(dir.join("summary.json")) {
        let doc: SummaryDocument = serde_json::from_str(&text)?;
        let by_id: HashMap<&str, &RunResult> = doc.runs.iter().map(|r| (r.run_id.as_str(), r)).collect();
        for r in &mut results {
            let r: &mut RunResult = r;
            if let Some(s) = by_id.get(r.run_id.as_str()) {
                r.oracle = s.oracle;
            }
        }
    }
    Ok((manifest, results))
}

fn est(e: Option<embedqmc::Estimate>) -> (f64, f64) {
    e.map_or((f64::NAN, f64::NAN), |e| (e.mean, e.stderr))
}

/// One row per run with estimates, errors and oracle values.
pub fn write_summary_tsv<W: Write>(mut w: W, runs: &[RunResult]) -> std::io::Result<()> {
    writeln!(
        w,
        "run_id\tL\tK\trealization\tbeta\tgamma\tmode\tell\tsweeps\tP_L\tP_L_err\tH_diag\tH_diag_err\tabs_M_AFM\tabs_M_AFM_err\tM2_AFM\tM2_AFM_err\tM4_AFM\tM4_AFM_err\tbinder\tbinder_err\tlogical_samples\tacceptance_rate\toracle_P_L\toracle_H_diag\toracle_abs_M_AFM\toracle_binder"
    )?;
    for r in runs {
        let s = &r.summary;
        let (e, ee) = est(s.energy);
        let (m, me) = est(s.abs_magnetization);
        let (m2, m2e) = est(s.m2);
        let (m4, m4e) = est(s.m4);
        let (g, ge) = est(s.binder);
        let o = |f: fn(&OracleValues) -> f64| r.oracle.as_ref().map_or(f64::NAN, f);
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.run_id,
            r.side_length,
            r.k,
            r.realization,
            r.beta,
            r.gamma,
            r.mode,
            r.ell,
            r.sweeps,
            s.logical_probability.mean,
            s.logical_probability.stderr,
            e,
            ee,
            m,
            me,
            m2,
            m2e,
            m4,
            m4e,
            g,
            ge,
            s.logical_samples,
            s.acceptance_rate,
            o(|v| v.logical_probability),
            o(|v| v.energy),
            o(|v| v.abs_magnetization),
            o(|v| v.binder)
        )?;
    }
    Ok(())
}
