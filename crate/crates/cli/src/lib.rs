//! Experiment runner for `embedqmc`: configs, parameter sweeps, seeded runs,
//! persisted results and figure-data reports.
//!
//! Exit codes: 0 success, 2 configuration or startup error, 3 when some runs
//! failed, 1 for anything else.

pub mod config;
pub mod error;
pub mod recipes;
pub mod report;
pub mod runner;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use embedqmc::analysis::CollapseOptions;

pub use config::ExperimentConfig;
pub use error::CliError;

use crate::config::{apply_override, CollapseConfig};
use crate::runner::{load_experiment, run_experiment, thread_pool, RunResult};

#[derive(Debug, Parser)]
#[command(name = "embedqmc", version, about = "Monte-Carlo experiments on embedded transverse-field Ising models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (L, K, realization, β, Γ, mode) combination of an experiment.
    Run {
        #[command(flatten)]
        source: Source,
        /// Skip the post-run report.
        #[arg(long)]
        no_report: bool,
    },
    /// Dense-oracle observables at every grid point small enough for it.
    Oracle {
        #[command(flatten)]
        source: Source,
    },
    /// Finite-size-scaling collapse of Binder curves.
    Collapse {
        /// Experiment directories to pool.
        #[arg(long = "input", value_name = "DIR", required_unless_present = "curves")]
        inputs: Vec<PathBuf>,
        /// TSV with columns L, gamma, g and optionally g_err.
        #[arg(long, conflicts_with = "inputs")]
        curves: Option<PathBuf>,
        /// Fixed window as `lo,hi`.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
        #[arg(long, default_value_t = 0.08)]
        spread: f64,
        #[arg(long, default_value_t = 4)]
        min_points: usize,
        /// Natural cubic interpolation instead of linear.
        #[arg(long)]
        cubic: bool,
        /// Local refinement below grid resolution.
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a recipe config, or list recipes when no name is given.
    Recipe {
        name: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Repeat an experiment at several slice counts and tabulate the results.
    EllScan {
        #[command(flatten)]
        source: Source,
        /// Comma-separated slice counts; defaults to analysis.ell_list.
        #[arg(long, value_delimiter = ',')]
        ells: Vec<usize>,
    },
    /// Rebuild the report of a finished experiment directory.
    Report {
        #[arg(long = "input", value_name = "DIR")]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Source {
    /// JSON config, or a manifest written by `run`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a named recipe instead of a file.
    #[arg(long, conflicts_with = "config")]
    pub recipe: Option<String>,
    /// Override a config field, e.g. `qmc.sweeps=4096`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output root directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number {b:?}"))?;
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err("window needs lo < hi".into())
    }
}

fn unknown_recipe(name: &str) -> CliError {
    CliError::Config(format!("unknown recipe {name:?}; available recipes:\n{}", recipes::listing()))
}

impl Source {
    /// Loads, patches and validates the config.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut doc = match (&self.config, &self.recipe) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => recipes::recipe_document(name).ok_or_else(|| unknown_recipe(name))?,
            (None, None) => return Err(CliError::Config("give --config PATH or --recipe NAME".into())),
        };
        if doc.get("manifest_version").is_some() {
            doc = doc.get("config").cloned().ok_or_else(|| CliError::Config("manifest has no config".into()))?;
        }
        for s in &self.set {
            apply_override(&mut doc, s)?;
        }
        let mut cfg = ExperimentConfig::from_value(doc)?;
        if let Some(seed) = self.seed {
            cfg.qmc.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.outputs.directory = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            error::EXIT_OK
        }
        Err(e) => {
            eprintln!("embedqmc: {e:#}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns its standard output.
pub fn execute(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run { source, no_report } => cmd_run(&source, no_report),
        Command::Oracle { source } => cmd_oracle(&source),
        Command::Collapse { inputs, curves, window, spread, min_points, cubic, refine, out } => {
            let opts = CollapseConfig { window, window_spread: spread, min_window_points: min_points, cubic, refine }.options();
            match curves {
                Some(path) => cmd_collapse_curves(&path, &opts, out),
                None => cmd_collapse_dirs(&inputs, &opts, out),
            }
        }
        Command::Recipe { name, set } => cmd_recipe(name.as_deref(), &set),
        Command::EllScan { source, ells } => cmd_ell_scan(&source, ells),
        Command::Report { input } => {
            let (manifest, results) = load_experiment(&input)?;
            let files = report::write_report(&input, &manifest.config, &results)?;
            Ok(files.iter().map(|f| format!("{}\n", f.display())).collect())
        }
    }
}

fn cmd_run(source: &Source, no_report: bool) -> Result<String, CliError> {
    let cfg = source.resolve()?;
    let pool = thread_pool(source.jobs)?;
    let outcome = run_experiment(&cfg, &pool)?;
    let mut text = format!(
        "{}: {} runs, {} new, {} reused, {} failed\n{}\n",
        cfg.experiment_id(),
        outcome.total(),
        outcome.new_runs,
        outcome.reused_runs,
        outcome.failures.len(),
        outcome.dir.display()
    );
    for (id, e) in &outcome.failures {
        let _ = writeln!(text, "failed {id}: {e}");
    }
    if !no_report {
        for f in report::write_report(&outcome.dir, &cfg, &outcome.results)? {
            let _ = writeln!(text, "{}", f.display());
        }
    }
    if !outcome.failures.is_empty() {
        print!("{text}");
    }
    outcome.into_result().map(|_| text)
}

fn cmd_oracle(source: &Source) -> Result<String, CliError> {
    let cfg = source.resolve()?;
    let pool = thread_pool(source.jobs)?;
    let plan = runner::plan(&cfg)?;
    let rows = runner::compute_oracle(&plan, &pool);
    let mut buf = Vec::new();
    runner::write_oracle_tsv(&mut buf, &rows)?;
    let dir = runner::experiment_dir(&cfg);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    runner::write_atomic(&dir.join("oracle.tsv"), &buf)?;
    let text = String::from_utf8(buf).expect("TSV is UTF-8");
    let failed: Vec<_> = rows.iter().filter_map(|r| r.error.as_ref()).collect();
    if failed.is_empty() {
        Ok(text)
    } else {
        print!("{text}");
        for e in &failed {
            eprintln!("oracle: {e}");
        }
        Err(CliError::Partial { failed: failed.len(), total: rows.len() })
    }
}

fn cmd_collapse_curves(path: &Path, opts: &CollapseOptions, out: Option<PathBuf>) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let curves = report::read_curves_tsv(&text)?;
    let rep = report::collapse_curves(&curves, opts)?;
    let out = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out)?;
    runner::write_atomic(&out.join("collapse.json"), &serde_json::to_vec_pretty(&rep)?)?;
    runner::write_atomic(&out.join("collapse_points.tsv"), report::collapsed_points_tsv(&curves, &rep).as_bytes())?;
    Ok(format!("{}\n", serde_json::to_string_pretty(&rep)?))
}

fn cmd_collapse_dirs(inputs: &[PathBuf], opts: &CollapseOptions, out: Option<PathBuf>) -> Result<String, CliError> {
    let mut results: Vec<RunResult> = Vec::new();
    for dir in inputs {
        results.extend(load_experiment(dir)?.1);
    }
    let (reports, fits) = report::collapse_groups(&results, opts);
    if reports.is_empty() {
        return Err(CliError::Other(anyhow::anyhow!("no group has Binder curves for two or more system sizes")));
    }
    let out = out.unwrap_or_else(|| inputs[0].join("report"));
    std::fs::create_dir_all(&out)?;
    for (tag, rep, curves) in &reports {
        runner::write_atomic(&out.join(format!("collapse_{tag}.json")), &serde_json::to_vec_pretty(rep)?)?;
        runner::write_atomic(
            &out.join(format!("collapse_{tag}_points.tsv")),
            report::collapsed_points_tsv(curves, rep).as_bytes(),
        )?;
    }
    for (tag, fit) in &fits {
        runner::write_atomic(&out.join(format!("critical_shift_{tag}.json")), &serde_json::to_vec_pretty(fit)?)?;
    }
    let reps: Vec<_> = reports.iter().map(|(_, r, _)| r).collect();
    Ok(format!("{}\n", serde_json::to_string_pretty(&reps)?))
}

fn cmd_recipe(name: Option<&str>, set: &[String]) -> Result<String, CliError> {
    let Some(name) = name else {
        return Ok(format!("{}\n", recipes::listing()));
    };
    let mut doc = recipes::recipe_document(name).ok_or_else(|| unknown_recipe(name))?;
    for s in set {
        apply_override(&mut doc, s)?;
    }
    let cfg = ExperimentConfig::from_value(doc)?;
    cfg.validate()?;
    Ok(format!("{}\n", serde_json::to_string_pretty(&cfg)?))
}

fn cmd_ell_scan(source: &Source, ells: Vec<usize>) -> Result<String, CliError> {
    let cfg = source.resolve()?;
    let mut ells = if ells.is_empty() { cfg.analysis.ell_list.clone() } else { ells };
    ells.sort_unstable();
    ells.dedup();
    if ells.len() < 2 {
        return Err(CliError::Config("ell-scan needs at least two distinct slice counts".into()));
    }
    let pool = thread_pool(source.jobs)?;
    let mut table = String::from(
        "ell\tL\tK\tmode\tbeta\tgamma\trealization\tP_L\tP_L_err\tH_diag\tH_diag_err\tabs_M_AFM\tabs_M_AFM_err\tbinder\tbinder_err\n",
    );
    let mut failed = 0;
    let mut total = 0;
    for &ell in &ells {
        let mut c = cfg.clone();
        c.qmc.ell = Some(ell);
        c.validate()?;
        let outcome = run_experiment(&c, &pool)?;
        failed += outcome.failures.len();
        total += outcome.total();
        for r in &outcome.results {
            let s = &r.summary;
            let f = |e: Option<embedqmc::Estimate>| e.map_or("NaN\tNaN".to_string(), |e| format!("{}\t{}", e.mean, e.stderr));
            let _ = writeln!(
                table,
                "{ell}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.side_length,
                r.k,
                r.mode,
                r.beta,
                r.gamma,
                r.realization,
                f(Some(s.logical_probability)),
                f(s.energy),
                f(s.abs_magnetization),
                f(s.binder)
            );
        }
    }
    let path = cfg.outputs.directory.join(format!("{}-ell-scan.tsv", cfg.name));
    runner::write_atomic(&path, table.as_bytes())?;
    if failed > 0 {
        print!("{table}");
        return Err(CliError::Partial { failed, total });
    }
    Ok(table)
}
