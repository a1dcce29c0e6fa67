use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use embedqmc::oracle::exact_observables;
use embedqmc::qmc::read_records_tsv;
use embedqmc::seeding::{embedding_seed, run_seed, DEFAULT_MASTER_SEED};
use embedqmc::{EmbeddedProblem, ModelParams, NativeProblem};
use embedqmc_cli::runner::{Manifest, RunStatus};
use embedqmc_cli::run_cli;
use serde_json::{json, Value};

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn tiny(out: &Path) -> Value {
    json!({
        "name": "tiny",
        "problem": {"L": 2},
        "embedding": {"scheme": "random", "K": 2, "realizations": 3},
        "model": {"gamma_list": [0.8, 2.4], "beta": 1.0},
        "qmc": {"mode": "lc", "sweeps": 128, "thermalization": 50, "ell": 8},
        "outputs": {"directory": out}
    })
}

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["embedqmc"];
    v.extend_from_slice(args);
    run_cli(v)
}

fn only_subdir(dir: &Path) -> PathBuf {
    let mut d: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(d.len(), 1, "{d:?}");
    d.pop().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn mtimes(dir: &Path) -> Vec<(PathBuf, std::time::SystemTime)> {
    let mut v: Vec<_> = fs::read_dir(dir.join("runs"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.path(), e.metadata().unwrap().modified().unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn two_gammas_by_three_realizations_give_six_records_and_reruns_are_free() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &tiny(&out));
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap(), "--jobs", "2"]), 0);
    let exp = only_subdir(&out);
    let m = manifest(&exp);
    assert_eq!(m.runs.len(), 6);
    assert!(m.runs.iter().all(|r| r.status == RunStatus::Completed));
    assert_eq!(m.config_hash.len(), 64);
    assert!(exp.file_name().unwrap().to_str().unwrap().starts_with("tiny-"));
    for r in &m.runs {
        assert!(exp.join("runs").join(format!("{}.tsv", r.run_id)).exists());
        assert!(exp.join("runs").join(format!("{}.json", r.run_id)).exists());
    }
    assert!(exp.join("summary.json").exists());
    assert!(exp.join("summary.tsv").exists());
    assert!(exp.join("report").join("observables.tsv").exists());

    let before = mtimes(&exp);
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap()]), 0);
    assert_eq!(mtimes(&exp), before, "second invocation must not redo any run");
}

#[test]
fn manifest_reproduces_every_record_file_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let cfg = write_config(tmp.path(), &tiny(&a));
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap(), "--no-report"]), 0);
    let exp_a = only_subdir(&a);
    let b = tmp.path().join("b");
    let man = exp_a.join("manifest.json");
    assert_eq!(cli(&["run", "--config", man.to_str().unwrap(), "--out", b.to_str().unwrap(), "--no-report"]), 0);
    let exp_b = only_subdir(&b);
    assert_eq!(exp_a.file_name(), exp_b.file_name());
    for r in manifest(&exp_a).runs {
        let name = format!("{}.tsv", r.run_id);
        let x = fs::read(exp_a.join("runs").join(&name)).unwrap();
        let y = fs::read(exp_b.join("runs").join(&name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn record_files_have_one_row_per_measurement() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut v = tiny(&out);
    v["qmc"]["measure_every"] = json!(4);
    v["qmc"]["sweeps"] = json!(256);
    v["embedding"]["realizations"] = json!(1);
    let cfg = write_config(tmp.path(), &v);
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap(), "--no-report"]), 0);
    let exp = only_subdir(&out);
    for r in manifest(&exp).runs {
        let f = fs::File::open(exp.join("runs").join(format!("{}.tsv", r.run_id))).unwrap();
        let recs = read_records_tsv(std::io::BufReader::new(f)).unwrap();
        assert_eq!(recs.len(), 64);
        assert!(recs.iter().all(|r| r.logical_count == 1 && r.slices_scanned == 1));
    }
}

#[test]
fn seed_flag_and_overrides_change_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &tiny(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(cli(&["run", "--config", c, "--set", "embedding.realizations=1", "--set", "model.gamma_list=[1.0]", "--no-report"]), 0);
    assert_eq!(cli(&["run", "--config", c, "--set", "embedding.realizations=1", "--set", "model.gamma_list=[1.0]", "--seed", "5", "--no-report"]), 0);
    let dirs: Vec<PathBuf> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 2);
    let seeds: Vec<u64> = dirs.iter().map(|d| manifest(d).runs[0].seed).collect();
    assert_ne!(seeds[0], seeds[1]);
    let m5 = dirs.iter().map(|d| manifest(d)).find(|m| m.config.qmc.master_seed == 5).unwrap();
    assert_eq!(m5.runs[0].seed, run_seed(5, 2, 2.0, 0, 0, "lc"));
    assert_eq!(m5.runs[0].embedding_seed, Some(embedding_seed(5, 2, 2.0, 0)));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut v = tiny(&out);
    v["model"]["beta"] = json!(-1.0);
    let bad = write_config(tmp.path(), &v);
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]), 2);
    assert!(!out.exists(), "nothing may run before validation passes");
    assert_eq!(cli(&["run", "--config", tmp.path().join("missing.json").to_str().unwrap()]), 2);
    assert_eq!(cli(&["run"]), 2);
    assert_eq!(cli(&["run", "--recipe", "fig99"]), 2);
    assert_eq!(cli(&["recipe", "fig99"]), 2);
    assert_eq!(cli(&["run", "--recipe", "fig12", "--set", "qmc.sweeps"]), 2);
    assert_eq!(cli(&["run", "--recipe", "fig12", "--set", "qmc.bogus=1"]), 2);
    assert_eq!(cli(&["run", "--recipe", "fig12", "--jobs", "0"]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
}

#[test]
fn unwritable_output_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = write_config(tmp.path(), &tiny(&blocker.join("sub")));
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn failed_runs_are_recorded_without_stopping_siblings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut v = tiny(&out);
    v["embedding"]["realizations"] = json!(1);
    let cfg = write_config(tmp.path(), &v);
    let c = cfg.to_str().unwrap();
    let id = embedqmc_cli::ExperimentConfig::from_value(v.clone()).unwrap().experiment_id();
    let runs = out.join(&id).join("runs");
    fs::create_dir_all(runs.join("L2_K2_r0_b0_g1_lc.tsv")).unwrap();
    assert_eq!(cli(&["run", "--config", c, "--no-report"]), 3);
    let m = manifest(&out.join(&id));
    let failed: Vec<_> = m.runs.iter().filter(|r| r.status == RunStatus::Failed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].run_id, "L2_K2_r0_b0_g1_lc");
    assert!(failed[0].error.is_some());
    assert!(runs.join("L2_K2_r0_b0_g0_lc.json").exists());

    fs::remove_dir(runs.join("L2_K2_r0_b0_g1_lc.tsv")).unwrap();
    assert_eq!(cli(&["run", "--config", c, "--no-report"]), 0);
    assert!(manifest(&out.join(&id)).runs.iter().all(|r| r.status == RunStatus::Completed));
}

#[test]
fn fig12_recipe_uses_the_small_lattice_seeds_and_attaches_oracle_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let code = cli(&[
        "run",
        "--recipe",
        "fig12",
        "--set",
        "qmc.sweeps=256",
        "--set",
        "qmc.thermalization=100",
        "--set",
        "qmc.ell=16",
        "--set",
        "model.gamma_list=[0.5,3.0]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let exp = only_subdir(&out);
    let m = manifest(&exp);
    assert_eq!(m.runs.len(), 2 * 2 * 3);
    let r = m.runs.iter().find(|r| r.run_id == "L2_K2_r0_b0_g1_rejection").unwrap();
    assert_eq!(r.seed, run_seed(DEFAULT_MASTER_SEED, 2, 2.0, 1, 0, "rejection"));
    assert_eq!(r.embedding_seed, Some(embedding_seed(DEFAULT_MASTER_SEED, 2, 2.0, 0)));

    let summary: Value = serde_json::from_slice(&fs::read(exp.join("summary.json")).unwrap()).unwrap();
    let native = NativeProblem::square_lattice_afm(2).unwrap();
    let k1 = EmbeddedProblem::trivial(&native).unwrap();
    let exact = exact_observables(&k1, &ModelParams::new(3.0, 1.0).unwrap(), 12).unwrap();
    let row = summary["runs"].as_array().unwrap().iter().find(|r| r["run_id"] == "L2_K1_r0_b0_g1_lc").unwrap();
    let oracle_e = row["oracle"]["energy"].as_f64().unwrap();
    assert!((oracle_e - exact.energy).abs() < 1e-12);
    let tsv = fs::read_to_string(exp.join("oracle.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 2 * 2);
}

#[test]
fn oracle_command_prints_exact_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let code = cli(&["oracle", "--recipe", "fig13", "--set", "model.gamma_list=[1.5]", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let tsv = fs::read_to_string(only_subdir(&out).join("oracle.tsv")).unwrap();
    let row: Vec<f64> = tsv.lines().nth(1).unwrap().split('\t').map(|x| x.parse().unwrap()).collect();
    let native = NativeProblem::square_lattice_afm(2).unwrap();
    let k2 = EmbeddedProblem::random_realization(&native, 2.0, -2.0, embedding_seed(DEFAULT_MASTER_SEED, 2, 2.0, 0)).unwrap();
    let x = exact_observables(&k2, &ModelParams::new(1.5, 1.0).unwrap(), 12).unwrap();
    assert_eq!(row[4], 1.5);
    assert!((row[5] - x.logical_probability).abs() < 1e-12);
    assert!((row[6] - x.energy).abs() < 1e-12);

    let code = cli(&["oracle", "--recipe", "fig13", "--set", "problem.L=4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "32 qubits exceed the dense cap");
}

#[test]
fn recipe_command_lists_and_prints() {
    assert_eq!(cli(&["recipe"]), 0);
    assert_eq!(cli(&["recipe", "fig3-top", "--set", "qmc.sweeps=1024"]), 0);
}

#[test]
fn collapse_from_a_curve_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("L\tgamma\tg\tg_err\n");
    for l in [4usize, 6, 8] {
        for i in 0..31 {
            let g = 2.5 + 0.03 * i as f64;
            let x = (l as f64).powf(1.0 / 0.8) * (g - 2.9);
            text.push_str(&format!("{l}\t{g}\t{}\t0.001\n", 0.6 - 0.05 * x));
        }
    }
    let p = tmp.path().join("curves.tsv");
    fs::write(&p, text).unwrap();
    assert_eq!(cli(&["collapse", "--curves", p.to_str().unwrap()]), 0);
    let rep: Value = serde_json::from_slice(&fs::read(tmp.path().join("collapse.json")).unwrap()).unwrap();
    assert!((rep["gamma_c"].as_f64().unwrap() - 2.9).abs() < 0.02);
    assert!((rep["nu"].as_f64().unwrap() - 0.8).abs() < 0.05);
    for key in ["residual", "window", "inputs_hash"] {
        assert!(rep.get(key).is_some(), "{key}");
    }
    let pts = fs::read_to_string(tmp.path().join("collapse_points.tsv")).unwrap();
    assert!(pts.starts_with("x\tg\tL"));
}

#[test]
fn collapse_and_report_from_experiment_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let v = json!({
        "name": "fss",
        "problem": {"L": [2, 3]},
        "embedding": {"K": 1},
        "model": {"gamma_list": [1.0, 1.5, 2.0, 2.5, 3.0], "beta": 1.0},
        "qmc": {"mode": "lc", "sweeps": 256, "thermalization": 50, "ell": 8},
        "outputs": {"directory": out},
        "analysis": {"collapse": {"window": [1.0, 3.0]}, "histogram": {"bins": 9}}
    });
    let cfg = write_config(tmp.path(), &v);
    assert_eq!(cli(&["run", "--config", cfg.to_str().unwrap()]), 0);
    let exp = only_subdir(&out);
    let report = exp.join("report");
    assert!(report.join("collapse_K1_lc_b0.json").exists());
    assert!(report.join("collapse_K1_lc_b0_points.tsv").exists());
    assert!(report.join("histogram_L2_K1_r0_b0_g0_lc.tsv").exists());
    assert!(report.join("peak_binning_L2_K1_r0_b0_g0_lc.tsv").exists());

    fs::remove_dir_all(&report).unwrap();
    assert_eq!(cli(&["report", "--input", exp.to_str().unwrap()]), 0);
    assert!(report.join("observables.tsv").exists());
    let obs = fs::read_to_string(report.join("observables.tsv")).unwrap();
    assert_eq!(obs.lines().count(), 1 + 2 * 5);

    let elsewhere = tmp.path().join("c");
    let code = cli(&["collapse", "--input", exp.to_str().unwrap(), "--window", "1,3", "--out", elsewhere.to_str().unwrap()]);
    assert_eq!(code, 0);
    let rep: Value = serde_json::from_slice(&fs::read(elsewhere.join("collapse_K1_lc_b0.json")).unwrap()).unwrap();
    assert_eq!(rep["window"], json!([1.0, 3.0]));
    assert_eq!(rep["L"], json!([2, 3]));
}

#[test]
fn ell_scan_tabulates_each_slice_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut v = tiny(&out);
    v["embedding"] = json!({"K": 1});
    v["model"]["gamma_list"] = json!([0.0, 1.0]);
    v["qmc"].as_object_mut().unwrap().remove("ell");
    let cfg = write_config(tmp.path(), &v);
    let c = cfg.to_str().unwrap();
    assert_eq!(cli(&["ell-scan", "--config", c, "--ells", "4,8"]), 0);
    let table = fs::read_to_string(out.join("tiny-ell-scan.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r[0] == "4").count(), 2);
    assert_eq!(rows.iter().filter(|r| r[0] == "8").count(), 2);
    assert_eq!(cli(&["ell-scan", "--config", c, "--ells", "4"]), 2);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_embedqmc");
    let ok = Command::new(bin).arg("recipe").output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("fig12"));
    let unknown = Command::new(bin).args(["recipe", "nope"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("fig12"));
    let json = Command::new(bin).args(["recipe", "fig12"]).output().unwrap();
    let v: Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["qmc"]["ell"], json!(75));
}
