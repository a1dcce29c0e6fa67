//! Experiment configuration: a single JSON document, optionally patched with
//! `--set key.path=value` overrides.
//!
//! Precedence, lowest first: recipe or config file, `--set` overrides in the
//! order given, then the dedicated flags `--seed` and `--out`.

use std::path::{Path, PathBuf};

use embedqmc::analysis::{CollapseOptions, Interpolation};
use embedqmc::observables::MIN_BINNING_LENGTH;
use embedqmc::qmc::Mode;
use embedqmc::seeding::DEFAULT_MASTER_SEED;
use embedqmc::DEFAULT_J_F;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Time slices used when `qmc.ell` is unset and `K = 1`.
pub const DEFAULT_ELL_NATIVE: usize = 150;
/// Time slices used when `qmc.ell` is unset and `1 < K ≤ 2`.
pub const DEFAULT_ELL_EMBEDDED: usize = 250;

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn one_or_many<'de, D, T>(d: D) -> Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub model: ModelConfig,
    pub qmc: QmcConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "L", deserialize_with = "one_or_many")]
    pub side_lengths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Random,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(rename = "K", default = "default_k", deserialize_with = "one_or_many")]
    pub k: Vec<f64>,
    #[serde(rename = "J_F", default = "default_j_f")]
    pub j_f: f64,
    /// Number of embedding realizations per `(L, K)`.
    #[serde(default = "one")]
    pub realizations: usize,
    /// Explicit embedding seeds, one per realization. Derived from the master
    /// seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization_seeds: Option<Vec<u64>>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Random, k: default_k(), j_f: DEFAULT_J_F, realizations: 1, realization_seeds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub gamma_list: Vec<f64>,
    #[serde(deserialize_with = "one_or_many")]
    pub beta: Vec<f64>,
    #[serde(default = "one_f64")]
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmcConfig {
    #[serde(deserialize_with = "one_or_many")]
    pub mode: Vec<Mode>,
    pub sweeps: usize,
    #[serde(default = "default_thermalization")]
    pub thermalization: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
    #[serde(default = "one")]
    pub measure_every: usize,
    #[serde(default = "default_ramp")]
    pub ramp_stages: usize,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    /// Relative change between binning levels accepted as converged.
    #[serde(default = "default_binning_threshold")]
    pub binning_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    #[serde(default = "default_spread")]
    pub window_spread: f64,
    #[serde(default = "default_window_points")]
    pub min_window_points: usize,
    #[serde(default)]
    pub cubic: bool,
    #[serde(default)]
    pub refine: bool,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        Self { window: None, window_spread: default_spread(), min_window_points: default_window_points(), cubic: false, refine: false }
    }
}

impl CollapseConfig {
    pub fn options(&self) -> CollapseOptions {
        CollapseOptions {
            window: self.window,
            window_spread: self.window_spread,
            min_window_points: self.min_window_points,
            interpolation: if self.cubic { Interpolation::Cubic } else { Interpolation::Linear },
            refine: self.refine,
            ..CollapseOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "minus_one")]
    pub lo: f64,
    #[serde(default = "one_f64")]
    pub hi: f64,
}

/// Post-processing applied by `report`. None of it changes the runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Attach dense-oracle values to every run small enough for it.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default = "default_oracle_cap")]
    pub oracle_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramConfig>,
    /// ECDF, normal fit and bootstrap interval of the Binder cumulant over
    /// realizations.
    #[serde(default)]
    pub binder_distribution: bool,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Mean-field `h` fit of rejection-mode `P_L(Γ)`.
    #[serde(default)]
    pub mean_field_fit: bool,
    /// Default slice counts for `ell-scan`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ell_list: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            oracle: false,
            oracle_cap: default_oracle_cap(),
            collapse: None,
            histogram: None,
            binder_distribution: false,
            bootstrap_resamples: default_resamples(),
            mean_field_fit: false,
            ell_list: Vec::new(),
        }
    }
}

fn default_k() -> Vec<f64> {
    vec![1.0]
}
fn default_j_f() -> f64 {
    DEFAULT_J_F
}
fn one() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn default_thermalization() -> usize {
    1000
}
fn default_ramp() -> usize {
    10
}
fn default_master_seed() -> u64 {
    DEFAULT_MASTER_SEED
}
fn default_binning_threshold() -> f64 {
    0.05
}
fn default_directory() -> PathBuf {
    PathBuf::from("outputs")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Tsv, Format::Json]
}
fn default_spread() -> f64 {
    0.08
}
fn default_window_points() -> usize {
    4
}
fn default_bins() -> usize {
    41
}
fn default_oracle_cap() -> usize {
    embedqmc::oracle::DEFAULT_DENSE_CAP
}
fn default_resamples() -> usize {
    10_000
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn is_integer(k: f64) -> bool {
    (k - k.round()).abs() < 1e-9
}

/// Formats `K` for run ids: `1`, `1.1`, `2.5`.
pub fn format_k(k: f64) -> String {
    if is_integer(k) {
        format!("{}", k.round() as i64)
    } else {
        format!("{k}")
    }
}

impl ExperimentConfig {
    /// Parses a config document. A manifest written by `run` is accepted as
    /// well; its embedded `config` is used.
    pub fn from_value(mut value: Value) -> Result<Self, CliError> {
        if value.get("manifest_version").is_some() {
            value = value.get("config").cloned().ok_or_else(|| config_err("manifest has no config"))?;
        }
        serde_json::from_value(value).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Value, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{} is not valid JSON: {e}", path.display())))
    }

    /// Slice count for runs at embedding size `k`.
    pub fn ell_for(&self, k: f64) -> Result<usize, CliError> {
        match self.qmc.ell {
            Some(ell) => Ok(ell),
            None if is_integer(k) && k.round() == 1.0 => Ok(DEFAULT_ELL_NATIVE),
            None if k <= 2.0 => Ok(DEFAULT_ELL_EMBEDDED),
            None => Err(config_err(format!(
                "qmc.ell has no default for K={k}; set it explicitly (see the ell-scan command)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(config_err(format!("name {:?} must be non-empty and use only [A-Za-z0-9._-]", self.name)));
        }
        if self.problem.side_lengths.is_empty() {
            return Err(config_err("problem.L is empty"));
        }
        if let Some(&l) = self.problem.side_lengths.iter().find(|&&l| l < 2) {
            return Err(config_err(format!("problem.L must be >= 2, got {l}")));
        }
        let e = &self.embedding;
        if e.k.is_empty() {
            return Err(config_err("embedding.K is empty"));
        }
        for &k in &e.k {
            if !(k.is_finite() && k >= 1.0) {
                return Err(config_err(format!("embedding.K must be >= 1, got {k}")));
            }
            if e.scheme == Scheme::Uniform && !is_integer(k) {
                return Err(config_err(format!("uniform embedding needs integer K, got {k}")));
            }
            self.ell_for(k)?;
        }
        if !(e.j_f.is_finite() && e.j_f < 0.0) {
            return Err(config_err(format!("embedding.J_F must be negative, got {}", e.j_f)));
        }
        if e.realizations == 0 {
            return Err(config_err("embedding.realizations must be >= 1"));
        }
        if let Some(seeds) = &e.realization_seeds {
            if seeds.len() != e.realizations {
                return Err(config_err(format!(
                    "embedding.realization_seeds has {} entries for {} realizations",
                    seeds.len(),
                    e.realizations
                )));
            }
        }
        let m = &self.model;
        if m.gamma_list.is_empty() {
            return Err(config_err("model.gamma_list is empty"));
        }
        if let Some(g) = m.gamma_list.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(config_err(format!("model.gamma_list entries must be >= 0, got {g}")));
        }
        if m.beta.is_empty() {
            return Err(config_err("model.beta is empty"));
        }
        if let Some(b) = m.beta.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(config_err(format!("model.beta must be > 0, got {b}")));
        }
        if !(m.delta.is_finite() && m.delta >= 0.0) {
            return Err(config_err(format!("model.delta must be >= 0, got {}", m.delta)));
        }
        let q = &self.qmc;
        if q.mode.is_empty() {
            return Err(config_err("qmc.mode is empty"));
        }
        if q.sweeps == 0 {
            return Err(config_err("qmc.sweeps must be >= 1"));
        }
        if q.ell.is_some_and(|l| l < 2) {
            return Err(config_err("qmc.ell must be >= 2"));
        }
        if q.measure_every == 0 {
            return Err(config_err("qmc.measure_every must be >= 1"));
        }
        if q.sweeps / q.measure_every < MIN_BINNING_LENGTH {
            return Err(config_err(format!(
                "qmc.sweeps / qmc.measure_every must give at least {MIN_BINNING_LENGTH} measurements"
            )));
        }
        if !(q.binning_threshold > 0.0 && q.binning_threshold < 1.0) {
            return Err(config_err("qmc.binning_threshold must lie in (0, 1)"));
        }
        if self.outputs.formats.is_empty() {
            return Err(config_err("outputs.formats is empty"));
        }
        if let Some(h) = &self.analysis.histogram {
            if h.bins < 2 || !(h.hi > h.lo) {
                return Err(config_err("analysis.histogram needs bins >= 2 and hi > lo"));
            }
        }
        if self.analysis.bootstrap_resamples < 2 {
            return Err(config_err("analysis.bootstrap_resamples must be >= 2"));
        }
        Ok(())
    }

    /// Hex SHA-256 over the fields that determine run results: problem,
    /// embedding, model and qmc.
    pub fn hash(&self) -> String {
        let doc = serde_json::json!({
            "problem": self.problem,
            "embedding": self.embedding,
            "model": self.model,
            "qmc": self.qmc,
        });
        hex::encode(Sha256::digest(doc.to_string().as_bytes()))
    }

    /// `<name>-<first 12 hex digits of the hash>`.
    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.name, &self.hash()[..12])
    }

    pub fn wants(&self, f: Format) -> bool {
        self.outputs.formats.contains(&f)
    }
}

/// Applies one `key.path=value` override. The value is parsed as JSON and
/// taken as a plain string when that fails.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got {assignment:?}")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("bad key path {path:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("cannot set {path}: {key} is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| config_err(format!("cannot set {path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "name": "t",
            "problem": {"L": 2},
            "embedding": {"K": [1, 2]},
            "model": {"gamma_list": [1.0, 2.0], "beta": 1.0},
            "qmc": {"mode": "lc", "sweeps": 64, "ell": 8}
        })
    }

    #[test]
    fn scalars_become_lists_and_defaults_fill_in() {
        let c = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(c.problem.side_lengths, vec![2]);
        assert_eq!(c.model.beta, vec![1.0]);
        assert_eq!(c.qmc.mode, vec![Mode::Lc]);
        assert_eq!(c.qmc.thermalization, 1000);
        assert_eq!(c.qmc.master_seed, DEFAULT_MASTER_SEED);
        assert_eq!(c.embedding.j_f, -2.0);
        assert_eq!(c.outputs.formats, vec![Format::Tsv, Format::Json]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = base();
        v["qmc"]["sweep"] = json!(3);
        assert!(matches!(ExperimentConfig::from_value(v), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_parse_json_or_fall_back_to_strings() {
        let mut v = base();
        apply_override(&mut v, "qmc.sweeps=128").unwrap();
        apply_override(&mut v, "qmc.mode=rejection").unwrap();
        apply_override(&mut v, "problem.L=[4,6]").unwrap();
        apply_override(&mut v, "analysis.collapse.refine=true").unwrap();
        let c = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(c.qmc.sweeps, 128);
        assert_eq!(c.qmc.mode, vec![Mode::Rejection]);
        assert_eq!(c.problem.side_lengths, vec![4, 6]);
        assert!(c.analysis.collapse.unwrap().refine);
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        let mut v = base();
        assert!(apply_override(&mut v, "qmc.sweeps").is_err());
        assert!(apply_override(&mut v, "qmc..sweeps=1").is_err());
        assert!(apply_override(&mut v, "name.x=1").is_err());
    }

    #[test]
    fn ell_defaults_depend_on_k() {
        let mut v = base();
        v["qmc"].as_object_mut().unwrap().remove("ell");
        let c = ExperimentConfig::from_value(v.clone()).unwrap();
        assert_eq!(c.ell_for(1.0).unwrap(), 150);
        assert_eq!(c.ell_for(1.1).unwrap(), 250);
        assert_eq!(c.ell_for(2.0).unwrap(), 250);
        assert!(c.ell_for(3.0).is_err());
        v["embedding"]["K"] = json!([1, 3]);
        assert!(ExperimentConfig::from_value(v).unwrap().validate().is_err());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let cases = [
            ("name", json!("a b")),
            ("problem", json!({"L": 1})),
            ("model", json!({"gamma_list": [], "beta": 1})),
            ("model", json!({"gamma_list": [1], "beta": 0})),
            ("embedding", json!({"K": 0.5})),
            ("embedding", json!({"K": 1.5, "scheme": "uniform"})),
            ("embedding", json!({"K": 2, "J_F": 1})),
            ("embedding", json!({"K": 2, "realizations": 2, "realization_seeds": [1]})),
            ("qmc", json!({"mode": "lc", "sweeps": 256, "ell": 8, "measure_every": 8})),
        ];
        for (key, val) in cases {
            let mut v = base();
            v[key] = val;
            let c = ExperimentConfig::from_value(v).unwrap();
            assert!(c.validate().is_err(), "{key} should be rejected");
        }
    }

    #[test]
    fn hash_ignores_outputs_and_analysis() {
        let a = ExperimentConfig::from_value(base()).unwrap();
        let mut b = a.clone();
        b.outputs.directory = "elsewhere".into();
        b.analysis.oracle = true;
        assert_eq!(a.hash(), b.hash());
        b.qmc.sweeps += 1;
        assert_ne!(a.hash(), b.hash());
        assert!(a.experiment_id().starts_with("t-"));
    }

    #[test]
    fn manifest_documents_are_accepted() {
        let c = ExperimentConfig::from_value(base()).unwrap();
        let m = json!({"manifest_version": 1, "config": c});
        assert_eq!(ExperimentConfig::from_value(m).unwrap(), c);
    }

    #[test]
    fn k_formatting() {
        assert_eq!(format_k(1.0), "1");
        assert_eq!(format_k(1.1), "1.1");
        assert_eq!(format_k(2.5), "2.5");
    }
}
