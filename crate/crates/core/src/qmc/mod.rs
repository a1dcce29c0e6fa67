//! Path-integral Monte Carlo with imaginary-time cluster updates.
//!
//! The Trotterized partition function of `H̃ = −Γ Σ Xᵢ + H_P` maps onto a
//! classical lattice of `Ñ × ℓ` spins with ferromagnetic imaginary-time
//! coupling `J⊥ = −ln tanh(β_eff Γ) / 2β_eff`. Clusters grow only along
//! imaginary time (bond probability `p_add = 1 − e^{−2β_eff J⊥}`) and are
//! proposed for a flip with probability ½, then accepted by a Metropolis test
//! on the spatial energy alone.
//!
//! Three modes share that engine:
//! - `Standard` measures slice 0 as-is.
//! - `Rejection` scans every slice and keeps the logical ones.
//! - `Lc` additionally joins, at `τ = 0`, all clusters that pass through the
//!   same chain, so slice 0 never leaves the logical subspace and can be
//!   measured on every sweep.
//!
//! # Randomness
//!
//! A run owns one [`SimRng`] seeded from a `u64`. Draw order: initial spins
//! site-major (`site`, then `τ`), then in LC mode one draw per logical qubit
//! for slice 0; per sweep, one uniform per aligned imaginary-time bond in
//! storage order (skipped when `p_add` is exactly 0 or 1), then one uniform
//! per cluster, in cluster order.

mod checkpoint;
mod cluster;
mod record;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use cluster::{ClusterPartition, SweepStats};
pub use record::{read_records_tsv, write_records_tsv, RECORD_TSV_VERSION};

use crate::embedding::EmbeddedProblem;
use crate::error::{invalid, Error, Result};
use crate::model::{bond_energy, ModelParams};
use crate::observables::{
    binder_bootstrap, binning_errors, ratio_estimate, staggered_magnetization_raw, BinningOptions, Estimate,
};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Standard,
    Rejection,
    Lc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Rejection => "rejection",
            Mode::Lc => "lc",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "rejection" => Ok(Mode::Rejection),
            "lc" => Ok(Mode::Lc),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

/// Couplings of the classical effective lattice.
///
/// The Trotter prefactor `C = √(½ sinh 2β_eff Γ)` is common to every
/// configuration and cancels from all acceptance ratios, so it is not kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrotterCouplings {
    pub beta_eff: f64,
    /// `None` when `Γ = 0`: world-lines are rigid and `J⊥` is infinite.
    pub j_perp: Option<f64>,
    pub p_add: f64,
}

pub fn trotter_couplings(params: &ModelParams, slices: usize) -> Result<TrotterCouplings> {
    params.validate()?;
    if slices < 2 {
        return Err(invalid(format!("need at least 2 imaginary-time slices, got {slices}")));
    }
    let beta_eff = params.beta / slices as f64;
    let x = beta_eff * params.gamma;
    if x == 0.0 {
        return Ok(TrotterCouplings { beta_eff, j_perp: None, p_add: 1.0 });
    }
    // 1 − tanh x without cancellation
    let p_add = 2.0 / (1.0 + (2.0 * x).exp());
    let j_perp = -x.tanh().ln() / (2.0 * beta_eff);
    Ok(TrotterCouplings { beta_eff, j_perp: Some(j_perp), p_add })
}

/// Spins of the effective lattice, stored site-major: the `ℓ` imaginary-time
/// spins of one physical qubit are contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathIntegralState {
    sites: usize,
    slices: usize,
    spins: Vec<i8>,
}

impl PathIntegralState {
    pub fn from_spins(sites: usize, slices: usize, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != sites * slices {
            return Err(invalid("spin count does not match sites × slices"));
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid("spins must be ±1"));
        }
        Ok(Self { sites, slices, spins })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    #[inline]
    pub fn index(&self, site: usize, tau: usize) -> usize {
        site * self.slices + tau
    }

    #[inline]
    pub fn spin(&self, site: usize, tau: usize) -> i8 {
        self.spins[site * self.slices + tau]
    }

    pub fn slice(&self, tau: usize) -> Vec<i8> {
        (0..self.sites).map(|p| self.spin(p, tau)).collect()
    }

    /// `Σ_τ Δ Σ_bonds J s s` recomputed from scratch.
    pub fn spatial_energy(&self, embedded: &EmbeddedProblem, delta: f64) -> f64 {
        (0..self.slices)
            .map(|t| bond_energy(&embedded.all_bonds, &self.slice(t), delta))
            .sum()
    }

    /// `−Σ_τ Σ_i σ_i^τ σ_i^{τ+1}` with periodic `τ`; multiply by `J⊥`.
    pub fn imaginary_time_bond_sum(&self) -> i64 {
        let mut s = 0i64;
        for p in 0..self.sites {
            for t in 0..self.slices {
                s -= i64::from(self.spin(p, t) * self.spin(p, (t + 1) % self.slices));
            }
        }
        s
    }
}

/// Uniformly random spins; in LC mode slice 0 is then overwritten by random
/// logical values replicated along each chain.
pub fn init_state<R: Rng + ?Sized>(
    embedded: &EmbeddedProblem,
    mode: Mode,
    slices: usize,
    rng: &mut R,
) -> Result<PathIntegralState> {
    if slices < 2 {
        return Err(invalid(format!("need at least 2 imaginary-time slices, got {slices}")));
    }
    let sites = embedded.num_physical();
    let spins: Vec<i8> = (0..sites * slices).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    let mut state = PathIntegralState { sites, slices, spins };
    if mode == Mode::Lc {
        for chain in embedded.chains() {
            let v = if rng.random::<bool>() { 1 } else { -1 };
            for &p in chain {
                let i = state.index(p, 0);
                state.spins[i] = v;
            }
        }
    }
    Ok(state)
}

/// Logical samples extracted from one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Native configurations (unembedded) of every accepted slice.
    pub samples: Vec<Vec<i8>>,
    pub slices_scanned: usize,
}

/// Extracts samples from the current state.
///
/// Rejection mode keeps every logical slice, LC mode returns slice 0 (always
/// logical) and standard mode looks at slice 0 only, keeping it when its
/// chains happen to be intact.
pub fn measure(state: &PathIntegralState, embedded: &EmbeddedProblem, mode: Mode) -> Result<Measurement> {
    match mode {
        Mode::Rejection => {
            let samples = (0..state.slices())
                .filter_map(|t| embedded.unembed_slice(&state.slice(t)).ok())
                .collect();
            Ok(Measurement { samples, slices_scanned: state.slices() })
        }
        Mode::Lc => {
            let s = embedded.unembed_slice(&state.slice(0)).map_err(|_| {
                Error::InvariantViolation("slice 0 left the logical subspace in LC mode".into())
            })?;
            Ok(Measurement { samples: vec![s], slices_scanned: 1 })
        }
        Mode::Standard => {
            let samples = embedded.unembed_slice(&state.slice(0)).ok().into_iter().collect();
            Ok(Measurement { samples, slices_scanned: 1 })
        }
    }
}

/// Per-measurement totals over the accepted samples.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepRecord {
    pub sweep: u64,
    pub logical_count: u32,
    pub slices_scanned: u32,
    pub sum_m: f64,
    pub sum_abs_m: f64,
    pub sum_m2: f64,
    pub sum_m4: f64,
    pub sum_energy: f64,
}

impl SweepRecord {
    pub fn from_measurement(sweep: u64, m: &Measurement, embedded: &EmbeddedProblem, parities: &[i8], delta: f64) -> Self {
        let mut r = SweepRecord {
            sweep,
            logical_count: m.samples.len() as u32,
            slices_scanned: m.slices_scanned as u32,
            ..Default::default()
        };
        for s in &m.samples {
            let mag = staggered_magnetization_raw(s, parities);
            r.sum_m += mag;
            r.sum_abs_m += mag.abs();
            r.sum_m2 += mag * mag;
            r.sum_m4 += mag.powi(4);
            r.sum_energy += bond_energy(&embedded.native.bonds, s, delta);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcRunConfig {
    pub mode: Mode,
    pub sweeps: usize,
    pub thermalization_sweeps: usize,
    pub slices: usize,
    pub seed: u64,
    pub measure_every: usize,
    pub ramp_stages: usize,
}

impl QmcRunConfig {
    pub fn new(mode: Mode, sweeps: usize, slices: usize, seed: u64) -> Self {
        Self { mode, sweeps, thermalization_sweeps: 1000, slices, seed, measure_every: 1, ramp_stages: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps < 1 {
            return Err(invalid("sweeps must be >= 1"));
        }
        if self.slices < 2 {
            return Err(invalid("slices must be >= 2"));
        }
        if self.measure_every < 1 {
            return Err(invalid("measure_every must be >= 1"));
        }
        if self.ramp_stages < 1 {
            return Err(invalid("ramp_stages must be >= 1"));
        }
        Ok(())
    }
}

/// Geometric β ramp from `β/10` to `β`: `(β_stage, sweeps)` per stage. The
/// last stage is exactly the target and always receives at least one sweep
/// when `sweeps > 0`.
pub fn ramp_schedule(beta: f64, sweeps: usize, stages: usize) -> Vec<(f64, usize)> {
    let stages = stages.max(1);
    (0..stages)
        .map(|s| {
            let b = if s + 1 == stages {
                beta
            } else {
                beta * 10f64.powf(-1.0 + s as f64 / (stages - 1) as f64)
            };
            let n = (s + 1) * sweeps / stages - s * sweeps / stages;
            (b, n)
        })
        .collect()
}

/// Engine state for one Markov chain: problem, couplings and scratch space.
pub struct Sampler<'a> {
    embedded: &'a EmbeddedProblem,
    mode: Mode,
    params: ModelParams,
    couplings: TrotterCouplings,
    slices: usize,
    partition: ClusterPartition,
}

impl<'a> Sampler<'a> {
    pub fn new(embedded: &'a EmbeddedProblem, params: ModelParams, mode: Mode, slices: usize) -> Result<Self> {
        let couplings = trotter_couplings(&params, slices)?;
        Ok(Self {
            embedded,
            mode,
            params,
            couplings,
            slices,
            partition: ClusterPartition::default(),
        })
    }

    pub fn couplings(&self) -> &TrotterCouplings {
        &self.couplings
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn embedded(&self) -> &EmbeddedProblem {
        self.embedded
    }

    /// Changes the temperature, recomputing the Trotter couplings.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        let mut p = self.params;
        p.beta = beta;
        self.couplings = trotter_couplings(&p, self.slices)?;
        self.params = p;
        Ok(())
    }

    pub fn partition(&self) -> &ClusterPartition {
        &self.partition
    }

    /// Thermalizes with a geometric β ramp ending at the sampler's current β.
    pub fn thermalize<R: Rng + ?Sized>(
        &mut self,
        state: &mut PathIntegralState,
        sweeps: usize,
        stages: usize,
        rng: &mut R,
    ) -> Result<()> {
        let target = self.params.beta;
        for (beta, n) in ramp_schedule(target, sweeps, stages) {
            if n == 0 {
                continue;
            }
            self.set_beta(beta)?;
            for _ in 0..n {
                self.sweep(state, rng)?;
            }
        }
        self.set_beta(target)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: Mode,
    pub params: ModelParams,
    pub config: QmcRunConfig,
    pub records: Vec<SweepRecord>,
    pub accepted_flips: u64,
    pub attempted_flips: u64,
}

/// Summary statistics of a run with binning errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub logical_probability: Estimate,
    pub energy: Option<Estimate>,
    pub abs_magnetization: Option<Estimate>,
    pub m2: Option<Estimate>,
    pub m4: Option<Estimate>,
    pub binder: Option<Estimate>,
    pub logical_samples: u64,
    pub measurements: u64,
    pub acceptance_rate: f64,
}

impl RunOutput {
    fn column(&self, f: impl Fn(&SweepRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    /// `P_L` as accepted slices over scanned slices.
    pub fn estimate_logical_probability(&self, opts: BinningOptions) -> Result<Estimate> {
        let scanned: f64 = self.records.iter().map(|r| f64::from(r.slices_scanned)).sum();
        if scanned == 0.0 {
            return Err(Error::InsufficientData("no slices scanned".into()));
        }
        let fractions = self.column(|r| f64::from(r.logical_count) / f64::from(r.slices_scanned));
        Ok(binning_errors(&fractions, opts)?.estimate())
    }

    /// Logical-subspace mean of a per-sample quantity summed in each record.
    pub fn estimate_mean(&self, f: impl Fn(&SweepRecord) -> f64, opts: BinningOptions) -> Result<Estimate> {
        ratio_estimate(&self.column(f), &self.column(|r| f64::from(r.logical_count)), opts)
    }

    pub fn estimate_binder(&self, opts: BinningOptions, resamples: usize) -> Result<Estimate> {
        let m2 = self.column(|r| r.sum_m2);
        let counts = self.column(|r| f64::from(r.logical_count));
        // bin size from the converged level of the m² series
        let bin = binning_errors(&ratio_linearized(&m2, &counts)?, opts)
            .map(|b| 1usize << b.converged_level)
            .unwrap_or(1);
        binder_bootstrap(&m2, &self.column(|r| r.sum_m4), &counts, bin, resamples, self.config.seed ^ 0xB1DE)
    }

    pub fn summary(&self, opts: BinningOptions) -> Result<RunSummary> {
        let logical_samples: u64 = self.records.iter().map(|r| u64::from(r.logical_count)).sum();
        let ok = |r: Result<Estimate>| r.ok();
        Ok(RunSummary {
            logical_probability: self.estimate_logical_probability(opts)?,
            energy: ok(self.estimate_mean(|r| r.sum_energy, opts)),
            abs_magnetization: ok(self.estimate_mean(|r| r.sum_abs_m, opts)),
            m2: ok(self.estimate_mean(|r| r.sum_m2, opts)),
            m4: ok(self.estimate_mean(|r| r.sum_m4, opts)),
            binder: ok(self.estimate_binder(opts, 1000)),
            logical_samples,
            measurements: self.records.len() as u64,
            acceptance_rate: if self.attempted_flips == 0 {
                0.0
            } else {
                self.accepted_flips as f64 / self.attempted_flips as f64
            },
        })
    }
}

fn ratio_linearized(num: &[f64], den: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = den.iter().sum();
    if total <= 0.0 {
        return Err(Error::InsufficientData("no accepted samples".into()));
    }
    let r = num.iter().sum::<f64>() / total;
    let mean_den = total / den.len() as f64;
    Ok(num.iter().zip(den).map(|(s, c)| (s - r * c) / mean_den).collect())
}

/// A resumable run: thermalize once, then advance production sweeps in
/// chunks, optionally checkpointing between them.
pub struct QmcRun<'a> {
    sampler: Sampler<'a>,
    state: PathIntegralState,
    rng: SimRng,
    config: QmcRunConfig,
    sweeps_done: u64,
    parities: Vec<i8>,
    output: RunOutput,
}

impl<'a> QmcRun<'a> {
    /// Initializes and thermalizes.
    pub fn start(embedded: &'a EmbeddedProblem, params: ModelParams, config: QmcRunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SimRng::seed_from_u64(config.seed);
        let mut sampler = Sampler::new(embedded, params, config.mode, config.slices)?;
        let mut state = init_state(embedded, config.mode, config.slices, &mut rng)?;
        sampler.thermalize(&mut state, config.thermalization_sweeps, config.ramp_stages, &mut rng)?;
        Ok(Self::assemble(sampler, state, rng, config, 0))
    }

    fn assemble(sampler: Sampler<'a>, state: PathIntegralState, rng: SimRng, config: QmcRunConfig, sweeps_done: u64) -> Self {
        let output = RunOutput {
            mode: config.mode,
            params: *sampler.params(),
            config,
            records: Vec::new(),
            accepted_flips: 0,
            attempted_flips: 0,
        };
        let parities = sampler.embedded().native.parities();
        Self { sampler, state, rng, config, sweeps_done, parities, output }
    }

    /// Continues a run from a checkpoint taken after thermalization.
    pub fn resume(
        embedded: &'a EmbeddedProblem,
        params: ModelParams,
        config: QmcRunConfig,
        checkpoint: Checkpoint,
    ) -> Result<Self> {
        config.validate()?;
        if checkpoint.mode != config.mode {
            return Err(Error::Checkpoint("mode differs from the run configuration".into()));
        }
        if checkpoint.state.sites() != embedded.num_physical() || checkpoint.state.slices() != config.slices {
            return Err(Error::Checkpoint("lattice shape differs from the run configuration".into()));
        }
        let sampler = Sampler::new(embedded, params, config.mode, config.slices)?;
        Ok(Self::assemble(sampler, checkpoint.state, checkpoint.rng, config, checkpoint.sweeps_done))
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps_done
    }

    pub fn state(&self) -> &PathIntegralState {
        &self.state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            mode: self.config.mode,
            sweeps_done: self.sweeps_done,
            state: self.state.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Runs up to `n` further production sweeps (capped by the configured
    /// total), measuring every `measure_every` sweeps.
    pub fn advance(&mut self, n: u64) -> Result<()> {
        let end = (self.sweeps_done + n).min(self.config.sweeps as u64);
        let delta = self.sampler.params().delta;
        while self.sweeps_done < end {
            let stats = self.sampler.sweep(&mut self.state, &mut self.rng)?;
            self.output.accepted_flips += stats.accepted as u64;
            self.output.attempted_flips += stats.clusters as u64;
            self.sweeps_done += 1;
            if self.sweeps_done % self.config.measure_every as u64 == 0 {
                let m = measure(&self.state, self.sampler.embedded(), self.config.mode)?;
                self.output.records.push(SweepRecord::from_measurement(
                    self.sweeps_done - 1,
                    &m,
                    self.sampler.embedded(),
                    &self.parities,
                    delta,
                ));
            }
        }
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.sweeps_done >= self.config.sweeps as u64
    }

    /// Records collected since this run object was created or resumed.
    pub fn records(&self) -> &[SweepRecord] {
        &self.output.records
    }

    pub fn finish(mut self) -> Result<RunOutput> {
        let remaining = self.config.sweeps as u64 - self.sweeps_done.min(self.config.sweeps as u64);
        self.advance(remaining)?;
        Ok(self.output)
    }
}

/// Thermalizes, then collects `config.sweeps` production sweeps.
pub fn run(embedded: &EmbeddedProblem, params: ModelParams, config: QmcRunConfig) -> Result<RunOutput> {
    QmcRun::start(embedded, params, config)?.finish()
}
