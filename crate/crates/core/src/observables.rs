//! Order parameter, Binder cumulant and binning error analysis.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::SpinConfig;
use crate::SimRng;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Signed number of combined standard errors by which `self` exceeds
    /// `other`.
    pub fn sigmas_from(&self, other: &Estimate) -> f64 {
        let err = self.stderr.hypot(other.stderr);
        let diff = self.mean - other.mean;
        if err == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        } else {
            diff / err
        }
    }

    pub fn sigmas_from_exact(&self, exact: f64) -> f64 {
        self.sigmas_from(&Estimate { mean: exact, stderr: 0.0 })
    }
}

pub(crate) fn staggered_magnetization_raw(spins: &[i8], parities: &[i8]) -> f64 {
    let s: i64 = spins.iter().zip(parities).map(|(&s, &p)| i64::from(s * p)).sum();
    s as f64 / spins.len() as f64
}

/// `M_AFM = (1/N) Σ (−1)^{x+y} sᵢ`.
pub fn staggered_magnetization(config: &SpinConfig, coords: &[(i64, i64)]) -> Result<f64> {
    if config.len() != coords.len() || config.is_empty() {
        return Err(invalid(format!("{} spins for {} sites", config.len(), coords.len())));
    }
    let parities: Vec<i8> = coords
        .iter()
        .map(|&(x, y)| if (x + y).rem_euclid(2) == 0 { 1 } else { -1 })
        .collect();
    Ok(staggered_magnetization_raw(config.spins(), &parities))
}

/// `g = 1 − ⟨m⁴⟩ / 3⟨m²⟩²` from raw order-parameter samples.
pub fn binder_cumulant(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let n = samples.len() as f64;
    let m2 = samples.iter().map(|m| m * m).sum::<f64>() / n;
    let m4 = samples.iter().map(|m| m.powi(4)).sum::<f64>() / n;
    binder_from_moments(m2, m4)
}

pub fn binder_from_moments(m2: f64, m4: f64) -> Result<f64> {
    if m2 <= 0.0 {
        return Err(Error::UndefinedCumulant);
    }
    Ok(1.0 - m4 / (3.0 * m2 * m2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningOptions {
    /// Relative change between successive levels below which the error is
    /// considered converged.
    pub threshold: f64,
    /// Fewest bins the coarsest level may leave.
    pub min_bins: usize,
}

impl Default for BinningOptions {
    fn default() -> Self {
        Self { threshold: 0.05, min_bins: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinLevel {
    pub level: u32,
    pub bin_size: usize,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedError {
    pub mean: f64,
    pub levels: Vec<BinLevel>,
    pub converged_stderr: f64,
    pub converged_level: u32,
    /// False when no pair of successive levels agreed within the threshold;
    /// the coarsest level is reported in that case.
    pub converged: bool,
}

impl BinnedError {
    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean, stderr: self.converged_stderr }
    }
}

pub const MIN_BINNING_LENGTH: usize = 64;

fn stderr_of_bin_means(values: &[f64], bin: usize) -> f64 {
    let nbins = values.len() / bin;
    let means: Vec<f64> = values[..nbins * bin]
        .chunks_exact(bin)
        .map(|c| c.iter().sum::<f64>() / bin as f64)
        .collect();
    let mu = means.iter().sum::<f64>() / nbins as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (nbins - 1) as f64;
    (var / nbins as f64).sqrt()
}

/// Standard error of the mean at bin sizes `2^l`, `l = 0, 1, …`, keeping at
/// least `min_bins` bins. The converged level is the smallest `l` whose error
/// differs from level `l + 1` by less than `threshold` (relative).
pub fn binning_errors(values: &[f64], opts: BinningOptions) -> Result<BinnedError> {
    if values.len() < MIN_BINNING_LENGTH {
        return Err(Error::InsufficientData(format!(
            "binning needs at least {MIN_BINNING_LENGTH} values, got {}",
            values.len()
        )));
    }
    let min_bins = opts.min_bins.max(2);
    let mut levels = Vec::new();
    let mut l = 0u32;
    while values.len() >> l >= min_bins {
        let bin = 1usize << l;
        levels.push(BinLevel { level: l, bin_size: bin, stderr: stderr_of_bin_means(values, bin) });
        l += 1;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let converged_at = levels.windows(2).position(|w| {
        let (a, b) = (w[0].stderr, w[1].stderr);
        (b - a).abs() <= opts.threshold * a || (a == 0.0 && b == 0.0)
    });
    let (chosen, converged) = match converged_at {
        Some(i) => (levels[i], true),
        None => (*levels.last().expect("at least one level"), false),
    };
    Ok(BinnedError {
        mean,
        levels,
        converged_stderr: chosen.stderr,
        converged_level: chosen.level,
        converged,
    })
}

/// Estimate of `Σ numerators / Σ denominators` with a binning error from the
/// linearized series `(Sₜ − R·Cₜ) / C̄`.
pub fn ratio_estimate(numerators: &[f64], denominators: &[f64], opts: BinningOptions) -> Result<Estimate> {
    if numerators.len() != denominators.len() {
        return Err(Error::Alignment("numerator and denominator series differ in length".into()));
    }
    let total_den: f64 = denominators.iter().sum();
    if total_den <= 0.0 {
        return Err(Error::InsufficientData("no accepted samples".into()));
    }
    let ratio = numerators.iter().sum::<f64>() / total_den;
    let mean_den = total_den / denominators.len() as f64;
    let linear: Vec<f64> = numerators
        .iter()
        .zip(denominators)
        .map(|(s, c)| (s - ratio * c) / mean_den)
        .collect();
    let b = binning_errors(&linear, opts)?;
    Ok(Estimate { mean: ratio, stderr: b.converged_stderr })
}

/// Binder cumulant with an error from bootstrapping over bins of
/// `bin_size` consecutive records. `counts` weights records that hold sums
/// over several samples (rejection mode); pass all ones otherwise.
pub fn binder_bootstrap(
    sum_m2: &[f64],
    sum_m4: &[f64],
    counts: &[f64],
    bin_size: usize,
    resamples: usize,
    seed: u64,
) -> Result<Estimate> {
    if sum_m2.len() != sum_m4.len() || sum_m2.len() != counts.len() {
        return Err(Error::Alignment("moment series differ in length".into()));
    }
    let bin_size = bin_size.max(1);
    let nbins = sum_m2.len() / bin_size;
    if nbins < 2 {
        return Err(Error::InsufficientData("fewer than two bins".into()));
    }
    let bins: Vec<(f64, f64, f64)> = (0..nbins)
        .map(|b| {
            let r = b * bin_size..(b + 1) * bin_size;
            (
                sum_m2[r.clone()].iter().sum(),
                sum_m4[r.clone()].iter().sum(),
                counts[r].iter().sum(),
            )
        })
        .collect();
    let g_of = |acc: (f64, f64, f64)| -> Result<f64> {
        if acc.2 <= 0.0 {
            return Err(Error::InsufficientData("no accepted samples".into()));
        }
        binder_from_moments(acc.0 / acc.2, acc.1 / acc.2)
    };
    let full = bins.iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = g_of(full)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = (0.0, 0.0, 0.0);
        for _ in 0..nbins {
            let b = bins[rng.random_range(0..nbins)];
            acc = (acc.0 + b.0, acc.1 + b.1, acc.2 + b.2);
        }
        if let Ok(g) = g_of(acc) {
            reps.push(g);
        }
    }
    if reps.len() < 2 {
        return Ok(Estimate { mean, stderr: f64::NAN });
    }
    let mu = reps.iter().sum::<f64>() / reps.len() as f64;
    let var = reps.iter().map(|g| (g - mu).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    Ok(Estimate { mean, stderr: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Normalized histogram over `[lo, hi]` with `bin_count` equal bins. Values
/// outside the range are clamped into the edge bins. Per-bin errors come from
/// a binning analysis of the bin's indicator series, or the binomial error
/// when the series is too short for binning.
pub fn histogram(samples: &[f64], bin_count: usize, lo: f64, hi: f64, opts: BinningOptions) -> Result<Histogram> {
    if bin_count < 2 {
        return Err(invalid("histogram needs at least 2 bins"));
    }
    if !(hi > lo) {
        return Err(invalid("histogram range is empty"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let width = (hi - lo) / bin_count as f64;
    let index = |x: f64| (((x - lo) / width).floor().max(0.0) as usize).min(bin_count - 1);
    let assigned: Vec<usize> = samples.iter().map(|&x| index(x)).collect();
    let n = samples.len() as f64;
    let mut centers = Vec::with_capacity(bin_count);
    let mut probabilities = Vec::with_capacity(bin_count);
    let mut errors = Vec::with_capacity(bin_count);
    for b in 0..bin_count {
        centers.push(lo + (b as f64 + 0.5) * width);
        let indicator: Vec<f64> = assigned.iter().map(|&a| if a == b { 1.0 } else { 0.0 }).collect();
        let p = indicator.iter().sum::<f64>() / n;
        probabilities.push(p);
        let err = if samples.len() >= MIN_BINNING_LENGTH {
            binning_errors(&indicator, opts)?.converged_stderr
        } else {
            (p * (1.0 - p) / n).sqrt()
        };
        errors.push(err);
    }
    Ok(Histogram { centers, probabilities, errors })
}
