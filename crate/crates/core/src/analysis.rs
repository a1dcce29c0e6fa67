//! Finite-size scaling and distributional analysis over realizations.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::SimRng;

/// Binder cumulant `g(Γ)` at one system size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinderCurve {
    #[serde(rename = "L")]
    pub side_length: usize,
    /// `(Γ, g, g_err)` with strictly increasing `Γ`.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Natural cubic spline.
    Cubic,
}

impl BinderCurve {
    pub fn new(side_length: usize, points: Vec<(f64, f64, f64)>) -> Result<Self> {
        let c = Self { side_length, points };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_length == 0 {
            return Err(invalid("curve side length must be positive"));
        }
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(invalid(format!("curve L={} has non-finite points", self.side_length)));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid(format!("curve L={} must have strictly increasing Γ", self.side_length)));
        }
        Ok(())
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    fn range(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }

    /// `g` interpolated at `gamma`; `None` outside the sampled range.
    pub fn value_at(&self, gamma: f64, method: Interpolation) -> Option<f64> {
        let (lo, hi) = self.range()?;
        if gamma < lo || gamma > hi {
            return None;
        }
        let k = self.points.partition_point(|p| p.0 <= gamma);
        if k == self.points.len() {
            return Some(self.points[k - 1].1);
        }
        let (a, b) = (self.points[k - 1], self.points[k]);
        match method {
            Interpolation::Linear => Some(a.1 + (b.1 - a.1) * (gamma - a.0) / (b.0 - a.0)),
            Interpolation::Cubic => {
                let m = natural_spline_moments(&self.points);
                let h = b.0 - a.0;
                let (u, v) = ((b.0 - gamma) / h, (gamma - a.0) / h);
                Some(
                    u * a.1 + v * b.1
                        + ((u.powi(3) - u) * m[k - 1] + (v.powi(3) - v) * m[k]) * h * h / 6.0,
                )
            }
        }
    }
}

/// Second derivatives of the natural cubic spline through `points`.
fn natural_spline_moments(points: &[(f64, f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let (mut diag, mut rhs) = (vec![0.0; n], vec![0.0; n]);
    for i in 1..n - 1 {
        let (h0, h1) = (points[i].0 - points[i - 1].0, points[i + 1].0 - points[i].0);
        diag[i] = 2.0 * (h0 + h1);
        rhs[i] = 6.0 * ((points[i + 1].1 - points[i].1) / h1 - (points[i].1 - points[i - 1].1) / h0);
    }
    // Thomas algorithm on the interior rows
    for i in 2..n - 1 {
        let h = points[i].0 - points[i - 1].0;
        let w = h / diag[i - 1];
        diag[i] -= w * h;
        rhs[i] -= w * rhs[i - 1];
    }
    for i in (1..n - 1).rev() {
        let h = points[i + 1].0 - points[i].0;
        m[i] = (rhs[i] - h * m[i + 1]) / diag[i];
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub gamma_c: f64,
    pub nu: f64,
    pub residual: f64,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    /// Γ_c candidates; defaults to the window at a quarter of the finest data spacing.
    pub gamma_grid: Option<Vec<f64>>,
    /// ν candidates; defaults to 0.5..=2.0 in steps of 0.01.
    pub nu_grid: Option<Vec<f64>>,
    /// Explicit window; chosen from the data otherwise.
    pub window: Option<(f64, f64)>,
    /// Largest spread of `g` across curves accepted inside the automatic window.
    pub window_spread: f64,
    pub min_window_points: usize,
    pub interpolation: Interpolation,
    /// Local search below grid resolution after the grid minimum.
    pub refine: bool,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            gamma_grid: None,
            nu_grid: None,
            window: None,
            window_spread: 0.08,
            min_window_points: 4,
            interpolation: Interpolation::Linear,
            refine: false,
        }
    }
}

fn finest_spacing(curves: &[BinderCurve]) -> f64 {
    curves
        .iter()
        .flat_map(|c| c.points.windows(2).map(|w| w[1].0 - w[0].0))
        .fold(f64::INFINITY, f64::min)
}

fn points_in(curve: &BinderCurve, window: (f64, f64)) -> usize {
    let eps = 1e-12 * (1.0 + window.1.abs());
    curve.points.iter().filter(|p| p.0 >= window.0 - eps && p.0 <= window.1 + eps).count()
}

/// Data-driven window around the crossing: the contiguous `Γ` interval about
/// the point of least spread where `max g − min g` across curves stays below
/// `opts.window_spread`, widened symmetrically until every curve contributes
/// `opts.min_window_points` points.
pub fn select_window(curves: &[BinderCurve], opts: &CollapseOptions) -> Result<(f64, f64)> {
    if curves.len() < 2 {
        return Err(Error::InvalidWindow("need at least two curves".into()));
    }
    let lo = curves.iter().filter_map(BinderCurve::range).map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let hi = curves.iter().filter_map(BinderCurve::range).map(|r| r.1).fold(f64::INFINITY, f64::min);
    if !(lo < hi) {
        return Err(Error::InvalidWindow("curves share no Γ range".into()));
    }
    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.gammas()).filter(|&g| g >= lo && g <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let spread: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c.value_at(g, opts.interpolation)).collect();
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let best = (0..grid.len()).min_by(|&a, &b| spread[a].total_cmp(&spread[b])).expect("non-empty grid");
    let (mut a, mut b) = (best, best);
    while a > 0 && spread[a - 1] < opts.window_spread {
        a -= 1;
    }
    while b + 1 < grid.len() && spread[b + 1] < opts.window_spread {
        b += 1;
    }
    let enough = |a: usize, b: usize| curves.iter().all(|c| points_in(c, (grid[a], grid[b])) >= opts.min_window_points);
    while !enough(a, b) && (a > 0 || b + 1 < grid.len()) {
        a = a.saturating_sub(1);
        b = (b + 1).min(grid.len() - 1);
    }
    Ok((grid[a], grid[b]))
}

/// Summed squared residual of one least-squares line through `(x, g)`.
fn linear_fit_residual(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return syy;
    }
    (syy - sxy * sxy / sxx).max(0.0)
}

fn windowed(curves: &[BinderCurve], window: (f64, f64)) -> Vec<(f64, f64, f64)> {
    let eps = 1e-12 * (1.0 + window.1.abs());
    curves
        .iter()
        .flat_map(|c| {
            c.points
                .iter()
                .filter(move |p| p.0 >= window.0 - eps && p.0 <= window.1 + eps)
                .map(move |p| (c.side_length as f64, p.0, p.1))
        })
        .collect()
}

/// Residual of the shared linear fit at one `(Γ_c, ν)`.
pub fn collapse_residual(curves: &[BinderCurve], window: (f64, f64), gamma_c: f64, nu: f64) -> f64 {
    residual_of(&windowed(curves, window), gamma_c, nu)
}

fn residual_of(data: &[(f64, f64, f64)], gamma_c: f64, nu: f64) -> f64 {
    let pts: Vec<(f64, f64)> = data.iter().map(|&(l, g, y)| (l.powf(1.0 / nu) * (g - gamma_c), y)).collect();
    linear_fit_residual(&pts)
}

/// `(x, g, L)` of the collapsed points at the given result.
pub fn collapsed_points(curves: &[BinderCurve], result: &CollapseResult) -> Vec<(f64, f64, usize)> {
    windowed(curves, result.window)
        .into_iter()
        .map(|(l, g, y)| (l.powf(1.0 / result.nu) * (g - result.gamma_c), y, l as usize))
        .collect()
}

fn default_nu_grid() -> Vec<f64> {
    (0..=150).map(|i| 0.5 + 0.01 * i as f64).collect()
}

/// Grid search for the `(Γ_c, ν)` that best collapses `g` onto one line in
/// `x = L^{1/ν}(Γ − Γ_c)`.
pub fn data_collapse(curves: &[BinderCurve], opts: &CollapseOptions) -> Result<CollapseResult> {
    if curves.len() < 2 {
        return Err(invalid("data collapse needs at least two curves"));
    }
    for c in curves {
        c.validate()?;
    }
    let window = match opts.window {
        Some(w) => w,
        None => select_window(curves, opts)?,
    };
    if !(window.0 <= window.1) || !window.0.is_finite() || !window.1.is_finite() {
        return Err(Error::InvalidWindow(format!("window {window:?} is empty")));
    }
    for c in curves {
        if points_in(c, window) < 3 {
            return Err(Error::InvalidWindow(format!(
                "curve L={} has fewer than 3 points in {window:?}",
                c.side_length
            )));
        }
    }
    let gamma_grid = match &opts.gamma_grid {
        Some(g) => g.clone(),
        None => {
            let step = finest_spacing(curves) / 4.0;
            let n = ((window.1 - window.0) / step).round() as usize;
            (0..=n).map(|i| window.0 + (window.1 - window.0) * i as f64 / n.max(1) as f64).collect()
        }
    };
    let nu_grid = opts.nu_grid.clone().unwrap_or_else(default_nu_grid);
    if gamma_grid.is_empty() || nu_grid.is_empty() || nu_grid.iter().any(|&v| v <= 0.0) {
        return Err(invalid("collapse grids must be non-empty with ν > 0"));
    }
    let data = windowed(curves, window);
    let (res, gi, ni) = gamma_grid
        .par_iter()
        .enumerate()
        .map(|(gi, &gc)| {
            let (ni, r) = nu_grid
                .iter()
                .enumerate()
                .map(|(ni, &nu)| (ni, residual_of(&data, gc, nu)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty ν grid");
            (r, gi, ni)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty Γ grid");
    let mut best = CollapseResult { gamma_c: gamma_grid[gi], nu: nu_grid[ni], residual: res, window };
    if opts.refine {
        let step = |grid: &[f64], i: usize| {
            let l = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let r = if i + 1 < grid.len() { grid[i + 1] - grid[i] } else { 0.0 };
            l.max(r)
        };
        best = refine_collapse(&data, best, step(&gamma_grid, gi), step(&nu_grid, ni));
    }
    Ok(best)
}

/// Compass search within one grid cell of the starting point.
fn refine_collapse(data: &[(f64, f64, f64)], start: CollapseResult, dg: f64, dn: f64) -> CollapseResult {
    let (g0, n0) = (start.gamma_c, start.nu);
    let (mut g, mut n, mut r) = (g0, n0, start.residual);
    let (mut sg, mut sn) = (dg / 2.0, dn / 2.0);
    for _ in 0..200 {
        let mut moved = false;
        for (cg, cn) in [(g + sg, n), (g - sg, n), (g, n + sn), (g, n - sn)] {
            if (cg - g0).abs() > dg || (cn - n0).abs() > dn || cn <= 0.0 {
                continue;
            }
            let cr = residual_of(data, cg, cn);
            if cr < r {
                (g, n, r, moved) = (cg, cn, cr, true);
            }
        }
        if !moved {
            sg /= 2.0;
            sn /= 2.0;
            if sg < 1e-10 * dg.max(1e-300) && sn < 1e-10 * dn.max(1e-300) {
                break;
            }
        }
    }
    CollapseResult { gamma_c: g, nu: n, residual: r, window: start.window }
}

/// Pointwise mean and standard error over realizations sharing one Γ grid.
pub fn realization_average(curves: &[BinderCurve]) -> Result<BinderCurve> {
    let first = curves.first().ok_or_else(|| Error::InsufficientData("no realizations".into()))?;
    if curves.len() < 2 {
        return Err(Error::InsufficientData("need at least two realizations".into()));
    }
    for c in curves {
        if c.side_length != first.side_length {
            return Err(Error::Alignment("realizations differ in L".into()));
        }
        if c.points.len() != first.points.len()
            || c.points.iter().zip(&first.points).any(|(a, b)| (a.0 - b.0).abs() > 1e-12 * (1.0 + b.0.abs()))
        {
            return Err(Error::Alignment("realizations use different Γ grids".into()));
        }
    }
    let r = curves.len() as f64;
    let points = (0..first.points.len())
        .map(|i| {
            let x0 = first.points[i].1;
            let mean = x0 + curves.iter().map(|c| c.points[i].1 - x0).sum::<f64>() / r;
            let var = curves.iter().map(|c| (c.points[i].1 - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (first.points[i].0, mean, (var / r).sqrt())
        })
        .collect();
    BinderCurve::new(first.side_length, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `None` with only two points.
    pub slope_stderr: Option<f64>,
    pub intercept_stderr: Option<f64>,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `Γ_c(K) = slope·K + intercept`.
pub fn critical_shift_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("need at least two (K, Γ_c) points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::FitFailure("all abscissae are equal".into()));
    }
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    let (slope_stderr, intercept_stderr) = if points.len() > 2 {
        let ssr: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let s2 = ssr / (n - 2.0);
        (Some((s2 / sxx).sqrt()), Some((s2 * (1.0 / n + mx * mx / sxx)).sqrt()))
    } else {
        (None, None)
    };
    Ok(LinearFit { slope, intercept, slope_stderr, intercept_stderr })
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
}

pub fn ecdf(samples: &[f64]) -> Result<Ecdf> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("ECDF of no samples".into()));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid("ECDF samples contain NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Ecdf { sorted })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu: f64,
    pub sigma: f64,
    /// Summed squared CDF mismatch at the sample points.
    pub residual: f64,
}

fn cdf_loss(sorted: &[f64], targets: &[f64], mu: f64, sigma: f64) -> f64 {
    let Ok(n) = Normal::new(mu, sigma) else { return f64::INFINITY };
    sorted.iter().zip(targets).map(|(&x, &f)| (f - n.cdf(x)).powi(2)).sum()
}

/// Normal `(μ, σ)` whose CDF best matches the empirical CDF in least squares
/// at the sample points: a grid scaled by the sample moments, then compass
/// search.
pub fn normal_cdf_fit(samples: &[f64]) -> Result<NormalFit> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData("normal fit needs at least 3 samples".into()));
    }
    let e = ecdf(samples)?;
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::FitFailure("samples have zero variance".into()));
    }
    let sorted = e.samples();
    let targets: Vec<f64> = sorted.iter().map(|&x| e.eval(x)).collect();
    let loss = |mu: f64, sigma: f64| cdf_loss(sorted, &targets, mu, sigma);

    let mut best = (mean, sd, f64::INFINITY);
    for i in 0..=40 {
        let mu = mean + sd * (-2.0 + 0.1 * i as f64);
        for j in 0..=40 {
            let sigma = sd * (0.2 + 0.07 * j as f64);
            let l = loss(mu, sigma);
            if l < best.2 {
                best = (mu, sigma, l);
            }
        }
    }
    let (mut mu, mut sigma, mut l) = best;
    let (mut smu, mut ssig) = (0.1 * sd, 0.07 * sd);
    while smu > 1e-10 * sd {
        let mut moved = false;
        for (cm, cs) in [(mu + smu, sigma), (mu - smu, sigma), (mu, sigma + ssig), (mu, sigma - ssig)] {
            if cs <= 0.0 {
                continue;
            }
            let cl = loss(cm, cs);
            if cl < l {
                (mu, sigma, l, moved) = (cm, cs, cl, true);
            }
        }
        if !moved {
            smu /= 2.0;
            ssig /= 2.0;
        }
    }
    Ok(NormalFit { mu, sigma, residual: l })
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Percentile bootstrap interval of `statistic`.
pub fn bootstrap_ci<F: Fn(&[f64]) -> f64>(
    samples: &[f64],
    statistic: F,
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least 2 samples".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples < 2 {
        return Err(invalid("bootstrap needs 0 < level < 1 and at least 2 resamples"));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut buf = vec![0.0; samples.len()];
    let mut reps: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = samples[rng.random_range(0..samples.len())];
            }
            statistic(&buf)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&reps, a), quantile_sorted(&reps, 1.0 - a)))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Curves generated exactly from `g = 0.5 − 0.1·L^{1/ν}(Γ − Γc)`.
    fn synthetic(gc: f64, nu: f64, sizes: &[usize]) -> Vec<BinderCurve> {
        sizes
            .iter()
            .map(|&l| {
                let pts = (0..21)
                    .map(|i| {
                        let g = 2.5 + 0.05 * i as f64;
                        (g, 0.5 - 0.1 * (l as f64).powf(1.0 / nu) * (g - gc), 0.01)
                    })
                    .collect();
                BinderCurve::new(l, pts).unwrap()
            })
            .collect()
    }

    #[test]
    fn curve_validation_and_interpolation() {
        assert!(BinderCurve::new(4, vec![(1.0, 0.5, 0.0), (1.0, 0.4, 0.0)]).is_err());
        let c = BinderCurve::new(4, vec![(1.0, 1.0, 0.0), (2.0, 3.0, 0.0), (4.0, 3.0, 0.0)]).unwrap();
        assert_eq!(c.value_at(1.5, Interpolation::Linear), Some(2.0));
        assert_eq!(c.value_at(4.0, Interpolation::Linear), Some(3.0));
        assert_eq!(c.value_at(0.5, Interpolation::Linear), None);
        // spline passes through knots and reproduces a straight line
        assert!((c.value_at(2.0, Interpolation::Cubic).unwrap() - 3.0).abs() < 1e-12);
        let line = BinderCurve::new(4, (0..6).map(|i| (i as f64, 2.0 * i as f64 + 1.0, 0.0)).collect()).unwrap();
        assert!((line.value_at(2.7, Interpolation::Cubic).unwrap() - 6.4).abs() < 1e-12);
        // natural spline through a cubic is close in the interior
        let cubic = BinderCurve::new(4, (0..41).map(|i| {
            let x = i as f64 * 0.05;
            (x, x.sin(), 0.0)
        }).collect()).unwrap();
        assert!((cubic.value_at(1.01, Interpolation::Cubic).unwrap() - 1.01f64.sin()).abs() < 1e-6);
    }

    #[test]
    fn collapse_recovers_synthetic_parameters() {
        let curves = synthetic(2.86, 1.0, &[6, 8, 10]);
        let opts = CollapseOptions { window: Some((2.7, 3.0)), ..Default::default() };
        let r = data_collapse(&curves, &opts).unwrap();
        assert!((r.gamma_c - 2.86).abs() <= 0.0125 + 1e-9, "{r:?}");
        assert!((r.nu - 1.0).abs() <= 0.01 + 1e-9, "{r:?}");
        assert!(r.residual < 1e-3);
        assert!(r.gamma_c >= r.window.0 && r.gamma_c <= r.window.1);

        let refined = data_collapse(&curves, &CollapseOptions { refine: true, ..opts.clone() }).unwrap();
        assert!(refined.residual <= r.residual);
        assert!((refined.gamma_c - 2.86).abs() < 1e-4 && (refined.nu - 1.0).abs() < 1e-3, "{refined:?}");

        let other = synthetic(2.7, 0.8, &[8, 12, 16]);
        let r = data_collapse(&other, &CollapseOptions { window: Some((2.55, 2.85)), ..Default::default() }).unwrap();
        assert!((r.gamma_c - 2.7).abs() <= 0.0125 + 1e-9 && (r.nu - 0.8).abs() <= 0.01 + 1e-9, "{r:?}");
    }

    #[test]
    fn collapse_result_is_grid_local_minimum() {
        let mut curves = synthetic(2.9, 1.2, &[6, 8, 10]);
        // small deterministic noise
        for (k, c) in curves.iter_mut().enumerate() {
            for (i, p) in c.points.iter_mut().enumerate() {
                p.1 += 0.003 * (((i * 7 + k * 3) % 5) as f64 - 2.0);
            }
        }
        let gg: Vec<f64> = (0..=40).map(|i| 2.75 + 0.005 * i as f64).collect();
        let ng: Vec<f64> = (0..=150).map(|i| 0.5 + 0.01 * i as f64).collect();
        let opts = CollapseOptions {
            gamma_grid: Some(gg.clone()),
            nu_grid: Some(ng.clone()),
            window: Some((2.75, 3.05)),
            ..Default::default()
        };
        let r = data_collapse(&curves, &opts).unwrap();
        let gi = gg.iter().position(|&g| g == r.gamma_c).unwrap();
        let ni = ng.iter().position(|&n| n == r.nu).unwrap();
        for dg in [-1i64, 0, 1] {
            for dn in [-1i64, 0, 1] {
                let (a, b) = (gi as i64 + dg, ni as i64 + dn);
                if a < 0 || b < 0 || a as usize >= gg.len() || b as usize >= ng.len() {
                    continue;
                }
                let nb = collapse_residual(&curves, r.window, gg[a as usize], ng[b as usize]);
                assert!(nb >= r.residual);
            }
        }
    }

    #[test]
    fn collapse_invariances() {
        let curves = synthetic(2.86, 1.0, &[6, 8, 10]);
        let opts = CollapseOptions { window: Some((2.7, 3.0)), ..Default::default() };
        let base = data_collapse(&curves, &opts).unwrap();
        let mut rev = curves.clone();
        rev.reverse();
        assert_eq!(data_collapse(&rev, &opts).unwrap(), base);
        let shifted: Vec<BinderCurve> = curves
            .iter()
            .map(|c| BinderCurve::new(c.side_length, c.points.iter().map(|p| (p.0, p.1 + 0.3, p.2)).collect()).unwrap())
            .collect();
        let s = data_collapse(&shifted, &opts).unwrap();
        assert_eq!((s.gamma_c, s.nu), (base.gamma_c, base.nu));
        assert!((s.residual - base.residual).abs() < 1e-9);
    }

    #[test]
    fn scrambled_curves_collapse_badly() {
        let curves = synthetic(2.86, 1.0, &[6, 8, 10]);
        let opts = CollapseOptions { window: Some((2.7, 3.0)), ..Default::default() };
        let good = data_collapse(&curves, &opts).unwrap();
        // swap the L labels of the g values
        let scrambled: Vec<BinderCurve> = [10usize, 6, 8]
            .iter()
            .zip(&curves)
            .map(|(&l, c)| BinderCurve::new(l, c.points.clone()).unwrap())
            .collect();
        let bad = data_collapse(&scrambled, &opts).unwrap();
        assert!(bad.residual > 100.0 * good.residual.max(1e-6), "{bad:?} vs {good:?}");
    }

    #[test]
    fn collapse_errors() {
        let curves = synthetic(2.86, 1.0, &[6, 8]);
        let narrow = CollapseOptions { window: Some((2.7, 2.72)), ..Default::default() };
        assert!(matches!(data_collapse(&curves, &narrow), Err(Error::InvalidWindow(_))));
        let inverted = CollapseOptions { window: Some((3.0, 2.7)), ..Default::default() };
        assert!(matches!(data_collapse(&curves, &inverted), Err(Error::InvalidWindow(_))));
        assert!(data_collapse(&curves[..1], &CollapseOptions::default()).is_err());
    }

    #[test]
    fn automatic_window_brackets_crossing() {
        let curves = synthetic(2.86, 1.0, &[6, 8, 10]);
        let opts = CollapseOptions::default();
        let w = select_window(&curves, &opts).unwrap();
        assert!(w.0 <= 2.86 && 2.86 <= w.1, "{w:?}");
        assert!(curves.iter().all(|c| points_in(c, w) >= 4));
        let r = data_collapse(&curves, &opts).unwrap();
        assert_eq!(r.window, w);
        assert!((r.gamma_c - 2.86).abs() < 0.0125 + 1e-9, "{r:?}");
    }

    #[test]
    fn realization_average_cases() {
        let c = BinderCurve::new(6, vec![(1.0, 0.4, 0.0), (2.0, 0.6, 0.0)]).unwrap();
        let avg = realization_average(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(avg.points, vec![(1.0, 0.4, 0.0), (2.0, 0.6, 0.0)]);

        let mut rng = SimRng::seed_from_u64(8);
        let sigma = 0.05;
        let mut ratios = Vec::new();
        for _ in 0..40 {
            let reals: Vec<BinderCurve> = (0..30)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    BinderCurve::new(6, vec![(1.0, 0.5 + sigma * z, 0.0)]).unwrap()
                })
                .collect();
            ratios.push(realization_average(&reals).unwrap().points[0].2 / (sigma / 30f64.sqrt()));
        }
        let mean_ratio = mean(&ratios);
        assert!((mean_ratio - 1.0).abs() < 0.2, "{mean_ratio}");

        let other = BinderCurve::new(6, vec![(1.0, 0.4, 0.0), (2.5, 0.6, 0.0)]).unwrap();
        assert!(matches!(realization_average(&[c.clone(), other]), Err(Error::Alignment(_))));
        assert!(realization_average(&[c]).is_err());
    }

    #[test]
    fn realization_errors_shrink_with_count() {
        let mut rng = SimRng::seed_from_u64(3);
        let mut err = |r: usize| {
            let reps: Vec<f64> = (0..200)
                .map(|_| {
                    let reals: Vec<BinderCurve> = (0..r)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            BinderCurve::new(6, vec![(1.0, z, 0.0)]).unwrap()
                        })
                        .collect();
                    realization_average(&reals).unwrap().points[0].2
                })
                .collect();
            mean(&reps)
        };
        let (e16, e64) = (err(16), err(64));
        assert!((e16 / e64 - 2.0).abs() < 0.2, "{e16} {e64}");
    }

    #[test]
    fn critical_shift_fit_cases() {
        let f = critical_shift_fit(&[(1.0, 2.86), (3.0, 2.98)]).unwrap();
        assert!((f.eval(1.0) - 2.86).abs() < 1e-12 && (f.eval(3.0) - 2.98).abs() < 1e-12);
        assert_eq!(f.slope_stderr, None);

        let mut rng = SimRng::seed_from_u64(4);
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let k = 1.0 + 0.1 * i as f64;
                let z: f64 = StandardNormal.sample(&mut rng);
                (k, 0.06 * k + 2.8 + 0.002 * z)
            })
            .collect();
        let f = critical_shift_fit(&pts).unwrap();
        let se = f.slope_stderr.unwrap();
        assert!((f.slope - 0.06).abs() < 4.0 * se, "{f:?}");
        assert!(se > 0.0 && se < 0.01);
        assert!(matches!(critical_shift_fit(&[(2.0, 1.0), (2.0, 3.0)]), Err(Error::FitFailure(_))));
        assert!(critical_shift_fit(&[(2.0, 1.0)]).is_err());
    }

    #[test]
    fn ecdf_cases() {
        let f = ecdf(&[0.7]).unwrap();
        assert_eq!((f.eval(0.69), f.eval(0.7)), (0.0, 1.0));
        let f = ecdf(&[3.0, 1.0, 2.0]).unwrap();
        assert!((f.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.eval(f64::NEG_INFINITY), 0.0);
        assert_eq!(f.eval(f64::INFINITY), 1.0);
        assert!(ecdf(&[]).is_err());
    }

    #[test]
    fn normal_fit_cases() {
        let mut rng = SimRng::seed_from_u64(17);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = normal_cdf_fit(&xs).unwrap();
        assert!(f.mu.abs() < 0.05 && (f.sigma - 1.0).abs() < 0.05, "{f:?}");

        let small: Vec<f64> = xs[..200].to_vec();
        let base = normal_cdf_fit(&small).unwrap();
        let t: Vec<f64> = small.iter().map(|x| 2.5 * x - 1.0).collect();
        let ft = normal_cdf_fit(&t).unwrap();
        assert!((ft.mu - (2.5 * base.mu - 1.0)).abs() < 1e-6, "{ft:?} {base:?}");
        assert!((ft.sigma - 2.5 * base.sigma).abs() < 1e-6);

        assert!(matches!(normal_cdf_fit(&[1.0, 1.0, 1.0]), Err(Error::FitFailure(_))));
        assert!(normal_cdf_fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn bootstrap_cases() {
        assert_eq!(bootstrap_ci(&[2.0; 10], mean, 0.95, 1000, 1).unwrap(), (2.0, 2.0));
        let mut rng = SimRng::seed_from_u64(12);
        let xs: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&xs, mean, 0.95, 10_000, 5).unwrap();
        assert!(((hi - lo) - 0.196).abs() < 0.2 * 0.196, "{lo} {hi}");
        assert!(lo < mean(&xs) && mean(&xs) < hi);
        assert_eq!(bootstrap_ci(&xs, mean, 0.95, 500, 9).unwrap(), bootstrap_ci(&xs, mean, 0.95, 500, 9).unwrap());
        assert!(bootstrap_ci(&[1.0], mean, 0.95, 100, 1).is_err());
    }

    proptest! {
        #[test]
        fn ecdf_at_samples_is_rank(mut xs in proptest::collection::vec(-100i32..100, 1..50)) {
            let v: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            let f = ecdf(&v).unwrap();
            xs.sort();
            for (i, &x) in xs.iter().enumerate() {
                // ties: value at x counts every copy
                let last = xs.iter().rposition(|&y| y == x).unwrap();
                prop_assert!(f.eval(x as f64) == (last + 1) as f64 / xs.len() as f64);
                prop_assert!(f.eval(x as f64) >= (i + 1) as f64 / xs.len() as f64);
            }
        }

        #[test]
        fn two_point_fit_interpolates(x0 in -5.0f64..5.0, dx in 0.1f64..5.0, y0 in -5.0f64..5.0, y1 in -5.0f64..5.0) {
            let f = critical_shift_fit(&[(x0, y0), (x0 + dx, y1)]).unwrap();
            prop_assert!((f.eval(x0) - y0).abs() < 1e-9);
            prop_assert!((f.eval(x0 + dx) - y1).abs() < 1e-9);
        }
    }
}
