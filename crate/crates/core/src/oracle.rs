//! Exact dense thermal statistics for small systems, and the closed-form
//! two-spin chain-breaking estimate built on top of them.
//!
//! Basis convention: bit `i` of a basis index is clear when qubit `i` points
//! up (`σᶻ = +1`).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::embedding::EmbeddedProblem;
use crate::error::{invalid, Error, Result};
use crate::model::{bond_energy, Bond, ModelParams, SpinConfig};
use crate::observables::staggered_magnetization_raw;

/// Largest qubit count accepted by the dense routines unless overridden.
pub const DEFAULT_DENSE_CAP: usize = 12;

/// Diagonal of `e^{−βH}` in the computational basis.
///
/// Weights are stored relative to `e^{−βE₀}` (`E₀` the ground energy) so that
/// large `β` does not overflow; `log_scale = −βE₀` restores absolute values.
#[derive(Debug, Clone)]
pub struct DenseGibbs {
    pub weights: Vec<f64>,
    pub partition: f64,
    pub log_scale: f64,
}

impl DenseGibbs {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.partition).collect()
    }

    /// `ln Tr e^{−βH}`.
    pub fn log_partition(&self) -> f64 {
        self.partition.ln() + self.log_scale
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap || n >= usize::BITS as usize {
        return Err(Error::SizeLimit { qubits: n, cap });
    }
    Ok(())
}

/// `H = −Γ Σ Xᵢ + Δ Σ J Zᵢ Zⱼ + Σ hᵢ Zᵢ` on `n` qubits.
pub fn dense_hamiltonian_with_fields(
    bonds: &[Bond],
    fields: &[f64],
    n: usize,
    params: &ModelParams,
    cap: usize,
) -> Result<DMatrix<f64>> {
    check_cap(n, cap)?;
    params.validate()?;
    if !fields.is_empty() && fields.len() != n {
        return Err(invalid(format!("{} fields for {n} qubits", fields.len())));
    }
    if let Some(b) = bonds.iter().find(|b| b.i >= n || b.j >= n) {
        return Err(invalid(format!("bond ({}, {}) out of range for {n} qubits", b.i, b.j)));
    }
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for z in 0..dim {
        let cfg = SpinConfig::from_index(z, n);
        let spins = cfg.spins();
        let field: f64 = fields.iter().zip(spins).map(|(h, &s)| h * f64::from(s)).sum();
        h[(z, z)] = bond_energy(bonds, spins, params.delta) + field;
        if params.gamma != 0.0 {
            for i in 0..n {
                h[(z, z ^ (1 << i))] = -params.gamma;
            }
        }
    }
    Ok(h)
}

/// Transverse-field Ising Hamiltonian `−Γ Σ Xᵢ + Δ Σ J Zᵢ Zⱼ`.
pub fn dense_hamiltonian(bonds: &[Bond], n: usize, params: &ModelParams, cap: usize) -> Result<DMatrix<f64>> {
    dense_hamiltonian_with_fields(bonds, &[], n, params, cap)
}

/// Diagonal Gibbs weights via the symmetric eigendecomposition of `H`.
pub fn gibbs_diagonal(h: &DMatrix<f64>, beta: f64) -> Result<DenseGibbs> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be > 0, got {beta}")));
    }
    if !h.is_square() {
        return Err(invalid("Hamiltonian is not square"));
    }
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-12 * scale {
        return Err(invalid("Hamiltonian is not symmetric"));
    }
    let eig = SymmetricEigen::new(h.clone());
    let e0 = eig.eigenvalues.min();
    let boltz: Vec<f64> = eig.eigenvalues.iter().map(|&e| (-beta * (e - e0)).exp()).collect();
    let v = &eig.eigenvectors;
    let dim = h.nrows();
    let weights: Vec<f64> = (0..dim)
        .map(|z| (0..dim).map(|i| v[(z, i)] * v[(z, i)] * boltz[i]).sum())
        .collect();
    let partition = weights.iter().sum();
    Ok(DenseGibbs { weights, partition, log_scale: -beta * e0 })
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// Kept as an independent cross-check on [`gibbs_diagonal`]; it does not
/// guard against overflow and should only be used for modest `‖A‖`.
pub fn expm_scaling_squaring(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let dim = a.nrows();
    let mut result = DMatrix::identity(dim, dim);
    let mut term = DMatrix::identity(dim, dim);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() < 1e-18 * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact thermal distribution of an embedded problem, projected onto the
/// logical subspace and expressed over native configurations.
#[derive(Debug, Clone)]
pub struct LogicalDistribution {
    /// `P̃_z` for every native configuration index `z`, normalized to 1.
    pub probabilities: Vec<f64>,
    /// Gibbs mass of the logical subspace, `P_L`.
    pub logical_probability: f64,
    pub num_logical: usize,
}

impl LogicalDistribution {
    pub fn expectation<F: Fn(&SpinConfig) -> f64>(&self, f: F) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(z, p)| p * f(&SpinConfig::from_index(z, self.num_logical)))
            .sum()
    }
}

pub fn logical_distribution(embedded: &EmbeddedProblem, params: &ModelParams, cap: usize) -> Result<LogicalDistribution> {
    let n_phys = embedded.num_physical();
    let h = dense_hamiltonian(&embedded.all_bonds, n_phys, params, cap)?;
    let gibbs = gibbs_diagonal(&h, params.beta)?;
    let n = embedded.num_logical();
    let weights: Vec<f64> = (0..1usize << n)
        .map(|z| {
            let native = SpinConfig::from_index(z, n);
            let phys = embedded.embed_config(&native).expect("length matches");
            gibbs.weights[phys.to_index()]
        })
        .collect();
    let logical_mass: f64 = weights.iter().sum();
    Ok(LogicalDistribution {
        probabilities: weights.iter().map(|w| w / logical_mass).collect(),
        logical_probability: logical_mass / gibbs.partition,
        num_logical: n,
    })
}

/// `P_L = Σ_{z_L} ⟨z_L|e^{−βH̃}|z_L⟩ / Z̃`.
pub fn logical_probability_exact(embedded: &EmbeddedProblem, params: &ModelParams, cap: usize) -> Result<f64> {
    Ok(logical_distribution(embedded, params, cap)?.logical_probability)
}

/// Exact logical-subspace expectations of the diagonal observables the QMC
/// engine measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactObservables {
    pub logical_probability: f64,
    /// `⟨H_Δ⟩`: native diagonal energy of the unembedded configuration.
    pub energy: f64,
    pub abs_magnetization: f64,
    pub m2: f64,
    pub m4: f64,
}

impl ExactObservables {
    pub fn binder(&self) -> f64 {
        1.0 - self.m4 / (3.0 * self.m2 * self.m2)
    }
}

pub fn exact_observables(embedded: &EmbeddedProblem, params: &ModelParams, cap: usize) -> Result<ExactObservables> {
    let dist = logical_distribution(embedded, params, cap)?;
    let native = &embedded.native;
    let parities = native.parities();
    let m = |c: &SpinConfig| staggered_magnetization_raw(c.spins(), &parities);
    Ok(ExactObservables {
        logical_probability: dist.logical_probability,
        energy: dist.expectation(|c| bond_energy(&native.bonds, c.spins(), params.delta)),
        abs_magnetization: dist.expectation(|c| m(c).abs()),
        m2: dist.expectation(|c| m(c).powi(2)),
        m4: dist.expectation(|c| m(c).powi(4)),
    })
}

fn check_two_chain(beta: f64, delta: f64, j_f: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be > 0, got {beta}")));
    }
    if !(delta >= 0.0 && gamma >= 0.0 && j_f.is_finite()) {
        return Err(invalid("two-chain parameters out of range"));
    }
    Ok(())
}

/// Logical probability of a two-spin chain `−Γ(X₁+X₂) + ΔJ_F Z₁Z₂ + h(Z₁+Z₂)`
/// evaluated with the dense oracle.
pub fn p_l_two_chain_dense(gamma: f64, delta: f64, j_f: f64, beta: f64, h: f64) -> Result<f64> {
    check_two_chain(beta, delta, j_f, gamma)?;
    let params = ModelParams::with_delta(gamma, delta, beta)?;
    let ham = dense_hamiltonian_with_fields(&[Bond::new(0, 1, j_f)], &[h, h], 2, &params, 2)?;
    let g = gibbs_diagonal(&ham, beta)?;
    // indices 0 (↑↑) and 3 (↓↓) are the aligned states
    Ok((g.weights[0] + g.weights[3]) / g.partition)
}

/// Probability that a two-spin chain is unbroken.
///
/// For `h = 0` this is the closed form with `E = √(4Γ² + Δ²J_F²)`; otherwise
/// the dense 4×4 oracle is used.
pub fn p_l_two_chain(gamma: f64, delta: f64, j_f: f64, beta: f64, h: f64) -> Result<f64> {
    check_two_chain(beta, delta, j_f, gamma)?;
    if h != 0.0 {
        return p_l_two_chain_dense(gamma, delta, j_f, beta, h);
    }
    let a = delta * j_f.abs();
    let e = (4.0 * gamma * gamma + a * a).sqrt();
    if e == 0.0 {
        return Ok(0.5);
    }
    // numerator and denominator both scaled by e^{−m}
    let m = beta * e.max(a);
    let sinh_e = 0.5 * ((beta * e - m).exp() - (-beta * e - m).exp());
    let cosh_e = 0.5 * ((beta * e - m).exp() + (-beta * e - m).exp());
    let cosh_a = 0.5 * ((beta * a - m).exp() + (-beta * a - m).exp());
    let num = a * sinh_e + e * cosh_e + e * (beta * a - m).exp();
    let den = 2.0 * e * (cosh_e + cosh_a);
    Ok(num / den)
}

/// `P_L ≈ p_l^{N(K−1)}`, treating chain breaks as independent.
pub fn p_l_ansatz(p_l: f64, n: usize, k: f64) -> Result<f64> {
    if !(p_l > 0.0 && p_l <= 1.0) {
        return Err(invalid(format!("p_l must lie in (0, 1], got {p_l}")));
    }
    if !(k >= 1.0) {
        return Err(invalid(format!("K must be >= 1, got {k}")));
    }
    Ok(p_l.powf(n as f64 * (k - 1.0)))
}

#[derive(Debug, Clone, Copy)]
pub struct MeanFieldFitOptions {
    pub h_max: f64,
    pub grid_points: usize,
    pub tolerance: f64,
}

impl Default for MeanFieldFitOptions {
    fn default() -> Self {
        Self { h_max: 2.0, grid_points: 81, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldFit {
    pub h: f64,
    pub residual: f64,
}

/// Fits the mean-field `h` so that `p_l(Γ; h)^{N(K−1)}` matches observed
/// `(Γ, P_L)` points in unweighted least squares (`Δ = 1`).
pub fn fit_mean_field_h(
    observed: &[(f64, f64)],
    n: usize,
    k: f64,
    j_f: f64,
    beta: f64,
    opts: MeanFieldFitOptions,
) -> Result<MeanFieldFit> {
    if observed.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points, need >= 3", observed.len())));
    }
    if observed.iter().any(|&(_, p)| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid("observed P_L must lie in (0, 1]"));
    }
    let first = observed[0].1;
    if observed.iter().all(|&(_, p)| (p - first).abs() < 1e-15) {
        return Err(Error::FitFailure("all observed P_L values are equal".into()));
    }
    let loss = |h: f64| -> Result<f64> {
        let mut s = 0.0;
        for &(gamma, p_obs) in observed {
            let p = p_l_ansatz(p_l_two_chain(gamma, 1.0, j_f, beta, h)?, n, k)?;
            s += (p - p_obs).powi(2);
        }
        Ok(s)
    };
    let steps = opts.grid_points.max(3) - 1;
    let dh = opts.h_max / steps as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=steps {
        let v = loss(i as f64 * dh)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut lo = (best.0 as f64 - 1.0).max(0.0) * dh;
    let mut hi = ((best.0 + 1).min(steps)) as f64 * dh;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = loss(x1)?;
    let mut f2 = loss(x2)?;
    while hi - lo > opts.tolerance {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = loss(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = loss(x2)?;
        }
    }
    let h = 0.5 * (lo + hi);
    let residual = loss(h)?;
    if !residual.is_finite() {
        return Err(Error::FitFailure("non-finite residual".into()));
    }
    Ok(MeanFieldFit { h, residual })
}
