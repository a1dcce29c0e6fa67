//! Native square-lattice antiferromagnet and its diagonal energy.
//!
//! Energies, fields and temperatures are dimensionless, measured in units of
//! the coupling scale Δ. `ModelParams::delta` multiplies every bond and is 1
//! unless a caller deliberately switches the couplings off.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One two-body `σᶻσᶻ` term between sites `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub coupling: f64,
}

impl Bond {
    pub fn new(i: usize, j: usize, coupling: f64) -> Self {
        Self { i, j, coupling }
    }
}

impl From<(usize, usize, f64)> for Bond {
    fn from((i, j, coupling): (usize, usize, f64)) -> Self {
        Self { i, j, coupling }
    }
}

impl From<Bond> for (usize, usize, f64) {
    fn from(b: Bond) -> Self {
        (b.i, b.j, b.coupling)
    }
}

/// A native (logical) Ising problem on a planar lattice with free boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativeProblem {
    /// Side length for square lattices; `None` for hand-built graphs.
    #[serde(rename = "L")]
    pub side_length: Option<usize>,
    pub bonds: Vec<Bond>,
    pub coords: Vec<(i64, i64)>,
}

impl NativeProblem {
    /// `L × L` antiferromagnet with unit couplings. Site `(x, y)` has index
    /// `y * L + x`.
    pub fn square_lattice_afm(side_length: usize) -> Result<Self> {
        if side_length < 2 {
            return Err(invalid(format!("side length must be >= 2, got {side_length}")));
        }
        let l = side_length;
        let mut coords = Vec::with_capacity(l * l);
        for y in 0..l {
            for x in 0..l {
                coords.push((x as i64, y as i64));
            }
        }
        let mut bonds = Vec::with_capacity(2 * l * (l - 1));
        for y in 0..l {
            for x in 0..l {
                let i = y * l + x;
                if x + 1 < l {
                    bonds.push(Bond::new(i, i + 1, 1.0));
                }
                if y + 1 < l {
                    bonds.push(Bond::new(i, i + l, 1.0));
                }
            }
        }
        Ok(Self { side_length: Some(l), bonds, coords })
    }

    /// Arbitrary problem from explicit coordinates and bonds, e.g. a two-site
    /// dimer or an isolated spin used in small exact checks.
    pub fn from_parts(coords: Vec<(i64, i64)>, bonds: Vec<Bond>) -> Result<Self> {
        let p = Self { side_length: None, bonds, coords };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 {
            return Err(invalid("problem has no sites"));
        }
        for b in &self.bonds {
            if b.i >= n || b.j >= n || b.i == b.j {
                return Err(invalid(format!("bond ({}, {}) out of range for {n} sites", b.i, b.j)));
            }
            if !b.coupling.is_finite() {
                return Err(invalid("non-finite coupling"));
            }
        }
        if let Some(l) = self.side_length {
            if n != l * l {
                return Err(invalid(format!("L = {l} but {n} sites")));
            }
        }
        Ok(())
    }

    pub fn num_sites(&self) -> usize {
        self.coords.len()
    }

    /// Checkerboard sign `(−1)^(x+y)` of every site.
    pub fn parities(&self) -> Vec<i8> {
        self.coords
            .iter()
            .map(|&(x, y)| if (x + y).rem_euclid(2) == 0 { 1 } else { -1 })
            .collect()
    }

    /// Minimum of the diagonal energy, `−Σ|J|`, valid for bipartite
    /// antiferromagnets such as the square lattice.
    pub fn neel_energy(&self, params: &ModelParams) -> f64 {
        -params.delta * self.bonds.iter().map(|b| b.coupling.abs()).sum::<f64>()
    }

    /// The Néel configuration aligned with the checkerboard parity.
    pub fn neel_state(&self) -> SpinConfig {
        SpinConfig(self.parities())
    }
}

/// Transverse field, coupling scale and inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: f64,
    pub delta: f64,
    pub beta: f64,
}

impl ModelParams {
    /// Parameters with the coupling scale fixed to 1.
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        Self::with_delta(gamma, 1.0, beta)
    }

    /// `delta = 0` is accepted so the decoupled limit can be checked; every
    /// production path uses `delta = 1`.
    pub fn with_delta(gamma: f64, delta: f64, beta: f64) -> Result<Self> {
        let p = Self { gamma, delta, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be finite and > 0, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Classical ±1 spin configuration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(invalid(format!("spin value {bad} is not ±1")));
        }
        Ok(Self(spins))
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    /// Spin `i` is `+1` when bit `i` of `index` is clear.
    pub fn from_index(index: usize, n: usize) -> Self {
        Self((0..n).map(|i| if index >> i & 1 == 0 { 1 } else { -1 }).collect())
    }

    pub fn to_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &s)| if s < 0 { acc | 1 << i } else { acc })
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }
}

/// Sum of `Δ·J·sᵢ·sⱼ` over a bond list.
pub fn bond_energy(bonds: &[Bond], spins: &[i8], delta: f64) -> f64 {
    delta
        * bonds
            .iter()
            .map(|b| b.coupling * f64::from(spins[b.i] * spins[b.j]))
            .sum::<f64>()
}

/// `Δ Σ_{⟨i,j⟩} J_ij sᵢ sⱼ` for a native configuration.
pub fn diagonal_energy(problem: &NativeProblem, config: &SpinConfig, params: &ModelParams) -> Result<f64> {
    if config.len() != problem.num_sites() {
        return Err(invalid(format!(
            "configuration has {} spins, problem has {}",
            config.len(),
            problem.num_sites()
        )));
    }
    Ok(bond_energy(&problem.bonds, config.spins(), params.delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> ModelParams {
        ModelParams::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn square_lattice_counts() {
        for (l, bonds) in [(2, 4), (3, 12), (10, 180)] {
            let p = NativeProblem::square_lattice_afm(l).unwrap();
            assert_eq!(p.num_sites(), l * l);
            assert_eq!(p.bonds.len(), bonds);
            assert_eq!(p.bonds.len(), 2 * l * (l - 1));
        }
    }

    #[test]
    fn bonds_are_nearest_neighbour_and_antiferromagnetic() {
        let p = NativeProblem::square_lattice_afm(5).unwrap();
        for b in &p.bonds {
            let (xi, yi) = p.coords[b.i];
            let (xj, yj) = p.coords[b.j];
            assert_eq!((xi - xj).abs() + (yi - yj).abs(), 1);
            assert!(b.coupling > 0.0);
        }
    }

    #[test]
    fn rejects_tiny_lattice() {
        assert!(NativeProblem::square_lattice_afm(1).is_err());
        assert!(NativeProblem::square_lattice_afm(0).is_err());
    }

    #[test]
    fn l2_energies() {
        let p = NativeProblem::square_lattice_afm(2).unwrap();
        let up = SpinConfig::all_up(4);
        assert_eq!(diagonal_energy(&p, &up, &unit()).unwrap(), 4.0);
        // checkerboard (+,−,−,+) in row-major order
        let neel = SpinConfig::new(vec![1, -1, -1, 1]).unwrap();
        assert_eq!(neel, p.neel_state());
        assert_eq!(diagonal_energy(&p, &neel, &unit()).unwrap(), -4.0);
    }

    #[test]
    fn l3_energy_matches_independent_neighbour_sum() {
        // independent oracle: walk the grid by coordinates, not the bond list
        let p = NativeProblem::square_lattice_afm(3).unwrap();
        let cfg = SpinConfig::new(vec![1, -1, -1, 1, 1, -1, 1, 1, -1]).unwrap();
        let s = |x: usize, y: usize| f64::from(cfg.spins()[y * 3 + x]);
        let mut oracle = 0.0;
        for y in 0..3 {
            for x in 0..3 {
                if x + 1 < 3 {
                    oracle += s(x, y) * s(x + 1, y);
                }
                if y + 1 < 3 {
                    oracle += s(x, y) * s(x, y + 1);
                }
            }
        }
        assert_eq!(diagonal_energy(&p, &cfg, &unit()).unwrap(), oracle);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = NativeProblem::square_lattice_afm(2).unwrap();
        assert!(diagonal_energy(&p, &SpinConfig::all_up(3), &unit()).is_err());
    }

    #[test]
    fn spin_values_are_validated() {
        assert!(SpinConfig::new(vec![1, 0, -1]).is_err());
        assert!(SpinConfig::new(vec![1, 2]).is_err());
    }

    #[test]
    fn params_are_validated() {
        assert!(ModelParams::new(-0.1, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.0).is_err());
        assert!(ModelParams::with_delta(1.0, -1.0, 1.0).is_err());
        assert!(ModelParams::with_delta(1.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn ground_state_by_exhaustive_search() {
        for l in 2..=4 {
            let p = NativeProblem::square_lattice_afm(l).unwrap();
            let n = p.num_sites();
            let mut best = f64::INFINITY;
            let mut minimizers = Vec::new();
            for idx in 0..1usize << n {
                let c = SpinConfig::from_index(idx, n);
                let e = diagonal_energy(&p, &c, &unit()).unwrap();
                if e < best - 1e-12 {
                    best = e;
                    minimizers.clear();
                }
                if (e - best).abs() < 1e-12 {
                    minimizers.push(c);
                }
            }
            assert_eq!(best, -2.0 * (l * (l - 1)) as f64);
            assert_eq!(best, p.neel_energy(&unit()));
            assert_eq!(minimizers.len(), 2);
            assert!(minimizers.contains(&p.neel_state()));
            assert!(minimizers.contains(&p.neel_state().flipped()));
        }
    }

    #[test]
    fn json_layout() {
        let p = NativeProblem::square_lattice_afm(2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["L"], 2);
        assert_eq!(v["bonds"][0], serde_json::json!([0, 1, 1.0]));
        assert_eq!(v["coords"][3], serde_json::json!([1, 1]));
        let back: NativeProblem = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn energy_is_flip_invariant(l in 2usize..6, seed in any::<u64>()) {
            let p = NativeProblem::square_lattice_afm(l).unwrap();
            let n = p.num_sites();
            let spins: Vec<i8> = (0..n).map(|i| if (seed.rotate_left(i as u32 % 64) ^ i as u64) & 1 == 0 { 1 } else { -1 }).collect();
            let c = SpinConfig::new(spins).unwrap();
            let e1 = diagonal_energy(&p, &c, &unit()).unwrap();
            let e2 = diagonal_energy(&p, &c.flipped(), &unit()).unwrap();
            prop_assert_eq!(e1, e2);
        }

        #[test]
        fn index_roundtrip(idx in 0usize..1 << 12) {
            prop_assert_eq!(SpinConfig::from_index(idx, 12).to_index(), idx);
        }
    }
}
