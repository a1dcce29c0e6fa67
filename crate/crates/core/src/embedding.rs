//! Minor embedding of a native problem into ferromagnetic chains.
//!
//! Logical qubit `l` becomes a path of `n_l` physical qubits with consecutive
//! ids, coupled by `J_F < 0`. Each native bond is realized either by a single
//! randomly placed physical bond (random scheme) or by `K` parallel bonds of
//! strength `J/K` (uniform scheme).

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{bond_energy, Bond, ModelParams, NativeProblem, SpinConfig};
use crate::SimRng;

pub const DEFAULT_J_F: f64 = -2.0;

const INTEGER_TOL: f64 = 1e-9;

/// Chains and inter-chain couplings of one embedding realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub chains: Vec<Vec<usize>>,
    #[serde(rename = "J_F")]
    pub j_f: f64,
    pub inter_bonds: Vec<Bond>,
    /// Seed of the realization; `None` for the deterministic uniform scheme.
    pub seed: Option<u64>,
}

impl Embedding {
    pub fn chain_sizes(&self) -> Vec<usize> {
        self.chains.iter().map(Vec::len).collect()
    }
}

/// A native problem together with an embedding, flattened into a single
/// physical bond list.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedProblem {
    pub native: NativeProblem,
    pub embedding: Embedding,
    /// Intra-chain bonds first (chain by chain), then inter-chain bonds.
    pub all_bonds: Vec<Bond>,
    pub logical_of: Vec<usize>,
    neighbours: Vec<Vec<(usize, f64)>>,
    num_intra: usize,
}

fn is_integer(k: f64) -> bool {
    (k - k.round()).abs() < INTEGER_TOL
}

/// Number of physical qubits for each of `n` logical qubits at average
/// embedding size `k`.
///
/// Integer `k` gives equal chains. Otherwise the `round(k·n) − n` extra spins
/// are handed one at a time to uniformly drawn logical qubits, redrawing when
/// the chosen chain already has 3 spins.
pub fn chain_size_distribution<R: Rng + ?Sized>(n: usize, k: f64, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(invalid("no logical qubits"));
    }
    if !(k >= 1.0 && k.is_finite()) {
        return Err(invalid(format!("embedding size K must be >= 1, got {k}")));
    }
    if is_integer(k) {
        return Ok(vec![k.round() as usize; n]);
    }
    if k >= 3.0 {
        return Err(Error::UnsupportedParameter(format!(
            "non-integer K must be below 3, got {k}"
        )));
    }
    let total = (k * n as f64).round() as usize;
    let extra = total - n;
    let mut sizes = vec![1usize; n];
    for _ in 0..extra {
        loop {
            let l = rng.random_range(0..n);
            if sizes[l] < 3 {
                sizes[l] += 1;
                break;
            }
        }
    }
    Ok(sizes)
}

fn layout_chains(sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut next = 0;
    let mut chains = Vec::with_capacity(sizes.len());
    for (l, &s) in sizes.iter().enumerate() {
        if s == 0 {
            return Err(invalid(format!("chain {l} has size 0")));
        }
        chains.push((next..next + s).collect());
        next += s;
    }
    Ok(chains)
}

fn check_j_f(j_f: f64) -> Result<()> {
    if !(j_f < 0.0 && j_f.is_finite()) {
        return Err(invalid(format!("J_F must be negative, got {j_f}")));
    }
    Ok(())
}

/// One physical bond per native bond, endpoints drawn uniformly within each
/// chain. Endpoints are drawn independently per native bond, so a physical
/// qubit can carry several inter-chain bonds.
pub fn embed_random<R: Rng + ?Sized>(
    problem: &NativeProblem,
    sizes: &[usize],
    j_f: f64,
    rng: &mut R,
) -> Result<EmbeddedProblem> {
    check_j_f(j_f)?;
    if sizes.len() != problem.num_sites() {
        return Err(invalid(format!(
            "{} chain sizes for {} logical qubits",
            sizes.len(),
            problem.num_sites()
        )));
    }
    let chains = layout_chains(sizes)?;
    let inter_bonds = problem
        .bonds
        .iter()
        .map(|b| {
            let p = chains[b.i][rng.random_range(0..chains[b.i].len())];
            let q = chains[b.j][rng.random_range(0..chains[b.j].len())];
            Bond::new(p, q, b.coupling)
        })
        .collect();
    EmbeddedProblem::new(problem.clone(), Embedding { chains, j_f, inter_bonds, seed: None })
}

/// Every chain has `k` spins; spin `i` of chain `l` couples to spin `i` of
/// chain `m` with `J/k` for each native bond `⟨l, m⟩`.
pub fn embed_uniform(problem: &NativeProblem, k: f64, j_f: f64) -> Result<EmbeddedProblem> {
    check_j_f(j_f)?;
    if !(k >= 1.0 && is_integer(k)) {
        return Err(invalid(format!("uniform embedding needs a positive integer K, got {k}")));
    }
    let k = k.round() as usize;
    let chains = layout_chains(&vec![k; problem.num_sites()])?;
    let mut inter_bonds = Vec::with_capacity(problem.bonds.len() * k);
    for b in &problem.bonds {
        for r in 0..k {
            inter_bonds.push(Bond::new(chains[b.i][r], chains[b.j][r], b.coupling / k as f64));
        }
    }
    EmbeddedProblem::new(problem.clone(), Embedding { chains, j_f, inter_bonds, seed: None })
}

impl EmbeddedProblem {
    pub fn new(native: NativeProblem, embedding: Embedding) -> Result<Self> {
        native.validate()?;
        if embedding.chains.len() != native.num_sites() {
            return Err(invalid("one chain per logical qubit required"));
        }
        let total: usize = embedding.chains.iter().map(Vec::len).sum();
        let mut logical_of = vec![usize::MAX; total];
        for (l, chain) in embedding.chains.iter().enumerate() {
            if chain.is_empty() {
                return Err(invalid(format!("chain {l} is empty")));
            }
            for &p in chain {
                if p >= total || logical_of[p] != usize::MAX {
                    return Err(invalid(format!("physical qubit {p} is not uniquely assigned")));
                }
                logical_of[p] = l;
            }
        }
        let mut all_bonds = Vec::new();
        for chain in &embedding.chains {
            for w in chain.windows(2) {
                all_bonds.push(Bond::new(w[0], w[1], embedding.j_f));
            }
        }
        let num_intra = all_bonds.len();
        for b in &embedding.inter_bonds {
            if b.i >= total || b.j >= total || logical_of[b.i] == logical_of[b.j] {
                return Err(invalid(format!("inter-chain bond ({}, {}) is invalid", b.i, b.j)));
            }
            all_bonds.push(*b);
        }
        let mut neighbours = vec![Vec::new(); total];
        for b in &all_bonds {
            neighbours[b.i].push((b.j, b.coupling));
            neighbours[b.j].push((b.i, b.coupling));
        }
        Ok(Self { native, embedding, all_bonds, logical_of, neighbours, num_intra })
    }

    /// `K = 1`: every chain is a single physical qubit.
    pub fn trivial(native: &NativeProblem) -> Result<Self> {
        let sizes = vec![1; native.num_sites()];
        embed_random(native, &sizes, DEFAULT_J_F, &mut SimRng::seed_from_u64(0))
    }

    /// Random-scheme realization identified by `(problem, K, J_F, seed)`.
    pub fn random_realization(native: &NativeProblem, k: f64, j_f: f64, seed: u64) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(seed);
        let sizes = chain_size_distribution(native.num_sites(), k, &mut rng)?;
        let mut e = embed_random(native, &sizes, j_f, &mut rng)?;
        e.embedding.seed = Some(seed);
        Ok(e)
    }

    pub fn num_logical(&self) -> usize {
        self.embedding.chains.len()
    }

    pub fn num_physical(&self) -> usize {
        self.logical_of.len()
    }

    /// Average embedding size `Ñ / N`.
    pub fn k(&self) -> f64 {
        self.num_physical() as f64 / self.num_logical() as f64
    }

    /// Extra variables `D = Ñ − N`.
    pub fn extra_spins(&self) -> usize {
        self.num_physical() - self.num_logical()
    }

    pub fn chains(&self) -> &[Vec<usize>] {
        &self.embedding.chains
    }

    pub fn intra_bonds(&self) -> &[Bond] {
        &self.all_bonds[..self.num_intra]
    }

    pub fn inter_bonds(&self) -> &[Bond] {
        &self.all_bonds[self.num_intra..]
    }

    /// Physical neighbours and couplings of every qubit (all bonds).
    pub fn neighbours(&self, p: usize) -> &[(usize, f64)] {
        &self.neighbours[p]
    }

    fn check_len(&self, spins: &[i8]) -> Result<()> {
        if spins.len() != self.num_physical() {
            return Err(invalid(format!(
                "configuration has {} spins, embedding has {} physical qubits",
                spins.len(),
                self.num_physical()
            )));
        }
        Ok(())
    }

    /// Index of the first broken chain, if any. Assumes a full-length slice.
    pub(crate) fn first_broken_chain(&self, spins: &[i8]) -> Option<usize> {
        self.embedding
            .chains
            .iter()
            .position(|c| c.iter().any(|&p| spins[p] != spins[c[0]]))
    }

    pub(crate) fn slice_is_logical(&self, spins: &[i8]) -> bool {
        self.first_broken_chain(spins).is_none()
    }

    /// True iff no chain is broken.
    pub fn is_logical(&self, config: &SpinConfig) -> Result<bool> {
        self.check_len(config.spins())?;
        Ok(self.slice_is_logical(config.spins()))
    }

    pub(crate) fn unembed_slice(&self, spins: &[i8]) -> Result<Vec<i8>> {
        if let Some(chain) = self.first_broken_chain(spins) {
            return Err(Error::NotLogical { chain });
        }
        Ok(self.embedding.chains.iter().map(|c| spins[c[0]]).collect())
    }

    /// Native configuration represented by a logical physical configuration.
    pub fn unembed(&self, config: &SpinConfig) -> Result<SpinConfig> {
        self.check_len(config.spins())?;
        SpinConfig::new(self.unembed_slice(config.spins())?)
    }

    /// Replicates each native spin along its chain.
    pub fn embed_config(&self, native: &SpinConfig) -> Result<SpinConfig> {
        if native.len() != self.num_logical() {
            return Err(invalid("native configuration length mismatch"));
        }
        SpinConfig::new(self.logical_of.iter().map(|&l| native.spins()[l]).collect())
    }

    /// Diagonal energy of a physical configuration under the embedded
    /// Hamiltonian, chains included.
    pub fn diagonal_energy(&self, config: &SpinConfig, params: &ModelParams) -> Result<f64> {
        self.check_len(config.spins())?;
        Ok(bond_energy(&self.all_bonds, config.spins(), params.delta))
    }

    /// Energy of the satisfied chains, `Δ·J_F·Σ(n_l − 1)`: the constant by which
    /// embedding shifts every logical level.
    pub fn chain_energy_shift(&self, params: &ModelParams) -> f64 {
        params.delta * self.embedding.j_f * self.num_intra as f64
    }
}
