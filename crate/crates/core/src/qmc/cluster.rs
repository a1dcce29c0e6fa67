use rand::Rng;

use super::{Mode, PathIntegralState, Sampler};
use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

/// Imaginary-time clusters of one sweep.
///
/// Nodes are lattice indices `site * ℓ + τ`. Clusters are numbered by first
/// appearance in storage order.
#[derive(Debug, Clone, Default)]
pub struct ClusterPartition {
    cluster_of: Vec<u32>,
    offsets: Vec<usize>,
    members: Vec<u32>,
    seg_of: Vec<u32>,
    parent: Vec<u32>,
    label: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepStats {
    pub clusters: usize,
    pub accepted: usize,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.cluster_of[node] as usize
    }

    pub fn members(&self, cluster: usize) -> &[u32] {
        &self.members[self.offsets[cluster]..self.offsets[cluster + 1]]
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }

    fn new_segment(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    /// Grows the clusters for the current configuration.
    pub(crate) fn build<R: Rng + ?Sized>(
        &mut self,
        state: &PathIntegralState,
        chains: Option<&[Vec<usize>]>,
        p_add: f64,
        rng: &mut R,
    ) -> Result<()> {
        let (n, l) = (state.sites(), state.slices());
        let spins = state.spins();
        self.seg_of.clear();
        self.seg_of.resize(n * l, NONE);
        self.parent.clear();
        for p in 0..n {
            let base = p * l;
            let first = self.new_segment();
            self.seg_of[base] = first;
            for t in 0..l {
                let next = if t + 1 == l { base } else { base + t + 1 };
                let active = spins[base + t] == spins[next]
                    && (p_add >= 1.0 || (p_add > 0.0 && rng.random::<f64>() < p_add));
                if t + 1 < l {
                    self.seg_of[next] = if active { self.seg_of[base + t] } else { self.new_segment() };
                } else if active {
                    let last = self.seg_of[base + t];
                    self.union(last, first);
                }
            }
        }
        if let Some(chains) = chains {
            for (c, chain) in chains.iter().enumerate() {
                let head = chain[0] * l;
                for &p in &chain[1..] {
                    if spins[p * l] != spins[head] {
                        return Err(Error::InvariantViolation(format!(
                            "chain {c} is broken at imaginary time 0 in LC mode"
                        )));
                    }
                    let (a, b) = (self.seg_of[head], self.seg_of[p * l]);
                    self.union(a, b);
                }
            }
        }

        self.label.clear();
        self.label.resize(self.parent.len(), NONE);
        self.cluster_of.clear();
        self.cluster_of.resize(n * l, NONE);
        let mut count = 0u32;
        for node in 0..n * l {
            let root = self.find(self.seg_of[node]) as usize;
            if self.label[root] == NONE {
                self.label[root] = count;
                count += 1;
            }
            self.cluster_of[node] = self.label[root];
        }

        self.offsets.clear();
        self.offsets.resize(count as usize + 1, 0);
        for &c in &self.cluster_of {
            self.offsets[c as usize + 1] += 1;
        }
        for i in 0..count as usize {
            self.offsets[i + 1] += self.offsets[i];
        }
        self.members.clear();
        self.members.resize(n * l, 0);
        let mut fill = self.offsets.clone();
        for (node, &c) in self.cluster_of.iter().enumerate() {
            self.members[fill[c as usize]] = node as u32;
            fill[c as usize] += 1;
        }
        Ok(())
    }
}

impl Sampler<'_> {
    /// Spatial energy change `ΔẼ` of flipping `cluster` in the current
    /// configuration (bonds inside the cluster are unchanged).
    pub fn cluster_energy_change(&self, state: &PathIntegralState, cluster: usize) -> f64 {
        let l = state.slices();
        let spins = state.spins();
        let delta = self.params.delta;
        let mut de = 0.0;
        for &node in self.partition.members(cluster) {
            let node = node as usize;
            let (p, t) = (node / l, node % l);
            let s = f64::from(spins[node]);
            for &(q, j) in self.embedded.neighbours(p) {
                let qn = q * l + t;
                if self.partition.cluster_of(qn) != cluster {
                    de -= 2.0 * delta * j * s * f64::from(spins[qn]);
                }
            }
        }
        de
    }

    /// Builds the cluster partition for `state`.
    pub fn build_clusters<R: Rng + ?Sized>(&mut self, state: &PathIntegralState, rng: &mut R) -> Result<()> {
        let chains = (self.mode == Mode::Lc).then(|| self.embedded.chains());
        let mut partition = std::mem::take(&mut self.partition);
        let r = partition.build(state, chains, self.couplings.p_add, rng);
        self.partition = partition;
        r
    }

    /// Offers every cluster of the current partition a flip, in order.
    ///
    /// Each cluster is proposed with probability ½ and the proposal is
    /// accepted with `min(1, e^{−β_eff ΔẼ})`.
    pub fn flip_clusters<R: Rng + ?Sized>(&mut self, state: &mut PathIntegralState, rng: &mut R) -> SweepStats {
        let beta_eff = self.couplings.beta_eff;
        let clusters = self.partition.len();
        let mut accepted = 0;
        for c in 0..clusters {
            let de = self.cluster_energy_change(state, c);
            let u = 2.0 * rng.random::<f64>();
            if u < 1.0 && (de <= 0.0 || u < (-beta_eff * de).exp()) {
                accepted += 1;
                for &node in self.partition.members(c) {
                    state.spins[node as usize] = -state.spins[node as usize];
                }
            }
        }
        SweepStats { clusters, accepted }
    }

    /// One full sweep: rebuild the partition, then offer each cluster a flip.
    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut PathIntegralState, rng: &mut R) -> Result<SweepStats> {
        if state.sites() != self.embedded.num_physical() || state.slices() != self.slices {
            return Err(Error::InvalidArgument("state shape does not match the sampler".into()));
        }
        self.build_clusters(state, rng)?;
        Ok(self.flip_clusters(state, rng))
    }
}
