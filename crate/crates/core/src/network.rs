//! Communication overlays.
//!
//! Every modality `m` gets a subgraph over the agents that own it; every
//! multimodal modality set gets a (usually small) subgraph over the agents
//! with exactly that set, used for the synergistic head. A multimodal agent
//! takes part in several subgraphs at once, one "virtual agent" per owned
//! modality; no parameters are copied for that, the trainer just mixes the
//! relevant blocks of the one agent.
//!
//! Mixing matrices are row-stochastic and follow the edge pattern. Regular
//! graphs get uniform `1/(deg+1)` weights; irregular gossip realizations get
//! Metropolis–Hastings weights. Both are doubly stochastic, so gossip keeps
//! the subgraph mean of every parameter fixed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::seed::{self, Stream};

/// Peers each agent contacts per round under random gossip.
pub const GOSSIP_PEERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TopologyKind {
    Ring,
    /// Ring plus a chord from each node to the diametrically opposite one.
    ChordalRing,
    /// Fresh random peers every round.
    RandomGossip,
}

impl TopologyKind {
    pub fn is_static(self) -> bool {
        self != TopologyKind::RandomGossip
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Ring => "ring",
            TopologyKind::ChordalRing => "chordal_ring",
            TopologyKind::RandomGossip => "random_gossip",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ring" => Ok(TopologyKind::Ring),
            "chordal_ring" | "chordal" => Ok(TopologyKind::ChordalRing),
            "random_gossip" | "gossip" => Ok(TopologyKind::RandomGossip),
            other => Err(Error::config(format!(
                "unknown topology {other:?} (expected ring, chordal_ring, random_gossip)"
            ))),
        }
    }
}

/// What a subgraph exchanges.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SubgraphKind {
    /// All agents owning this modality.
    Modality(usize),
    /// All agents with exactly this modality set.
    Signature(Vec<usize>),
}

/// Canonical name of a modality set, e.g. `m0+m1`.
pub fn signature_label(modalities: &[usize]) -> String {
    modalities
        .iter()
        .map(|m| format!("m{m}"))
        .collect::<Vec<_>>()
        .join("+")
}

impl fmt::Display for SubgraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubgraphKind::Modality(m) => write!(f, "modality:m{m}"),
            SubgraphKind::Signature(s) => write!(f, "set:{}", signature_label(s)),
        }
    }
}

/// Undirected graph over a subset of agents. Edges use member positions
/// (indices into `members`), stored as `(lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub kind: SubgraphKind,
    /// Agent ids, ascending.
    pub members: Vec<usize>,
    pub edges: BTreeSet<(usize, usize)>,
    pub topology: TopologyKind,
}

fn edge(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn ring_edges(n: usize) -> BTreeSet<(usize, usize)> {
    match n {
        0 | 1 => BTreeSet::new(),
        2 => BTreeSet::from([(0, 1)]),
        _ => (0..n).map(|i| edge(i, (i + 1) % n)).collect(),
    }
}

fn chordal_ring_edges(n: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = ring_edges(n);
    if n >= 4 {
        for i in 0..n {
            edges.insert(edge(i, (i + n / 2) % n));
        }
    }
    edges
}

impl Subgraph {
    pub fn new(kind: SubgraphKind, mut members: Vec<usize>, topology: TopologyKind, seed: u64) -> Self {
        members.sort_unstable();
        members.dedup();
        let n = members.len();
        let mut g = Subgraph {
            kind,
            members,
            edges: BTreeSet::new(),
            topology,
        };
        g.edges = match topology {
            TopologyKind::Ring => ring_edges(n),
            TopologyKind::ChordalRing => chordal_ring_edges(n),
            TopologyKind::RandomGossip => resample_gossip(&g, 0, seed),
        };
        g
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == i, b == i) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Edges expressed with agent ids instead of member positions.
    pub fn agent_edges(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|&(a, b)| edge(self.members[a], self.members[b]))
            .collect()
    }

    fn stream_key(&self) -> u64 {
        match &self.kind {
            SubgraphKind::Modality(m) => *m as u64,
            SubgraphKind::Signature(s) => {
                (1u64 << 32) | s.iter().fold(0u64, |acc, &m| acc | (1u64 << (m % 32)))
            }
        }
    }
}

/// Builds one subgraph per modality in use and one per distinct multimodal
/// modality set. `agent_modalities[i]` is agent `i`'s modality set.
pub fn build_subgraphs(
    agent_modalities: &[Vec<usize>],
    topology: TopologyKind,
    seed: u64,
) -> (Vec<Subgraph>, Vec<Subgraph>) {
    let mut by_modality: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (agent, mods) in agent_modalities.iter().enumerate() {
        for &m in mods {
            by_modality.entry(m).or_default().push(agent);
        }
    }
    let modality = by_modality
        .into_iter()
        .map(|(m, members)| Subgraph::new(SubgraphKind::Modality(m), members, topology, seed))
        .collect();
    let heads = build_signature_subgraphs(agent_modalities, topology, seed, true);
    (modality, heads)
}

/// One subgraph per distinct modality set; with `multimodal_only`, sets of
/// size one are skipped.
pub fn build_signature_subgraphs(
    agent_modalities: &[Vec<usize>],
    topology: TopologyKind,
    seed: u64,
    multimodal_only: bool,
) -> Vec<Subgraph> {
    let mut by_set: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (agent, mods) in agent_modalities.iter().enumerate() {
        let mut key = mods.clone();
        key.sort_unstable();
        key.dedup();
        if !multimodal_only || key.len() >= 2 {
            by_set.entry(key).or_default().push(agent);
        }
    }
    by_set
        .into_iter()
        .map(|(set, members)| Subgraph::new(SubgraphKind::Signature(set), members, topology, seed))
        .collect()
}

/// Row-stochastic weights over a subgraph's members.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    pub w: DenseMatrix,
}

impl MixingMatrix {
    pub fn identity(n: usize) -> Self {
        MixingMatrix {
            w: DenseMatrix::identity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.w.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.rows() == 0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.w.get(i, k)
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.w.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_col_sum_error(&self) -> f64 {
        (0..self.len())
            .map(|k| ((0..self.len()).map(|i| self.w.get(i, k)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// True when no weight sits outside `edges ∪ diagonal`.
    pub fn respects(&self, edges: &BTreeSet<(usize, usize)>) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            (0..n).all(|k| i == k || self.w.get(i, k) == 0.0 || edges.contains(&edge(i, k)))
        })
    }
}

/// Weights for a subgraph: uniform `1/(deg+1)` on regular graphs,
/// Metropolis–Hastings otherwise. A disconnected static subgraph is a
/// configuration error; a disconnected gossip realization is allowed.
pub fn build_mixing_matrix(subgraph: &Subgraph) -> Result<MixingMatrix> {
    let n = subgraph.len();
    if n <= 1 {
        return Ok(MixingMatrix::identity(n));
    }
    if subgraph.topology.is_static() && !subgraph.is_connected() {
        return Err(Error::config(format!("static subgraph {} is disconnected", subgraph.kind)));
    }
    let deg = subgraph.degrees();
    let mut w = DenseMatrix::zeros(n, n);
    if deg.iter().all(|&d| d == deg[0]) {
        let weight = 1.0 / (deg[0] + 1) as f64;
        for i in 0..n {
            w.set(i, i, weight);
        }
        for &(a, b) in &subgraph.edges {
            w.set(a, b, weight);
            w.set(b, a, weight);
        }
    } else {
        for &(a, b) in &subgraph.edges {
            let weight = 1.0 / (1 + deg[a].max(deg[b])) as f64;
            w.set(a, b, weight);
            w.set(b, a, weight);
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&k| k != i).map(|k| w.get(i, k)).sum();
            w.set(i, i, 1.0 - off);
        }
    }
    Ok(MixingMatrix { w })
}

/// One random-gossip realization: every member picks two distinct peers
/// uniformly; the edge set is the symmetrized union of all picks. Groups
/// smaller than three fall back to ring edges.
pub fn resample_gossip(subgraph: &Subgraph, round: usize, seed: u64) -> BTreeSet<(usize, usize)> {
    let n = subgraph.len();
    if n < 3 {
        return ring_edges(n);
    }
    let mut rng = seed::rng(seed, Stream::Gossip, &[round as u64, subgraph.stream_key()]);
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for pick in index::sample(&mut rng, n - 1, GOSSIP_PEERS) {
            let peer = if pick >= i { pick + 1 } else { pick };
            edges.insert(edge(i, peer));
        }
    }
    edges
}

fn check_aligned(mixing: &MixingMatrix, params: &[Vec<f64>]) -> Result<usize> {
    if params.len() != mixing.len() {
        return Err(Error::config(format!(
            "{} parameter bundles for a {}-member mixing matrix",
            params.len(),
            mixing.len()
        )));
    }
    let width = params.first().map_or(0, Vec::len);
    if params.iter().any(|p| p.len() != width) {
        return Err(Error::config("parameter bundles differ in shape"));
    }
    Ok(width)
}

/// `θ_i ← Σ_k W_ik (θ_k − η ∇L_k)` for every member `i`.
pub fn mix_parameters(
    mixing: &MixingMatrix,
    params: &[Vec<f64>],
    grads: &[Vec<f64>],
    eta: f64,
) -> Result<Vec<Vec<f64>>> {
    let width = check_aligned(mixing, params)?;
    if grads.len() != params.len() || grads.iter().any(|g| g.len() != width) {
        return Err(Error::config("gradients not aligned with parameters"));
    }
    let stepped: Vec<Vec<f64>> = params
        .iter()
        .zip(grads)
        .map(|(p, g)| p.iter().zip(g).map(|(p, g)| p - eta * g).collect())
        .collect();
    mix(mixing, &stepped)
}

/// Pure averaging step `θ_i ← Σ_k W_ik θ_k`.
pub fn mix(mixing: &MixingMatrix, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let width = check_aligned(mixing, params)?;
    let n = mixing.len();
    Ok((0..n)
        .map(|i| {
            let mut out = vec![0.0; width];
            for (k, p) in params.iter().enumerate() {
                let w = mixing.get(i, k);
                if w != 0.0 {
                    for (o, v) in out.iter_mut().zip(p) {
                        *o += w * v;
                    }
                }
            }
            out
        })
        .collect())
}
