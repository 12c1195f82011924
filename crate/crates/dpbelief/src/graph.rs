//! Communication networks: doubly stochastic weights and their spectra.
//!
//! Weights are the primary object. The raw 0/1 adjacency is only used to
//! derive Metropolis weights and is not kept around.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row/column sums must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    Metropolis,
}

/// Symmetric, doubly stochastic weight matrix over a connected graph, with
/// its two spectral constants cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    n: usize,
    /// Row-major n×n weights.
    weights: Vec<f64>,
    /// Second-largest eigenvalue modulus of the weight matrix.
    slem: f64,
    /// Second-largest eigenvalue modulus of the lazy matrix (W + I)/2.
    slem_lazy: f64,
}

impl Network {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// Weights as nested rows.
    pub fn weight_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// |λ₂| of the weight matrix.
    pub fn slem(&self) -> f64 {
        self.slem
    }

    /// |λ₂| of (W + I)/2.
    pub fn slem_lazy(&self) -> f64 {
        self.slem_lazy
    }

    /// The chain has a second eigenvalue of modulus 1 (bipartite weights).
    pub fn is_periodic(&self) -> bool {
        self.slem >= 1.0 - 1e-10
    }

    /// Neighbours of agent `i` (positive off-diagonal weight).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| j != i && self.weight(i, j) > 0.0)
            .collect()
    }

    /// Graph diameter in hops (0 for a single agent).
    pub fn diameter(&self) -> usize {
        let mut best = 0;
        for src in 0..self.n {
            let dist = bfs(self.n, src, |i| self.neighbors(i));
            best = best.max(dist.into_iter().flatten().max().unwrap_or(0));
        }
        best
    }

    /// Build from an explicit weight matrix. The matrix must be square,
    /// symmetric, nonnegative, doubly stochastic and irreducible.
    pub fn from_weights(rows: Vec<Vec<f64>>) -> Result<Network> {
        let n = rows.len();
        if n == 0 {
            return Err(invalid("network needs at least one agent"));
        }
        let mut weights = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!("weight row {i} has {} entries, expected {n}", row.len())));
            }
            for &w in row {
                if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                    return Err(invalid(format!("weight {w} in row {i} is outside [0, 1]")));
                }
            }
            weights.extend_from_slice(row);
        }
        for i in 0..n {
            for j in 0..i {
                if (weights[i * n + j] - weights[j * n + i]).abs() > STOCHASTIC_TOL {
                    return Err(invalid(format!("weights not symmetric at ({i}, {j})")));
                }
            }
            let row: f64 = (0..n).map(|j| weights[i * n + j]).sum();
            let col: f64 = (0..n).map(|j| weights[j * n + i]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(invalid(format!("row/column {i} does not sum to 1")));
            }
        }
        let adjacency = |i: usize| -> Vec<usize> {
            (0..n).filter(|&j| j != i && weights[i * n + j] > 0.0).collect()
        };
        if bfs(n, 0, adjacency).iter().any(Option::is_none) {
            return Err(Error::NotIrreducible);
        }
        let mut net = Network { n, weights, slem: 0.0, slem_lazy: 0.0 };
        let (slem, slem_lazy) = compute_spectrum(&net);
        net.slem = slem;
        net.slem_lazy = slem_lazy;
        Ok(net)
    }

    pub fn complete(n: usize) -> Result<Network> {
        build_network(&complete_edges(n), n, WeightScheme::Metropolis)
    }

    pub fn path(n: usize) -> Result<Network> {
        build_network(&path_edges(n), n, WeightScheme::Metropolis)
    }

    pub fn cycle(n: usize) -> Result<Network> {
        build_network(&cycle_edges(n), n, WeightScheme::Metropolis)
    }

    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Network> {
        build_network(&erdos_renyi_edges(n, p, seed)?, n, WeightScheme::Metropolis)
    }

    /// Build the network described by a named topology.
    pub fn from_topology(topology: &Topology, n: usize) -> Result<Network> {
        match topology {
            Topology::Complete => Network::complete(n),
            Topology::Path => Network::path(n),
            Topology::Cycle => Network::cycle(n),
            Topology::ErdosRenyi { p, seed } => Network::erdos_renyi(n, *p, *seed),
        }
    }
}

fn bfs(n: usize, src: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for v in neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Metropolis–Hastings weights for an undirected edge list.
///
/// Off-diagonal a_ij = 1/(1 + max(deg i, deg j)) on edges, self-weight takes
/// up the slack so each row sums to one.
pub fn build_network(edges: &[(usize, usize)], n: usize, scheme: WeightScheme) -> Result<Network> {
    if n == 0 {
        return Err(invalid("network needs at least one agent"));
    }
    let mut seen = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(invalid(format!("edge ({a}, {b}) references an agent outside 0..{n}")));
        }
        if a == b {
            return Err(invalid(format!("self-loop on agent {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(invalid(format!("duplicate edge ({a}, {b})")));
        }
    }
    let mut degree = vec![0usize; n];
    for &(a, b) in &seen {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut rows = vec![vec![0.0; n]; n];
    match scheme {
        WeightScheme::Metropolis => {
            for &(a, b) in &seen {
                let w = 1.0 / (1 + degree[a].max(degree[b])) as f64;
                rows[a][b] = w;
                rows[b][a] = w;
            }
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let off: f64 = row.iter().sum();
        row[i] = 1.0 - off;
    }
    Network::from_weights(rows)
}

/// Second-largest eigenvalue moduli of W and of (W + I)/2.
pub fn spectral_constants(net: &Network) -> (f64, f64) {
    (net.slem, net.slem_lazy)
}

fn compute_spectrum(net: &Network) -> (f64, f64) {
    let n = net.n;
    if n == 1 {
        return (0.0, 0.0);
    }
    let m = DMatrix::from_row_slice(n, n, &net.weights);
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    // The top eigenvalue is the Perron root 1; drop it and keep the rest.
    let rest = &eig[1..];
    let slem = rest.iter().fold(0.0f64, |acc, l| acc.max(l.abs())).min(1.0);
    let slem_lazy = rest
        .iter()
        .fold(0.0f64, |acc, l| acc.max(((l + 1.0) / 2.0).abs()))
        .min(1.0);
    (slem, slem_lazy)
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn path_edges(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn cycle_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = path_edges(n);
    if n >= 3 {
        e.push((n - 1, 0));
    }
    e
}

pub fn erdos_renyi_edges(n: usize, p: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

/// Parse an edge list: one `i j` pair per line, 0-indexed. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse { line: idx + 1, msg: format!("expected `i j`, got `{line}`") });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: idx + 1,
                msg: format!("`{s}` is not a nonnegative integer"),
            })
        };
        edges.push((parse(parts[0])?, parse(parts[1])?));
    }
    Ok(edges)
}

/// Named topologies accepted in configs.
#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Complete,
    Path,
    Cycle,
    ErdosRenyi { p: f64, seed: u64 },
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let head = words.next().unwrap_or("");
        match head {
            "complete" => Ok(Topology::Complete),
            "path" => Ok(Topology::Path),
            "cycle" => Ok(Topology::Cycle),
            "erdos-renyi" => {
                let mut p = None;
                let mut seed = 0u64;
                for w in words {
                    let (k, v) = w
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("bad topology option `{w}`")))?;
                    match k {
                        "p" => {
                            p = Some(v.parse::<f64>().map_err(|_| {
                                Error::Config(format!("bad edge probability `{v}`"))
                            })?)
                        }
                        "seed" => {
                            seed = v
                                .parse::<u64>()
                                .map_err(|_| Error::Config(format!("bad seed `{v}`")))?
                        }
                        _ => return Err(Error::Config(format!("unknown topology option `{k}`"))),
                    }
                }
                let p = p.ok_or_else(|| Error::Config("erdos-renyi needs p=..".into()))?;
                Ok(Topology::ErdosRenyi { p, seed })
            }
            _ => Err(Error::Config(format!("unknown topology `{s}`"))),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Complete => write!(f, "complete"),
            Topology::Path => write!(f, "path"),
            Topology::Cycle => write!(f, "cycle"),
            Topology::ErdosRenyi { p, seed } => write!(f, "erdos-renyi p={p} seed={seed}"),
        }
    }
}
