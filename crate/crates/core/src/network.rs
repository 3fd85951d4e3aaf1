//! Random array topologies and consensus weight matrices.
//!
//! Connectivity `c` is the number of connections divided by `N(N-1)/2` for
//! both directed and undirected graphs. A directed edge counts as one
//! connection; an undirected link counts once and is stored as the two
//! directed edges it represents.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

/// Directed communication graph between array nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedNetwork {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
    /// Whether each node keeps a push-sum share for itself.
    pub self_loop: bool,
}

impl DirectedNetwork {
    /// Builds a network from `(from, to)` pairs. Self-pairs and duplicates
    /// are rejected; strong connectivity is required.
    pub fn from_edges<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let net = Self::from_edges_unchecked(n_nodes, edges)?;
        if !net.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        Ok(net)
    }

    fn from_edges_unchecked<I>(n_nodes: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if n_nodes < 2 {
            return Err(Error::InvalidParameter(
                "network needs at least 2 nodes".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from >= n_nodes || to >= n_nodes {
                return Err(Error::InvalidParameter(format!(
                    "edge ({from}, {to}) out of range for {n_nodes} nodes"
                )));
            }
            if from == to {
                return Err(Error::InvalidParameter(format!("self edge ({from}, {to})")));
            }
            if !set.insert((from, to)) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate edge ({from}, {to})"
                )));
            }
        }
        let mut in_neighbors = vec![Vec::new(); n_nodes];
        let mut out_neighbors = vec![Vec::new(); n_nodes];
        for &(from, to) in &set {
            out_neighbors[from].push(to);
            in_neighbors[to].push(from);
        }
        Ok(Self {
            n_nodes,
            edges: set,
            in_neighbors,
            out_neighbors,
            self_loop: true,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Nodes with an edge into `n`, ascending.
    pub fn in_neighbors(&self, n: usize) -> &[usize] {
        &self.in_neighbors[n]
    }

    /// Nodes `n` has an edge to, ascending.
    pub fn out_neighbors(&self, n: usize) -> &[usize] {
        &self.out_neighbors[n]
    }

    pub fn is_symmetric(&self) -> bool {
        self.first_unmatched_edge().is_none()
    }

    fn first_unmatched_edge(&self) -> Option<(usize, usize)> {
        self.edges
            .iter()
            .copied()
            .find(|&(a, b)| !self.edges.contains(&(b, a)))
    }

    /// Connections counted the way connectivity is defined: undirected links
    /// once, directed edges once.
    pub fn n_connections(&self) -> usize {
        if self.is_symmetric() {
            self.edges.len() / 2
        } else {
            self.edges.len()
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        reaches_all(self.n_nodes, &self.out_neighbors)
            && reaches_all(self.n_nodes, &self.in_neighbors)
    }

    /// Short hex digest of the edge set.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_nodes as u64).to_le_bytes());
        for &(a, b) in &self.edges {
            h.update((a as u64).to_le_bytes());
            h.update((b as u64).to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8]
            .iter()
            .fold(String::with_capacity(16), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Newline-delimited `from to` pairs, 0-indexed.
    pub fn to_adjacency_list(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    /// Parses the format written by [`to_adjacency_list`](Self::to_adjacency_list).
    /// Blank lines and `#` comments are skipped. The node count is one more
    /// than the largest index unless `n_nodes` is given.
    pub fn from_adjacency_list<R: BufRead>(reader: R, n_nodes: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut parts = body.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::Topology {
                    line: i + 1,
                    msg: "expected `from to`".into(),
                })?
                .parse()
                .map_err(|e| Error::Topology {
                    line: i + 1,
                    msg: format!("{e}"),
                })
            };
            let from = parse(parts.next())?;
            let to = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Topology {
                    line: i + 1,
                    msg: "trailing tokens".into(),
                });
            }
            edges.push((from, to));
        }
        let n =
            n_nodes.unwrap_or_else(|| edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0));
        Self::from_edges(n, edges)
    }
}

fn reaches_all(n: usize, adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                stack.push(u);
            }
        }
    }
    count == n
}

/// `round(c * N(N-1)/2)`.
pub fn edge_budget(n: usize, c: f64) -> usize {
    (c * (n * (n - 1)) as f64 / 2.0).round() as usize
}

/// Samples a uniformly random strongly connected network with exactly the
/// budgeted number of connections, by rejection.
pub fn generate<R: Rng + ?Sized>(
    n: usize,
    c: f64,
    directed: bool,
    rng: &mut R,
) -> Result<DirectedNetwork> {
    generate_with_attempts(n, c, directed, DEFAULT_MAX_ATTEMPTS, rng)
}

pub fn generate_with_attempts<R: Rng + ?Sized>(
    n: usize,
    c: f64,
    directed: bool,
    max_attempts: usize,
    rng: &mut R,
) -> Result<DirectedNetwork> {
    if n < 2 {
        return Err(Error::InvalidParameter(
            "network needs at least 2 nodes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidParameter(format!(
            "connectivity {c} outside [0, 1]"
        )));
    }
    let budget = edge_budget(n, c);
    let floor = if directed { n } else { n - 1 };
    if budget < floor {
        return Err(Error::EdgeBudget { n, budget, floor });
    }

    let pairs: Vec<(usize, usize)> = if directed {
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect()
    } else {
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect()
    };

    for _ in 0..max_attempts {
        let chosen = sample(rng, pairs.len(), budget);
        let edges: Vec<(usize, usize)> = if directed {
            chosen.iter().map(|i| pairs[i]).collect()
        } else {
            chosen
                .iter()
                .flat_map(|i| {
                    let (a, b) = pairs[i];
                    [(a, b), (b, a)]
                })
                .collect()
        };
        let net = DirectedNetwork::from_edges_unchecked(n, edges)?;
        if net.is_strongly_connected() {
            return Ok(net);
        }
    }
    Err(Error::GenerationAttempts(max_attempts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// Columns sum to one (push-sum).
    ColumnStochastic,
    /// Rows and columns sum to one (average consensus).
    DoublyStochastic,
}

/// Dense nonnegative consensus weights `W[n][m]`: node `n` receives
/// `W[n][m]` of node `m`'s share.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dense: DMatrix<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    kind: WeightKind,
}

impl WeightMatrix {
    /// Wraps a dense matrix after checking the stochasticity required by
    /// `kind` to within 1e-12.
    pub fn new(dense: DMatrix<f64>, kind: WeightKind) -> Result<Self> {
        let n = dense.nrows();
        if n != dense.ncols() || n == 0 {
            return Err(Error::InvalidParameter(
                "weight matrix must be square".into(),
            ));
        }
        if dense.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let tol = 1e-12;
        let cols_ok = (0..n).all(|j| (dense.column(j).sum() - 1.0).abs() <= tol);
        let rows_ok = (0..n).all(|i| (dense.row(i).sum() - 1.0).abs() <= tol);
        match kind {
            WeightKind::ColumnStochastic if !cols_ok => {
                return Err(Error::WeightKind {
                    expected: "column-stochastic",
                })
            }
            WeightKind::DoublyStochastic if !(cols_ok && rows_ok) => {
                return Err(Error::WeightKind {
                    expected: "doubly-stochastic",
                })
            }
            _ => {}
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let w = dense[(i, j)];
                        (w > 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { dense, rows, kind })
    }

    pub fn n(&self) -> usize {
        self.dense.nrows()
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.dense[(row, col)]
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    /// Nonzero `(m, w[n][m])` entries of row `n`, ascending in `m`.
    pub fn row(&self, n: usize) -> &[(usize, f64)] {
        &self.rows[n]
    }
}

/// `w[n][m] = 1 / d_out(m)` for every `n` that `m` sends to. With
/// `self_loop`, `m` also keeps a share and `d_out(m)` counts it.
pub fn push_sum_weights(net: &DirectedNetwork) -> Result<WeightMatrix> {
    if !net.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let n = net.n_nodes();
    let mut w = DMatrix::zeros(n, n);
    for m in 0..n {
        let outs = net.out_neighbors(m);
        let d_out = outs.len() + usize::from(net.self_loop);
        let share = 1.0 / d_out as f64;
        for &target in outs {
            w[(target, m)] = share;
        }
        if net.self_loop {
            w[(m, m)] = share;
        }
    }
    WeightMatrix::new(w, WeightKind::ColumnStochastic)
}

/// Metropolis-Hastings weights for a symmetric network:
/// `w[n][m] = 1 / (1 + max(d_n, d_m))` for neighbours, and the diagonal
/// absorbs the remainder.
pub fn metropolis_weights(net: &DirectedNetwork) -> Result<WeightMatrix> {
    if let Some((a, b)) = net.first_unmatched_edge() {
        return Err(Error::NotSymmetric(a, b));
    }
    let n = net.n_nodes();
    let deg: Vec<usize> = (0..n).map(|i| net.out_neighbors(i).len()).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut off = 0.0;
        for &j in net.out_neighbors(i) {
            let wij = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            w[(i, j)] = wij;
            off += wij;
        }
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(w, WeightKind::DoublyStochastic)
}

/// Mixing-rate quantities of a column-stochastic weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo {
    /// Modulus of the second-largest eigenvalue.
    pub lambda2: f64,
    /// Stationary distribution: `W pi = pi`, `sum(pi) = 1`, `pi > 0`.
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1_000_000,
            tolerance: 1e-15,
        }
    }
}

pub fn spectral_info(w: &WeightMatrix) -> Result<SpectralInfo> {
    spectral_info_with(w, SpectralOptions::default())
}

/// `pi` from power iteration `x <- W x` (column-stochastic `W` preserves
/// `sum(x)`, and `W^k x -> pi` for aperiodic strongly connected graphs);
/// `lambda2` from the real Schur form of `W`.
pub fn spectral_info_with(w: &WeightMatrix, opts: SpectralOptions) -> Result<SpectralInfo> {
    let n = w.n();
    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = w.row(i).iter().map(|&(j, wij)| wij * x[j]).sum();
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if delta <= opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "stationary distribution",
            iterations: opts.max_iterations,
        });
    }
    if x.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::NotStronglyConnected);
    }

    let lambda2 = second_eigenvalue_modulus(w.dense(), opts.max_iterations)?;
    Ok(SpectralInfo { lambda2, pi: x })
}

fn second_eigenvalue_modulus(w: &DMatrix<f64>, max_iterations: usize) -> Result<f64> {
    if w.nrows() == 1 {
        return Ok(0.0);
    }
    // The QR sweep occasionally stalls at machine epsilon; a slightly looser
    // deflation threshold, or the transpose, converges to the same spectrum.
    let attempts = [
        (false, f64::EPSILON),
        (false, 1e-15),
        (false, 1e-14),
        (true, f64::EPSILON),
        (true, 1e-14),
    ];
    let schur = attempts
        .iter()
        .find_map(|&(transpose, eps)| {
            let m = if transpose { w.transpose() } else { w.clone() };
            nalgebra::linalg::Schur::try_new(m, eps, max_iterations)
        })
        .ok_or(Error::NoConvergence {
            what: "Schur decomposition",
            iterations: max_iterations,
        })?;
    let mut moduli: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    // The Perron root is 1; numerically it is the largest modulus.
    Ok(moduli[1].clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamKey};

    fn rng(trial: u64) -> rand_chacha::ChaCha8Rng {
        StreamKey::new(1, trial, 0, 0, Purpose::Network).rng()
    }

    fn cycle3() -> DirectedNetwork {
        DirectedNetwork::from_edges(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    fn star4() -> DirectedNetwork {
        DirectedNetwork::from_edges(4, [(0, 1), (1, 0), (0, 2), (2, 0), (0, 3), (3, 0)]).unwrap()
    }

    #[test]
    fn complete_undirected_at_full_connectivity() {
        let net = generate(20, 1.0, false, &mut rng(0)).unwrap();
        assert_eq!(net.n_connections(), 190);
        assert_eq!(net.n_edges(), 380);
        assert!(net.is_symmetric());
    }

    #[test]
    fn budget_matches_connectivity() {
        assert_eq!(edge_budget(20, 0.2), 38);
        let net = generate(20, 0.2, true, &mut rng(1)).unwrap();
        assert_eq!(net.n_edges(), 38);
        // D = c(N - 1): in+out connections per node.
        let d = (0..20)
            .map(|i| net.in_neighbors(i).len() + net.out_neighbors(i).len())
            .sum::<usize>() as f64
            / 20.0;
        assert!((d - 3.8).abs() < 1e-12);
        let und = generate(20, 0.2, false, &mut rng(2)).unwrap();
        assert_eq!(und.n_connections(), 38);
    }

    #[test]
    fn budget_below_floor_is_rejected() {
        assert!(matches!(
            generate(20, 0.05, true, &mut rng(0)),
            Err(Error::EdgeBudget {
                budget: 10,
                floor: 20,
                ..
            })
        ));
        assert!(matches!(
            generate(1, 0.5, true, &mut rng(0)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn attempt_cap_is_reported() {
        // 20 directed edges on 20 nodes: only Hamiltonian cycles qualify.
        assert!(matches!(
            generate_with_attempts(20, 20.0 / 190.0, true, 5, &mut rng(0)),
            Err(Error::GenerationAttempts(5))
        ));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(DirectedNetwork::from_edges(3, [(0, 0)]).is_err());
        assert!(DirectedNetwork::from_edges(3, [(0, 1), (0, 1)]).is_err());
        assert!(DirectedNetwork::from_edges(3, [(0, 3)]).is_err());
        assert!(matches!(
            DirectedNetwork::from_edges(3, [(0, 1), (1, 2)]),
            Err(Error::NotStronglyConnected)
        ));
    }

    #[test]
    fn two_node_push_sum() {
        let net = DirectedNetwork::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let w = push_sum_weights(&net).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(w.get(i, j), 0.5);
            }
        }
    }

    #[test]
    fn push_sum_without_self_loop() {
        let mut net = cycle3();
        net.self_loop = false;
        let w = push_sum_weights(&net).unwrap();
        assert_eq!(w.get(0, 0), 0.0);
        assert_eq!(w.get(1, 0), 1.0);
    }

    #[test]
    fn cycle_push_sum_spectrum() {
        let w = push_sum_weights(&cycle3()).unwrap();
        for j in 0..3 {
            assert!((w.dense().column(j).sum() - 1.0).abs() < 1e-15);
        }
        let info = spectral_info(&w).unwrap();
        assert!((info.lambda2 - 0.5).abs() < 1e-12, "{}", info.lambda2);
        for p in &info.pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_digraph_has_uniform_pi() {
        let edges = (0..20).flat_map(|a| (0..20).filter(move |&b| b != a).map(move |b| (a, b)));
        let net = DirectedNetwork::from_edges(20, edges).unwrap();
        let info = spectral_info(&push_sum_weights(&net).unwrap()).unwrap();
        for p in &info.pi {
            assert!((p - 0.05).abs() < 1e-12);
        }
        assert!(info.lambda2 < 1e-10);
    }

    #[test]
    fn metropolis_star() {
        let w = metropolis_weights(&star4()).unwrap();
        assert_eq!(w.kind(), WeightKind::DoublyStochastic);
        for leaf in 1..4 {
            assert!((w.get(0, leaf) - 0.25).abs() < 1e-15);
            assert!((w.get(leaf, 0) - 0.25).abs() < 1e-15);
            assert!((w.get(leaf, leaf) - 0.75).abs() < 1e-15);
        }
        assert!((w.get(0, 0) - 0.25).abs() < 1e-15);
        assert_eq!(w.get(1, 2), 0.0);
    }

    #[test]
    fn metropolis_two_nodes_and_asymmetry() {
        let net = DirectedNetwork::from_edges(2, [(0, 1), (1, 0)]).unwrap();
        let w = metropolis_weights(&net).unwrap();
        assert_eq!(w.dense(), &DMatrix::from_element(2, 2, 0.5));
        assert!(matches!(
            metropolis_weights(&cycle3()),
            Err(Error::NotSymmetric(..))
        ));
    }

    #[test]
    fn half_matrix_spectrum() {
        let w = WeightMatrix::new(
            DMatrix::from_element(2, 2, 0.5),
            WeightKind::DoublyStochastic,
        )
        .unwrap();
        let info = spectral_info(&w).unwrap();
        assert!(info.lambda2.abs() < 1e-15);
        assert_eq!(info.pi, vec![0.5, 0.5]);
    }

    #[test]
    fn doubly_stochastic_pi_is_uniform() {
        let net = generate(30, 0.3, false, &mut rng(5)).unwrap();
        let info = spectral_info(&metropolis_weights(&net).unwrap()).unwrap();
        for p in &info.pi {
            assert!((p - 1.0 / 30.0).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_kind_is_checked() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]);
        assert!(WeightMatrix::new(m.clone(), WeightKind::ColumnStochastic).is_ok());
        assert!(WeightMatrix::new(m, WeightKind::DoublyStochastic).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[0.9, 0.5, 0.0, 0.5]);
        assert!(WeightMatrix::new(bad, WeightKind::ColumnStochastic).is_err());
    }

    #[test]
    fn power_iteration_cap() {
        let w = push_sum_weights(&cycle3()).unwrap();
        let opts = SpectralOptions {
            max_iterations: 2,
            tolerance: 1e-15,
        };
        assert!(matches!(
            spectral_info_with(&w, opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn adjacency_roundtrip() {
        let net = generate(12, 0.4, true, &mut rng(3)).unwrap();
        let text = net.to_adjacency_list();
        let back = DirectedNetwork::from_adjacency_list(text.as_bytes(), None).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.fingerprint(), net.fingerprint());
    }

    #[test]
    fn adjacency_parse_errors() {
        let err = DirectedNetwork::from_adjacency_list("0 1\n1 x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Topology { line: 2, .. }));
        let ok = DirectedNetwork::from_adjacency_list("# ring\n0 1\n\n1 0\n".as_bytes(), None);
        assert_eq!(ok.unwrap().n_edges(), 2);
    }
}
