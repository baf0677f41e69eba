//! Directed graphs, the row-normalized propagation operator and the random
//! network generators used by the simulation designs.
//!
//! The operator is stored in compressed neighbor-list form. Every row of a node
//! with at least one out-neighbor carries the uniform weight `1 / out_degree`;
//! rows of nodes without out-neighbors are zero, so covariates propagated into
//! such a node vanish.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NprError, Result};

/// A simple directed graph on nodes `0..n_nodes`.
///
/// Edges are kept sorted by `(source, target)`; self-loops and duplicates are
/// rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(NprError::InvalidGraph(
                "graph must have at least one node".into(),
            ));
        }
        for &(s, t) in &edges {
            if s >= n_nodes || t >= n_nodes {
                return Err(NprError::InvalidGraph(format!(
                    "edge ({s}, {t}) out of range for {n_nodes} nodes"
                )));
            }
            if s == t {
                return Err(NprError::InvalidGraph(format!("self-loop at node {s}")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(NprError::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self { n_nodes, edges })
    }

    /// Graph on `n_nodes` nodes without edges.
    pub fn empty(n_nodes: usize) -> Result<Self> {
        Self::new(n_nodes, Vec::new())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Fraction of the `n(n-1)` ordered pairs that carry an edge.
    pub fn density(&self) -> f64 {
        if self.n_nodes < 2 {
            return 0.0;
        }
        self.edges.len() as f64 / (self.n_nodes as f64 * (self.n_nodes as f64 - 1.0))
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(s, _) in &self.edges {
            deg[s] += 1;
        }
        deg
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(_, t) in &self.edges {
            deg[t] += 1;
        }
        deg
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            n_nodes: self.n_nodes,
            n_edges: self.edges.len(),
            density: self.density(),
        }
    }
}

/// JSON summary of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub density: f64,
}

/// Row-normalized adjacency operator `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticOperator {
    n_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    row_weight: Vec<f64>,
}

impl RowStochasticOperator {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Out-neighbors of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Weight shared by every nonzero entry in row `i` (zero for isolated rows).
    pub fn row_weight(&self, i: usize) -> f64 {
        self.row_weight[i]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_nodes)
            .map(|i| self.neighbors(i).iter().map(|_| self.row_weight[i]).sum())
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// `W v`.
    pub fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n_nodes {
            return Err(NprError::DimensionMismatch(format!(
                "operator has {} nodes, vector has {} entries",
                self.n_nodes,
                v.len()
            )));
        }
        Ok(DVector::from_iterator(
            self.n_nodes,
            (0..self.n_nodes).map(|i| self.row_dot(i, v.as_slice())),
        ))
    }

    /// `W X` for a dense `N x d` matrix.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n_nodes {
            return Err(NprError::DimensionMismatch(format!(
                "operator has {} nodes, matrix has {} rows",
                self.n_nodes,
                x.nrows()
            )));
        }
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let src = x.column(c);
            let src = src.as_slice();
            let mut dst = out.column_mut(c);
            for i in 0..self.n_nodes {
                dst[i] = self.row_dot(i, src);
            }
        }
        Ok(out)
    }

    #[inline]
    fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let nb = self.neighbors(i);
        if nb.is_empty() {
            return 0.0;
        }
        nb.iter().map(|&j| v[j]).sum::<f64>() * self.row_weight[i]
    }

    /// Dense copy of `W`; intended for small diagnostic instances.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for i in 0..self.n_nodes {
            for &j in self.neighbors(i) {
                m[(i, j)] = self.row_weight[i];
            }
        }
        m
    }
}

/// Builds `W` with `w_ij = 1/|out(i)|` for `j` in `out(i)`; isolated rows stay zero.
pub fn row_normalize(graph: &DirectedGraph) -> RowStochasticOperator {
    let n = graph.n_nodes;
    let mut offsets = vec![0usize; n + 1];
    for &(s, _) in &graph.edges {
        offsets[s + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    // edges are sorted by source, so targets line up with offsets
    let targets: Vec<usize> = graph.edges.iter().map(|&(_, t)| t).collect();
    let row_weight = (0..n)
        .map(|i| {
            let deg = offsets[i + 1] - offsets[i];
            if deg == 0 {
                0.0
            } else {
                1.0 / deg as f64
            }
        })
        .collect();
    RowStochasticOperator {
        n_nodes: n,
        offsets,
        targets,
        row_weight,
    }
}

/// Returns `[X, WX, ..., W^K X]`, each block computed from the previous one.
pub fn propagate(
    w: &RowStochasticOperator,
    x: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if x.nrows() != w.n_nodes() {
        return Err(NprError::DimensionMismatch(format!(
            "operator has {} nodes, covariates have {} rows",
            w.n_nodes(),
            x.nrows()
        )));
    }
    let mut blocks = Vec::with_capacity(k + 1);
    blocks.push(x.clone());
    for step in 1..=k {
        let next = w.apply(&blocks[step - 1])?;
        blocks.push(next);
    }
    Ok(blocks)
}

/// Largest eigenvalue of `(W^k)^T W^k`, computed densely. Only meant for small
/// graphs; the value never exceeds the number of nodes.
pub fn spectral_bound_check(w: &RowStochasticOperator, k: usize) -> f64 {
    assert!(k >= 1, "power must be positive");
    let dense = w.to_dense();
    let mut power = dense.clone();
    for _ in 1..k {
        power = &power * &dense;
    }
    let gram = power.transpose() * &power;
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Calls `hit` for each index in `0..m` selected by independent Bernoulli(p)
/// trials, skipping geometrically between successes.
fn bernoulli_indices<R: Rng + ?Sized>(m: usize, p: f64, rng: &mut R, mut hit: impl FnMut(usize)) {
    if m == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..m).for_each(hit);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut i = 0usize;
    while i < m {
        // 1 - u lies in (0, 1]
        let u: f64 = rng.random();
        let gap = ((1.0 - u).ln() / log_q).floor();
        if gap >= (m - i) as f64 {
            break;
        }
        i += gap as usize;
        hit(i);
        i += 1;
    }
}

/// Erdős–Rényi digraph: each ordered pair `i != j` carries an edge independently
/// with probability `n^{-0.8}`.
pub fn gen_erdos_renyi<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DirectedGraph> {
    check_size(n)?;
    let p = (n as f64).powf(-0.8);
    let mut edges = Vec::new();
    for i in 0..n {
        bernoulli_indices(n - 1, p, rng, |c| {
            let j = if c >= i { c + 1 } else { c };
            edges.push((i, j));
        });
    }
    DirectedGraph::new(n, edges)
}

/// Three-block stochastic block model. Nodes join blocks `1..=3` uniformly at
/// random; within-block pairs connect with probability `n^{-0.75}`, between-block
/// pairs with `n^{-1}`. Returns the graph and the block label of every node.
pub fn gen_sbm<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(DirectedGraph, Vec<u8>)> {
    check_size(n)?;
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(1..=3u8)).collect();
    let mut members: [Vec<usize>; 3] = Default::default();
    for (i, &b) in labels.iter().enumerate() {
        members[(b - 1) as usize].push(i);
    }
    let p_in = (n as f64).powf(-0.75);
    let p_out = 1.0 / n as f64;
    let mut edges = Vec::new();
    let mut row = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        row.clear();
        for (b, block) in members.iter().enumerate() {
            if b + 1 == label as usize {
                let pos = block.binary_search(&i).expect("node listed in its block");
                bernoulli_indices(block.len() - 1, p_in, rng, |c| {
                    let c = if c >= pos { c + 1 } else { c };
                    row.push(block[c]);
                });
            } else {
                bernoulli_indices(block.len(), p_out, rng, |c| row.push(block[c]));
            }
        }
        edges.extend(row.iter().map(|&j| (i, j)));
    }
    Ok((DirectedGraph::new(n, edges)?, labels))
}

/// Normalized discrete power law `P(k) = c k^{-2.5}` on `1..=max_degree`.
#[derive(Debug, Clone)]
pub struct PowerLawDegree {
    cdf: Vec<f64>,
}

impl PowerLawDegree {
    pub const EXPONENT: f64 = 2.5;

    pub fn new(max_degree: usize) -> Self {
        assert!(max_degree >= 1);
        let mut cdf = Vec::with_capacity(max_degree);
        let mut acc = 0.0;
        for k in 1..=max_degree {
            acc += (k as f64).powf(-Self::EXPONENT);
            cdf.push(acc);
        }
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { cdf }
    }

    pub fn max_degree(&self) -> usize {
        self.cdf.len()
    }

    /// Probability of degree `k`.
    pub fn pmf(&self, k: usize) -> f64 {
        if k == 0 || k > self.cdf.len() {
            return 0.0;
        }
        let below = if k == 1 { 0.0 } else { self.cdf[k - 2] };
        self.cdf[k - 1] - below
    }

    pub fn mean(&self) -> f64 {
        (1..=self.cdf.len()).map(|k| k as f64 * self.pmf(k)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1) + 1
    }
}

/// Power-law network: node `i` draws its in-degree from [`PowerLawDegree`] on
/// `1..=n-1` and picks that many distinct followers `j`, each adding the edge `j -> i`.
pub fn gen_powerlaw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DirectedGraph> {
    check_size(n)?;
    let law = PowerLawDegree::new(n - 1);
    let mut edges = Vec::new();
    for i in 0..n {
        let k = law.sample(rng);
        for c in index::sample(rng, n - 1, k).into_iter() {
            let j = if c >= i { c + 1 } else { c };
            edges.push((j, i));
        }
    }
    DirectedGraph::new(n, edges)
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(NprError::InvalidInput(format!(
            "network generators need at least 2 nodes, got {n}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_power_oracle(w: &DMatrix<f64>, x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let mut p = DMatrix::identity(w.nrows(), w.ncols());
        for _ in 0..k {
            p = &p * w;
        }
        p * x
    }

    #[test]
    fn two_cycle_normalizes_to_swap() {
        let g = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let w = row_normalize(&g).to_dense();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn uniform_split_over_out_neighbors() {
        let g = DirectedGraph::new(3, vec![(0, 1), (0, 2)]).unwrap();
        let w = row_normalize(&g).to_dense();
        assert_eq!(
            w.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.5, 0.5]
        );
    }

    #[test]
    fn star_leaves_point_at_hub() {
        let g = DirectedGraph::new(5, (1..5).map(|l| (l, 0)).collect()).unwrap();
        let w = row_normalize(&g);
        let dense = w.to_dense();
        for leaf in 1..5 {
            assert_eq!(dense[(leaf, 0)], 1.0);
            assert_eq!(dense.row(leaf).sum(), 1.0);
        }
        assert!(dense.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(w.row_sums(), vec![0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_self_loops_duplicates_and_out_of_range() {
        assert!(DirectedGraph::new(3, vec![(1, 1)]).is_err());
        assert!(DirectedGraph::new(3, vec![(0, 1), (0, 1)]).is_err());
        assert!(DirectedGraph::new(3, vec![(0, 3)]).is_err());
        assert!(DirectedGraph::new(0, vec![]).is_err());
    }

    #[test]
    fn propagate_order_zero_is_identity() {
        let g = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let w = row_normalize(&g);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let blocks = propagate(&w, &x, 0).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0], x);
    }

    #[test]
    fn propagate_swap_alternates() {
        let g = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let w = row_normalize(&g);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let blocks = propagate(&w, &x, 2).unwrap();
        assert_eq!(blocks[1].as_slice(), &[3.0, 1.0]);
        assert_eq!(blocks[2].as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn propagate_rejects_wrong_row_count() {
        let w = row_normalize(&DirectedGraph::empty(3).unwrap());
        assert!(propagate(&w, &DMatrix::zeros(4, 2), 1).is_err());
    }

    #[test]
    fn propagate_matches_dense_powers_on_random_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = gen_erdos_renyi(6, &mut rng).unwrap();
        let w = row_normalize(&g);
        let x = DMatrix::from_fn(6, 2, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
        let blocks = propagate(&w, &x, 3).unwrap();
        let dense = w.to_dense();
        for (k, b) in blocks.iter().enumerate() {
            let oracle = dense_power_oracle(&dense, &x, k);
            assert!((b - oracle).amax() < 1e-12);
        }
    }

    #[test]
    fn spectral_bound_examples() {
        let swap = row_normalize(&DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap());
        for k in 1..4 {
            assert!((spectral_bound_check(&swap, k) - 1.0).abs() < 1e-12);
        }
        let star = row_normalize(&DirectedGraph::new(5, (1..5).map(|l| (l, 0)).collect()).unwrap());
        assert!((spectral_bound_check(&star, 1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn generators_are_reproducible() {
        for seed in 0..3 {
            let a = gen_erdos_renyi(2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = gen_erdos_renyi(2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
            let a = gen_sbm(50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = gen_sbm(50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
            let a = gen_powerlaw(50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = gen_powerlaw(50, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generators_reject_tiny_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_erdos_renyi(1, &mut rng).is_err());
        assert!(gen_sbm(1, &mut rng).is_err());
        assert!(gen_powerlaw(1, &mut rng).is_err());
    }

    #[test]
    fn erdos_renyi_density_near_expected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = gen_erdos_renyi(1000, &mut rng).unwrap();
        // expected density n^{-0.8} = 0.398%
        assert!(
            (g.density() - 1000f64.powf(-0.8)).abs() < 0.0003,
            "{}",
            g.density()
        );
    }

    #[test]
    fn sbm_density_matches_block_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (g, labels) = gen_sbm(1000, &mut rng).unwrap();
        assert!(labels.iter().all(|&l| (1..=3).contains(&l)));
        // about a third of the pairs are within-block: 1000^{-0.75}/3 + 2/3 * 1000^{-1} = 0.254%
        let expected = 1000f64.powf(-0.75) / 3.0 + 2.0 / 3.0 / 1000.0;
        assert!((g.density() - expected).abs() < 0.0003, "{}", g.density());
    }

    #[test]
    fn powerlaw_degree_never_exceeds_n_minus_one() {
        let law = PowerLawDegree::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let k = law.sample(&mut rng);
            assert!((1..=4).contains(&k));
        }
        let g = gen_powerlaw(5, &mut rng).unwrap();
        assert!(g.in_degrees().iter().all(|&d| (1..=4).contains(&d)));
    }

    #[test]
    fn powerlaw_pmf_sums_to_one() {
        let law = PowerLawDegree::new(999);
        let total: f64 = (1..=999).map(|k| law.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(law.pmf(0), 0.0);
        assert_eq!(law.pmf(1000), 0.0);
    }
}
