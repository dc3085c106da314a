//! Time-varying digraphs and the column-stochastic mixing weights used by push-sum.
//!
//! An edge `(j, i)` means agent `j` transmits to agent `i`. Self-loops are never
//! stored; every neighborhood query includes the node itself.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    /// Sorted out-neighbors of each node, self excluded.
    out: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn empty(node_count: usize) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::param("digraph needs at least one node"));
        }
        Ok(Self {
            out: vec![Vec::new(); node_count],
        })
    }

    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut g = Self::empty(node_count)?;
        for (from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    /// Every ordered pair of distinct nodes.
    pub fn complete(node_count: usize) -> Result<Self> {
        let mut g = Self::empty(node_count)?;
        for (j, out) in g.out.iter_mut().enumerate() {
            out.extend((0..node_count).filter(|&i| i != j));
        }
        Ok(g)
    }

    /// Adds `from -> to`. Self-loops are implicit and silently ignored.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        let n = self.node_count();
        if from >= n || to >= n {
            return Err(Error::param(format!(
                "edge ({from}, {to}) out of range for {n} nodes"
            )));
        }
        if from == to {
            return Ok(());
        }
        let out = &mut self.out[from];
        if let Err(pos) = out.binary_search(&to) {
            out.insert(pos, to);
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out
            .get(from)
            .is_some_and(|out| out.binary_search(&to).is_ok())
    }

    /// Stored edges as `(from, to)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(j, out)| out.iter().map(move |&i| (j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Out-neighbors of `node` excluding itself.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    /// Out-neighborhood including the node itself, ascending.
    pub fn out_neighbors(&self, node: usize) -> Vec<usize> {
        let mut v = self.out[node].clone();
        if let Err(pos) = v.binary_search(&node) {
            v.insert(pos, node);
        }
        v
    }

    /// In-neighborhood including the node itself, ascending.
    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&j| j == node || self.has_edge(j, node))
            .collect()
    }

    /// `d_j`: size of the out-neighborhood including `node`.
    pub fn out_degree(&self, node: usize) -> usize {
        self.out[node].len() + 1
    }

    /// Edge-set union with another graph on the same node set.
    pub fn union(&self, other: &Digraph) -> Result<Digraph> {
        if self.node_count() != other.node_count() {
            return Err(Error::Dimension {
                expected: self.node_count(),
                got: other.node_count(),
            });
        }
        let mut g = self.clone();
        for (j, i) in other.edges() {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    /// True iff every node reaches every other node.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.node_count();
        let mut reverse = vec![Vec::new(); n];
        for (j, i) in self.edges() {
            reverse[i].push(j);
        }
        reaches_all(&self.out, 0) && reaches_all(&reverse, 0)
    }
}

fn reaches_all(adj: &[Vec<usize>], root: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// Deterministic map from round index to the digraph active in that round.
#[derive(Debug, Clone)]
pub enum GraphSchedule {
    Static(Digraph),
    /// Cycles through the listed graphs, round `n` uses `graphs[n % len]`.
    Periodic(Vec<Digraph>),
    /// Fresh random graph each round: a random Hamiltonian cycle plus
    /// `out_degree - 1` extra distinct out-edges per node.
    RandomStrong {
        node_count: usize,
        out_degree: usize,
        seed: u64,
    },
}

impl GraphSchedule {
    pub fn node_count(&self) -> usize {
        match self {
            GraphSchedule::Static(g) => g.node_count(),
            GraphSchedule::Periodic(gs) => gs[0].node_count(),
            GraphSchedule::RandomStrong { node_count, .. } => *node_count,
        }
    }

    pub fn periodic(graphs: Vec<Digraph>) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::param("periodic schedule needs at least one graph"));
        };
        let n = first.node_count();
        if let Some(bad) = graphs.iter().find(|g| g.node_count() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.node_count(),
            });
        }
        Ok(GraphSchedule::Periodic(graphs))
    }

    /// The graph active in round `round`.
    pub fn graph(&self, round: usize) -> Digraph {
        match self {
            GraphSchedule::Static(g) => g.clone(),
            GraphSchedule::Periodic(gs) => gs[round % gs.len()].clone(),
            GraphSchedule::RandomStrong {
                node_count,
                out_degree,
                seed,
            } => random_strong_graph(*node_count, *out_degree, *seed, round),
        }
    }
}

/// Random schedule in which every round graph is strongly connected and each
/// node has exactly `out_degree` out-neighbors besides itself.
pub fn generate_schedule(node_count: usize, out_degree: usize, seed: u64) -> Result<GraphSchedule> {
    if node_count == 0 {
        return Err(Error::param("node_count must be at least 1"));
    }
    if node_count > 1 && (out_degree == 0 || out_degree >= node_count) {
        return Err(Error::param(format!(
            "out_degree must lie in [1, {node_count}), got {out_degree}"
        )));
    }
    Ok(GraphSchedule::RandomStrong {
        node_count,
        out_degree,
        seed,
    })
}

fn random_strong_graph(node_count: usize, out_degree: usize, seed: u64, round: usize) -> Digraph {
    let mut g = Digraph::empty(node_count).expect("node_count validated at construction");
    if node_count == 1 {
        return g;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);

    let mut order: Vec<usize> = (0..node_count).collect();
    order.shuffle(&mut rng);
    for k in 0..node_count {
        let from = order[k];
        let to = order[(k + 1) % node_count];
        g.add_edge(from, to).expect("indices in range");
    }

    for j in 0..node_count {
        // nodes j does not yet reach directly
        let candidates: Vec<usize> = (0..node_count)
            .filter(|&i| i != j && !g.has_edge(j, i))
            .collect();
        let extra = out_degree - 1;
        for pick in index::sample(&mut rng, candidates.len(), extra).into_iter() {
            g.add_edge(j, candidates[pick]).expect("indices in range");
        }
    }
    g
}

/// Checks every window `[kB, (k+1)B)` fully contained in `[0, horizon)`.
pub fn is_b_strongly_connected(schedule: &GraphSchedule, window: usize, horizon: usize) -> bool {
    if window == 0 {
        return false;
    }
    let mut start = 0;
    while start + window <= horizon {
        let mut union = schedule.graph(start);
        for t in start + 1..start + window {
            union = union
                .union(&schedule.graph(t))
                .expect("schedule graphs share a node set");
        }
        if !union.is_strongly_connected() {
            return false;
        }
        start += window;
    }
    true
}

/// Column-stochastic mixing matrix, entry `(i, j)` is the weight agent `i`
/// applies to what it receives from agent `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: Array2<f64>,
}

impl WeightMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn node_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn column_sums(&self) -> Array1<f64> {
        self.entries.sum_axis(ndarray::Axis(0))
    }
}

/// Out-degree weighting: `a_ij = 1 / d_j` on edges `j -> i` and on the diagonal.
pub fn build_weights(graph: &Digraph) -> WeightMatrix {
    let n = graph.node_count();
    let mut entries = Array2::zeros((n, n));
    for j in 0..n {
        let w = 1.0 / graph.out_degree(j) as f64;
        entries[[j, j]] = w;
        for &i in graph.out_edges(j) {
            entries[[i, j]] = w;
        }
    }
    WeightMatrix { entries }
}
