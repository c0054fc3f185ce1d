//! Undirected weighted navigation graph with per-node panoramas.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphRecord {
    n_nodes: usize,
    edges: Vec<Edge>,
}

/// Nodes are `0..n_nodes`. The panorama of a node lists one view per
/// neighbor in ascending id order, followed by the stop view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct NavGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl TryFrom<GraphRecord> for NavGraph {
    type Error = SimError;
    fn try_from(r: GraphRecord) -> Result<Self, SimError> {
        NavGraph::new(r.n_nodes, r.edges)
    }
}

impl From<NavGraph> for GraphRecord {
    fn from(g: NavGraph) -> Self {
        GraphRecord {
            n_nodes: g.n_nodes,
            edges: g.edges,
        }
    }
}

impl NavGraph {
    pub fn new(n_nodes: usize, edges: Vec<Edge>) -> Result<Self, SimError> {
        let mut adj = vec![Vec::new(); n_nodes];
        for e in &edges {
            if e.a >= n_nodes || e.b >= n_nodes || e.a == e.b {
                return Err(SimError::InvalidGraph(format!("bad edge {}-{}", e.a, e.b)));
            }
            if !(e.length > 0.0 && e.length.is_finite()) {
                return Err(SimError::InvalidGraph(format!("edge {}-{} has length {}", e.a, e.b, e.length)));
            }
            if adj[e.a].iter().any(|&(n, _)| n == e.b) {
                return Err(SimError::InvalidGraph(format!("duplicate edge {}-{}", e.a, e.b)));
            }
            adj[e.a].push((e.b, e.length));
            adj[e.b].push((e.a, e.length));
        }
        for list in &mut adj {
            list.sort_by_key(|&(n, _)| n);
        }
        Ok(Self { n_nodes, edges, adj })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors with edge lengths, ascending by id.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    /// Views in the panorama of `v`, stop included.
    pub fn n_views(&self, v: usize) -> usize {
        self.adj[v].len() + 1
    }

    pub fn stop_view(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Node reached through view `view` of `v`; `None` for the stop view.
    pub fn view_target(&self, v: usize, view: usize) -> Option<usize> {
        self.adj[v].get(view).map(|&(n, _)| n)
    }

    /// View of `v` that leads to `to`.
    pub fn view_to(&self, v: usize, to: usize) -> Option<usize> {
        self.adj[v].iter().position(|&(n, _)| n == to)
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adj[a].iter().find(|&&(n, _)| n == b).map(|&(_, l)| l)
    }

    /// Sum of edge lengths along consecutive nodes.
    pub fn path_length(&self, path: &[usize]) -> Result<f64, SimError> {
        path.windows(2)
            .map(|w| {
                self.edge_length(w[0], w[1])
                    .ok_or_else(|| SimError::InvalidGraph(format!("no edge {}-{}", w[0], w[1])))
            })
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.n_nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(n, _) in &self.adj[v] {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Dijkstra from `src`: distances and predecessors.
    pub fn dijkstra(&self, src: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        let mut dist = vec![f64::INFINITY; self.n_nodes];
        let mut prev = vec![None; self.n_nodes];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem { d: 0.0, v: src });
        while let Some(HeapItem { d, v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(n, l) in &self.adj[v] {
                let nd = d + l;
                if nd < dist[n] {
                    dist[n] = nd;
                    prev[n] = Some(v);
                    heap.push(HeapItem { d: nd, v: n });
                }
            }
        }
        (dist, prev)
    }

    pub fn shortest_distance(&self, a: usize, b: usize) -> Result<f64, SimError> {
        let d = self.dijkstra(a).0[b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(SimError::Unreachable(a, b))
        }
    }

    /// All-pairs distance table.
    pub fn distances(&self) -> Result<DistanceTable, SimError> {
        let mut d = Vec::with_capacity(self.n_nodes);
        for v in 0..self.n_nodes {
            let row = self.dijkstra(v).0;
            if let Some(u) = row.iter().position(|x| !x.is_finite()) {
                return Err(SimError::Unreachable(v, u));
            }
            d.push(row);
        }
        Ok(DistanceTable { d })
    }

    /// Ring lattice of degree `k` (even) rewired by random degree-preserving
    /// double-edge swaps, retried until connected. Edge lengths are
    /// `mean_length ± jitter`.
    pub fn random_regular<R: Rng>(
        n: usize,
        k: usize,
        mean_length: f64,
        jitter: f64,
        rng: &mut R,
    ) -> Result<Self, SimError> {
        if k % 2 != 0 || k == 0 || k >= n {
            return Err(SimError::InfeasibleConfig(format!(
                "cannot build a {k}-regular graph on {n} nodes"
            )));
        }
        for _ in 0..100 {
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..n {
                for s in 1..=k / 2 {
                    let j = (i + s) % n;
                    pairs.push((i.min(j), i.max(j)));
                }
            }
            let mut set: std::collections::BTreeSet<(usize, usize)> = pairs.iter().copied().collect();
            for _ in 0..pairs.len() * 10 {
                let i = rng.random_range(0..pairs.len());
                let j = rng.random_range(0..pairs.len());
                let (a, b) = pairs[i];
                let (mut c, mut e) = pairs[j];
                if rng.random::<bool>() {
                    std::mem::swap(&mut c, &mut e);
                }
                // a-b, c-e  →  a-c, b-e
                if a == c || b == e || a == e || b == c {
                    continue;
                }
                let n1 = (a.min(c), a.max(c));
                let n2 = (b.min(e), b.max(e));
                if set.contains(&n1) || set.contains(&n2) {
                    continue;
                }
                set.remove(&pairs[i]);
                set.remove(&pairs[j]);
                set.insert(n1);
                set.insert(n2);
                pairs[i] = n1;
                pairs[j] = n2;
            }
            let edges = set
                .into_iter()
                .map(|(a, b)| Edge {
                    a,
                    b,
                    length: mean_length + rng.random_range(-jitter..=jitter),
                })
                .collect();
            let g = NavGraph::new(n, edges)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(SimError::InfeasibleConfig("could not sample a connected graph".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    d: f64,
    v: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.v.cmp(&self.v))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    d: Vec<Vec<f64>>,
}

impl DistanceTable {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.d[a][b]
    }

    pub fn n_nodes(&self) -> usize {
        self.d.len()
    }
}
