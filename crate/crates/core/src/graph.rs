//! Undirected simple interference graphs over dense unit ids `0..n`.
//!
//! Neighborhoods define who can spill over onto whom. First-order neighbors
//! are the adjacency list; k-hop neighborhoods are units at shortest-path
//! distance exactly `k`, so the first- and second-order sets never overlap.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterferenceGraph {
    adjacency: Vec<Vec<usize>>,
    edge_count: usize,
}

impl InterferenceGraph {
    /// Graph on `n` units with no edges.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one unit".into()));
        }
        Ok(Self { adjacency: vec![Vec::new(); n], edge_count: 0 })
    }

    /// Builds a graph from unordered pairs. Self-loops, duplicates (in either
    /// orientation) and out-of-range ids are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut graph = Self::empty(n)?;
        for (a, b) in edges {
            graph.insert_edge(a, b)?;
        }
        graph.finish();
        Ok(graph)
    }

    /// Each unordered pair is included independently with probability `p`.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed, 0);
        Self::erdos_renyi_with(n, p, &mut rng)
    }

    pub fn erdos_renyi_with(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
        }
        let mut graph = Self::empty(n)?;
        for i in 0..n {
            for j in (i + 1)..n {
                // random() is in [0, 1), so p = 1 always connects and p = 0 never does
                if rng.random::<f64>() < p {
                    graph.adjacency[i].push(j);
                    graph.adjacency[j].push(i);
                    graph.edge_count += 1;
                }
            }
        }
        graph.finish();
        Ok(graph)
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("complete graph needs at least two units".into()));
        }
        let adjacency = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        Ok(Self { adjacency, edge_count: n * (n - 1) / 2 })
    }

    /// Parses whitespace-separated `i j` lines with 0-based ids. Text after `#`
    /// is ignored. When `n` is `None` the unit count is one past the largest id.
    pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::EdgeList { line: lineno + 1, message };
            let mut fields = line.split_whitespace();
            let mut next_id = || -> Result<usize> {
                let tok = fields.next().ok_or_else(|| err("expected two unit ids".into()))?;
                tok.parse::<usize>().map_err(|_| err(format!("bad unit id {tok:?}")))
            };
            let a = next_id()?;
            let b = next_id()?;
            if fields.next().is_some() {
                return Err(err("trailing fields".into()));
            }
            pairs.push((lineno + 1, a, b));
        }
        let max_id = pairs.iter().map(|&(_, a, b)| a.max(b)).max();
        let n = match (n, max_id) {
            (Some(n), _) => n,
            (None, Some(m)) => m + 1,
            (None, None) => {
                return Err(Error::EdgeList { line: 0, message: "no edges and no unit count".into() })
            }
        };
        let mut graph = Self::empty(n)?;
        for (line, a, b) in pairs {
            graph
                .insert_edge(a, b)
                .map_err(|e| Error::EdgeList { line, message: e.to_string() })?;
        }
        graph.finish();
        Ok(graph)
    }

    fn insert_edge(&mut self, a: usize, b: usize) -> Result<()> {
        let n = self.n();
        for unit in [a, b] {
            if unit >= n {
                return Err(Error::UnitOutOfRange { unit, n });
            }
        }
        if a == b {
            return Err(Error::InvalidArgument(format!("self-loop on unit {a}")));
        }
        if self.adjacency[a].contains(&b) {
            return Err(Error::InvalidArgument(format!("duplicate edge {a}-{b}")));
        }
        self.adjacency[a].push(b);
        self.adjacency[b].push(a);
        self.edge_count += 1;
        Ok(())
    }

    fn finish(&mut self) {
        for list in &mut self.adjacency {
            list.sort_unstable();
        }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sorted first-order neighbors of `unit`.
    pub fn neighbors(&self, unit: usize) -> &[usize] {
        &self.adjacency[unit]
    }

    pub fn degree(&self, unit: usize) -> usize {
        self.adjacency[unit].len()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edge_count as f64 / self.n() as f64
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        a < self.n() && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Units at shortest-path distance exactly `k` from `unit`, sorted.
    pub fn khop_neighbors(&self, unit: usize, k: usize) -> Result<Vec<usize>> {
        let n = self.n();
        if unit >= n {
            return Err(Error::UnitOutOfRange { unit, n });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("hop count must be at least 1".into()));
        }
        if k == 1 {
            return Ok(self.adjacency[unit].clone());
        }
        let mut dist = vec![usize::MAX; n];
        dist[unit] = 0;
        let mut queue = VecDeque::from([unit]);
        let mut ring = Vec::new();
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            if d == k {
                ring.push(u);
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = d + 1;
                    queue.push_back(v);
                }
            }
        }
        ring.sort_unstable();
        Ok(ring)
    }

    /// Exact-distance-`k` neighborhoods for every unit.
    pub fn khop_neighborhoods(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.n()).map(|i| self.khop_neighbors(i, k)).collect()
    }

    /// Edge-list text accepted by [`InterferenceGraph::parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# n={}\n", self.n());
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}
