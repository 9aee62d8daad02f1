//! Undirected static communication graphs.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Undirected simple graph on agents `0..m`. Edges are stored as `(i, j)`
/// with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGraph {
    Path,
    Ring,
    Complete,
    Star,
}

impl FromStr for NamedGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(NamedGraph::Path),
            "ring" => Ok(NamedGraph::Ring),
            "complete" => Ok(NamedGraph::Complete),
            "star" => Ok(NamedGraph::Star),
            other => Err(Error::invalid(format!("unknown graph kind '{other}'"))),
        }
    }
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops and
    /// out-of-range endpoints. Duplicate edges collapse.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if i >= m || j >= m {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for m = {m}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { m, edges: set })
    }

    /// G(m, p): each of the `m(m-1)/2` pairs is kept independently with
    /// probability `p`. Pairs are visited in lexicographic order so the
    /// result depends only on `(m, p, seed)`.
    pub fn erdos_renyi(m: usize, p: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m must be positive"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
        }
        let mut rng = SeededRng::new(seed);
        let mut edges = BTreeSet::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.bernoulli(p) {
                    edges.insert((i, j));
                }
            }
        }
        Ok(Self { m, edges })
    }

    /// Draws Erdős–Rényi graphs with seeds `seed, seed+1, …` until one is
    /// connected. Returns the graph and the number of rejected draws.
    pub fn erdos_renyi_connected(m: usize, p: f64, seed: u64, max_retries: usize) -> Result<(Self, usize)> {
        for retry in 0..=max_retries {
            let g = Self::erdos_renyi(m, p, seed.wrapping_add(retry as u64))?;
            if g.is_connected() {
                if retry > 0 {
                    log::info!("erdos_renyi(m={m}, p={p}): connected after {retry} resamples");
                }
                return Ok((g, retry));
            }
        }
        Err(Error::Disconnected)
    }

    pub fn named(kind: NamedGraph, m: usize) -> Result<Self> {
        let min = if kind == NamedGraph::Ring { 3 } else { 2 };
        if m < min {
            return Err(Error::invalid(format!("{kind:?} graph needs m >= {min}, got {m}")));
        }
        let edges: Vec<(usize, usize)> = match kind {
            NamedGraph::Path => (0..m - 1).map(|i| (i, i + 1)).collect(),
            NamedGraph::Ring => (0..m).map(|i| (i, (i + 1) % m)).collect(),
            NamedGraph::Complete => (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect(),
            NamedGraph::Star => (1..m).map(|j| (0, j)).collect(),
        };
        Self::from_edges(m, edges)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
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
        count == self.m
    }

    /// Edge-list text: first line `m`, then one `i j` pair per line, 0-based.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.m);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let m: usize = header.parse().map_err(|_| Error::Parse(format!("bad node count '{header}'")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.ok_or_else(|| Error::Parse(format!("short edge line '{line}'")))?
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad edge line '{line}'")))
            };
            let i = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Parse(format!("trailing tokens in '{line}'")));
            }
            edges.push((i, j));
        }
        Self::from_edges(m, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn union_find_connected(g: &Graph) -> bool {
        let mut parent: Vec<usize> = (0..g.m()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (i, j) in g.edges() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..g.m()).all(|x| find(&mut parent, x) == root)
    }

    #[test]
    fn full_probability_gives_complete_graph() {
        let g = Graph::erdos_renyi(4, 1.0, 99).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g, Graph::named(NamedGraph::Complete, 4).unwrap());
    }

    #[test]
    fn zero_probability_gives_edgeless_graph() {
        let g = Graph::erdos_renyi(3, 0.0, 5).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert!(!g.is_connected());
    }

    #[test]
    fn fifty_node_draw() {
        let g = Graph::erdos_renyi(50, 0.05, 1).unwrap();
        assert_eq!(g.m(), 50);
        let (c, _) = Graph::erdos_renyi_connected(50, 0.05, 1, 1000).unwrap();
        assert!(c.is_connected());
    }

    #[test]
    fn named_graphs() {
        let p = Graph::named(NamedGraph::Path, 3).unwrap();
        assert_eq!(p.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert!(p.is_connected());
        assert_eq!(Graph::named(NamedGraph::Complete, 4).unwrap().edge_count(), 6);
        assert_eq!(Graph::named(NamedGraph::Star, 4).unwrap().degrees()[0], 3);
        assert_eq!(Graph::named(NamedGraph::Ring, 5).unwrap().edge_count(), 5);
        assert!(Graph::named(NamedGraph::Ring, 2).is_err());
        assert!(Graph::named(NamedGraph::Path, 1).is_err());
    }

    #[test]
    fn rejects_self_loops() {
        assert!(Graph::from_edges(3, [(1, 1)]).is_err());
        assert!(Graph::from_edges(3, [(0, 3)]).is_err());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = Graph::from_edges(3, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn edge_list_parse_errors() {
        assert!(Graph::from_edge_list("").is_err());
        assert!(Graph::from_edge_list("3\n0 x\n").is_err());
        assert!(Graph::from_edge_list("3\n0 1 2\n").is_err());
    }

    #[test]
    fn single_node_is_connected() {
        assert!(Graph::from_edges(1, []).unwrap().is_connected());
    }

    proptest! {
        #[test]
        fn reproducible(m in 1usize..30, p in 0.0f64..1.0, seed in any::<u64>()) {
            prop_assert_eq!(Graph::erdos_renyi(m, p, seed).unwrap(), Graph::erdos_renyi(m, p, seed).unwrap());
        }

        #[test]
        fn bfs_agrees_with_union_find(m in 1usize..=6, p in 0.0f64..1.0, seed in any::<u64>()) {
            let g = Graph::erdos_renyi(m, p, seed).unwrap();
            prop_assert_eq!(g.is_connected(), union_find_connected(&g));
        }

        #[test]
        fn edge_list_round_trip(m in 1usize..20, p in 0.0f64..1.0, seed in any::<u64>()) {
            let g = Graph::erdos_renyi(m, p, seed).unwrap();
            prop_assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
        }
    }
}
