//! Undirected simple graphs and the topologies used in the experiments.
//!
//! Lattice vertices are indexed row-major, `i = y * width + x`, so a pixel
//! grid maps onto the graph without any lookup table.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Boundary condition of a square lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Free,
    Periodic,
}

/// An undirected graph without self-loops or multi-edges.
///
/// Edges keep the orientation they were created with; `(u, v)` means the
/// pairwise table of that edge is indexed `[s_u][s_v]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// A graph with `n` vertices and no edges.
    pub fn empty(n: usize) -> Self {
        Graph {
            n_vertices: n,
            edges: Vec::new(),
            adjacency: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n_vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); n_vertices];
        for &(u, v) in &edges {
            if u >= n_vertices || v >= n_vertices {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n_vertices} vertices"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        Ok(Graph {
            n_vertices,
            edges,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Connected-component labels, numbered in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n_vertices];
        let mut next = 0;
        let mut stack = Vec::new();
        for root in 0..self.n_vertices {
            if label[root] != usize::MAX {
                continue;
            }
            label[root] = next;
            stack.push(root);
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// True when the graph has no cycles (every component is a tree).
    pub fn is_forest(&self) -> bool {
        let n_components = self.components().into_iter().max().map_or(0, |c| c + 1);
        self.n_edges() + n_components == self.n_vertices
    }

    pub fn is_bipartite(&self) -> bool {
        let mut side = vec![u8::MAX; self.n_vertices];
        let mut stack = Vec::new();
        for root in 0..self.n_vertices {
            if side[root] != u8::MAX {
                continue;
            }
            side[root] = 0;
            stack.push(root);
            while let Some(u) = stack.pop() {
                for &v in &self.adjacency[u] {
                    if side[v] == u8::MAX {
                        side[v] = 1 - side[u];
                        stack.push(v);
                    } else if side[v] == side[u] {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Longest shortest path over all pairs in the same component.
    pub fn diameter(&self) -> usize {
        let mut best = 0;
        let mut dist = vec![usize::MAX; self.n_vertices];
        let mut queue = std::collections::VecDeque::new();
        for s in 0..self.n_vertices {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                best = best.max(dist[u]);
                for &v in &self.adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        best
    }

    /// Edge-list text: a header line `n <count>` followed by one `i j` per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n_vertices);
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    /// Parses the format written by [`Graph::to_edge_list`]. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("edge list", "missing `n <count>` header"))?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count
                .parse::<usize>()
                .map_err(|e| Error::parse("edge list", format!("bad vertex count: {e}")))?,
            _ => return Err(Error::parse("edge list", format!("bad header `{header}`"))),
        };
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) => edges.push((u, v)),
                _ => return Err(Error::parse("edge list", format!("bad edge line `{line}`"))),
            }
        }
        Graph::from_edges(n, edges)
    }

    /// Slot-indexed adjacency used by the message-passing engines.
    pub fn directed(&self) -> DirectedAdjacency {
        DirectedAdjacency::new(self)
    }
}

/// Four-neighbour grid of `width * height` vertices.
pub fn square_lattice(width: usize, height: usize, boundary: Boundary) -> Result<Graph> {
    if width == 0 || height == 0 {
        return Err(Error::param("lattice dimensions must be positive"));
    }
    let id = |x: usize, y: usize| y * width + x;
    let mut edges = Vec::new();
    match boundary {
        Boundary::Free => {
            for y in 0..height {
                for x in 0..width {
                    if x + 1 < width {
                        edges.push((id(x, y), id(x + 1, y)));
                    }
                    if y + 1 < height {
                        edges.push((id(x, y), id(x, y + 1)));
                    }
                }
            }
        }
        Boundary::Periodic => {
            if width < 3 || height < 3 {
                return Err(Error::DimensionTooSmall { width, height });
            }
            for y in 0..height {
                for x in 0..width {
                    edges.push((id(x, y), id((x + 1) % width, y)));
                    edges.push((id(x, y), id(x, (y + 1) % height)));
                }
            }
        }
    }
    Graph::from_edges(width * height, edges)
}

/// The chain `0 - 1 - ... - (n-1)`.
pub fn path_graph(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::param("path graph needs at least one vertex"));
    }
    Graph::from_edges(n, (1..n).map(|i| (i - 1, i)).collect())
}

/// All `n(n-1)/2` pairs, ordered `(i, j)` with `i < j`.
pub fn complete_graph(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::param("complete graph needs at least one vertex"));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j));
        }
    }
    Graph::from_edges(n, edges)
}

const MAX_PAIRING_ATTEMPTS: usize = 1_000_000;

/// Random simple `d`-regular graph from the pairing model.
///
/// Stubs are shuffled and paired in order; a pairing containing a self-loop
/// or a repeated edge is thrown away and the whole pairing is redrawn. The
/// result is not conditioned on being connected.
pub fn random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if (n * d) % 2 == 1 || d >= n {
        return Err(Error::Infeasible { n, d });
    }
    if d == 0 {
        return Ok(Graph::empty(n));
    }
    let mut rng = rng::stream(seed, Domain::Graph, 0);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    let mut seen = HashSet::with_capacity(n * d / 2);
    'attempt: for _ in 0..MAX_PAIRING_ATTEMPTS {
        stubs.shuffle(&mut rng);
        seen.clear();
        let mut edges = Vec::with_capacity(n * d / 2);
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (pair[0], pair[1]);
            if u == v || !seen.insert((u.min(v), u.max(v))) {
                continue 'attempt;
            }
            edges.push((u.min(v), u.max(v)));
        }
        return Graph::from_edges(n, edges);
    }
    Err(Error::Infeasible { n, d })
}

/// Compressed adjacency where every (vertex, neighbour) pair owns a slot.
///
/// Slot `s` in `slots(i)` stores data flowing *into* `i` from `neighbor[s]`;
/// `reverse[s]` is the slot of the opposite direction at the neighbour.
#[derive(Debug, Clone)]
pub struct DirectedAdjacency {
    offsets: Vec<usize>,
    neighbor: Vec<usize>,
    edge: Vec<usize>,
    reverse: Vec<usize>,
    // true when the owning vertex is the first endpoint of `edge`
    owner_first: Vec<bool>,
}

impl DirectedAdjacency {
    fn new(graph: &Graph) -> Self {
        let n = graph.n_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + graph.degree(i));
        }
        let total = offsets[n];
        let mut neighbor = vec![0; total];
        let mut edge = vec![0; total];
        let mut reverse = vec![0; total];
        let mut owner_first = vec![false; total];
        let mut fill = offsets[..n].to_vec();
        for (e, &(u, v)) in graph.edges().iter().enumerate() {
            let su = fill[u];
            let sv = fill[v];
            fill[u] += 1;
            fill[v] += 1;
            neighbor[su] = v;
            neighbor[sv] = u;
            edge[su] = e;
            edge[sv] = e;
            reverse[su] = sv;
            reverse[sv] = su;
            owner_first[su] = true;
        }
        DirectedAdjacency {
            offsets,
            neighbor,
            edge,
            reverse,
            owner_first,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.neighbor.len()
    }

    pub fn slots(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn neighbor(&self, slot: usize) -> usize {
        self.neighbor[slot]
    }

    pub fn edge(&self, slot: usize) -> usize {
        self.edge[slot]
    }

    pub fn reverse(&self, slot: usize) -> usize {
        self.reverse[slot]
    }

    pub fn owner_is_first(&self, slot: usize) -> bool {
        self.owner_first[slot]
    }

    /// Slot at `to` holding data that flows `from -> to`.
    pub fn slot_of(&self, from: usize, to: usize) -> Option<usize> {
        self.slots(to).find(|&s| self.neighbor[s] == from)
    }
}
