//! Undirected simple graphs with dense node features.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Immutable undirected graph.
///
/// Edges are stored canonically as `(u, v)` with `u < v`, sorted
/// lexicographically; edge feature rows follow the same order. Neighbour
/// lists are sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_feats: Tensor,
    edge_feats: Option<Tensor>,
    degrees: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Validates and normalises a graph.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_feats: Tensor,
        edge_feats: Option<Tensor>,
    ) -> Result<Graph> {
        if node_feats.rows() != num_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {num_nodes} nodes",
                node_feats.rows()
            )));
        }
        if let Some(ef) = &edge_feats {
            if ef.rows() != edges.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} edge feature rows for {} edges",
                    ef.rows(),
                    edges.len()
                )));
            }
        }
        let mut canon: Vec<((usize, usize), usize)> = Vec::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            for x in [u, v] {
                if x >= num_nodes {
                    return Err(Error::NodeOutOfRange { index: x, num_nodes });
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            canon.push(((u.min(v), u.max(v)), i));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0].0 == w[1].0) {
            let (u, v) = w[0].0;
            return Err(Error::DuplicateEdge(u, v));
        }
        let edge_feats = edge_feats.map(|ef| {
            let order: Vec<usize> = canon.iter().map(|(_, i)| *i).collect();
            ef.select_rows(&order)
        });
        let edges: Vec<(usize, usize)> = canon.into_iter().map(|(e, _)| e).collect();
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let degrees = adjacency.iter().map(Vec::len).collect();
        Ok(Graph { num_nodes, edges, node_feats, edge_feats, degrees, adjacency })
    }

    /// Graph whose nodes all carry the single feature `1.0`.
    pub fn with_constant_features(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Graph> {
        Graph::new(num_nodes, edges, Tensor::filled(num_nodes, 1, 1.0), None)
    }

    /// Cycle `C_n` with constant features.
    pub fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::with_constant_features(n, &edges).expect("cycle needs n >= 3")
    }

    /// Path `P_n` with constant features.
    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::with_constant_features(n, &edges).expect("valid path")
    }

    pub fn complete(n: usize) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v));
            }
        }
        Graph::with_constant_features(n, &edges).expect("valid clique")
    }

    /// Disjoint union; `other`'s nodes are shifted after `self`'s.
    pub fn disjoint_union(&self, other: &Graph) -> Result<Graph> {
        let shift = self.num_nodes;
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(u, v)| (u + shift, v + shift)));
        let mut rows: Vec<&[f64]> = (0..self.num_nodes).map(|v| self.node_feats.row(v)).collect();
        rows.extend((0..other.num_nodes).map(|v| other.node_feats.row(v)));
        let feats = Tensor::from_rows(&rows)?;
        let edge_feats = match (&self.edge_feats, &other.edge_feats) {
            (None, None) => None,
            (Some(a), Some(b)) => {
                let mut r: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).collect();
                r.extend((0..b.rows()).map(|i| b.row(i)));
                Some(Tensor::from_rows(&r)?)
            }
            _ => return Err(Error::DimensionMismatch("only one graph has edge features".into())),
        };
        Graph::new(shift + other.num_nodes, &edges, feats, edge_feats)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_feats(&self) -> &Tensor {
        &self.node_feats
    }

    pub fn feat_dim(&self) -> usize {
        self.node_feats.cols()
    }

    pub fn edge_feats(&self) -> Option<&Tensor> {
        self.edge_feats.as_ref()
    }

    pub fn edge_dim(&self) -> Option<usize> {
        self.edge_feats.as_ref().map(Tensor::cols)
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.get(u).is_some_and(|a| a.binary_search(&v).is_ok())
    }

    /// Index of canonical edge `{u, v}` in [`Graph::edges`].
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&(u.min(v), u.max(v))).ok()
    }

    /// Same structure with a new feature matrix.
    pub fn with_node_feats(&self, node_feats: Tensor) -> Result<Graph> {
        if node_feats.rows() != self.num_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} nodes",
                node_feats.rows(),
                self.num_nodes
            )));
        }
        Ok(Graph { node_feats, ..self.clone() })
    }

    /// Appends `count` isolated nodes with zero features.
    pub fn with_isolated_nodes(&self, count: usize) -> Graph {
        let mut feats = self.node_feats.data().to_vec();
        feats.resize(feats.len() + count * self.feat_dim(), 0.0);
        let node_feats = Tensor::from_vec(self.num_nodes + count, self.feat_dim(), feats).expect("sized");
        let mut adjacency = self.adjacency.clone();
        adjacency.resize(self.num_nodes + count, Vec::new());
        let mut degrees = self.degrees.clone();
        degrees.resize(self.num_nodes + count, 0);
        Graph {
            num_nodes: self.num_nodes + count,
            edges: self.edges.clone(),
            node_feats,
            edge_feats: self.edge_feats.clone(),
            degrees,
            adjacency,
        }
    }

    fn check_node(&self, u: usize) -> Result<()> {
        if u >= self.num_nodes {
            return Err(Error::NodeOutOfRange { index: u, num_nodes: self.num_nodes });
        }
        Ok(())
    }

    /// Breadth-first distances from `u`; unreachable nodes are `None`.
    pub fn distances_from(&self, u: usize) -> Result<Vec<Option<usize>>> {
        self.check_node(u)?;
        let mut dist = vec![None; self.num_nodes];
        dist[u] = Some(0);
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            let d = dist[x].expect("queued nodes have a distance");
            for &y in &self.adjacency[x] {
                if dist[y].is_none() {
                    dist[y] = Some(d + 1);
                    queue.push_back(y);
                }
            }
        }
        Ok(dist)
    }

    /// All nodes within `k` hops of `u`, `u` included.
    pub fn k_hop_neighborhood(&self, u: usize, k: usize) -> Result<NodeSet> {
        self.check_node(u)?;
        let mut seen = vec![false; self.num_nodes];
        seen[u] = true;
        let mut frontier = vec![u];
        for _ in 0..k {
            let mut next = Vec::new();
            for &x in &frontier {
                for &y in &self.adjacency[x] {
                    if !seen[y] {
                        seen[y] = true;
                        next.push(y);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        Ok(NodeSet((0..self.num_nodes).filter(|&v| seen[v]).collect()))
    }

    /// Subgraph on `nodes` keeping every edge with both ends inside.
    pub fn induced_subgraph(&self, nodes: &NodeSet, root: usize) -> Result<InducedSubgraph> {
        if let Some(&bad) = nodes.0.iter().find(|&&v| v >= self.num_nodes) {
            return Err(Error::NodeOutOfRange { index: bad, num_nodes: self.num_nodes });
        }
        let root_local = nodes.position(root).ok_or(Error::RootNotInSet(root))?;
        let mut edges = Vec::new();
        let mut edge_rows = Vec::new();
        for (lu, &u) in nodes.0.iter().enumerate() {
            for &v in &self.adjacency[u] {
                if v <= u {
                    continue;
                }
                if let Some(lv) = nodes.position(v) {
                    edges.push((lu, lv));
                    edge_rows.push(self.edge_index(u, v).expect("adjacent"));
                }
            }
        }
        let feats = self.node_feats.select_rows(&nodes.0);
        let edge_feats = self.edge_feats.as_ref().map(|ef| ef.select_rows(&edge_rows));
        let graph = Graph::new(nodes.len(), &edges, feats, edge_feats)?;
        Ok(InducedSubgraph { graph, root_local, mapping: nodes.0.clone() })
    }

    /// Relabels node `v` as `pi[v]`.
    pub fn permute(&self, pi: &Permutation) -> Result<Graph> {
        if pi.len() != self.num_nodes {
            return Err(Error::InvalidPermutation(format!(
                "length {} for {} nodes",
                pi.len(),
                self.num_nodes
            )));
        }
        let inv = pi.inverse();
        let feats = self.node_feats.select_rows(inv.as_slice());
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (pi.apply(u), pi.apply(v))).collect();
        Graph::new(self.num_nodes, &edges, feats, self.edge_feats.clone())
    }
}

/// Strictly increasing list of node indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    /// Sorts and deduplicates.
    pub fn from_nodes(mut nodes: Vec<usize>) -> NodeSet {
        nodes.sort_unstable();
        nodes.dedup();
        NodeSet(nodes)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn position(&self, v: usize) -> Option<usize> {
        self.0.binary_search(&v).ok()
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.0.iter().all(|&v| other.contains(v))
    }
}

/// Subgraph centred on a node, with the map back to parent indices.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedSubgraph {
    pub graph: Graph,
    pub root_local: usize,
    /// `mapping[local] = global`.
    pub mapping: Vec<usize>,
}

/// Bijection on `0..n`; node `v` is sent to `self.apply(v)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Permutation> {
        let mut seen = vec![false; map.len()];
        for &t in &map {
            if t >= map.len() || seen[t] {
                return Err(Error::InvalidPermutation(format!("{map:?} is not a bijection")));
            }
            seen[t] = true;
        }
        Ok(Permutation(map))
    }

    pub fn identity(n: usize) -> Permutation {
        Permutation((0..n).collect())
    }

    pub fn random(n: usize, rng: &mut crate::rng::Rng) -> Permutation {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation(map)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn apply(&self, v: usize) -> usize {
        self.0[v]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (v, &t) in self.0.iter().enumerate() {
            inv[t] = v;
        }
        Permutation(inv)
    }

    /// Reorders the rows of `t` so that row `pi(v)` of the result is row `v`.
    pub fn permute_rows(&self, t: &Tensor) -> Tensor {
        t.select_rows(self.inverse().as_slice())
    }
}
