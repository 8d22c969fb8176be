//! Undirected simple graphs on `p` labelled nodes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    p: usize,
    adj: Vec<bool>,
    edges: usize,
}

/// Number of unordered pairs on `p` nodes.
pub fn num_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Pair `(i, j)`, `i < j`, for a linear index in row-major upper-triangle order.
pub fn pair_from_index(p: usize, mut k: usize) -> (usize, usize) {
    for i in 0..p {
        let row = p - i - 1;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    panic!("pair index out of range for p = {p}");
}

pub fn pair_index(p: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(j < p && i != j);
    i * (2 * p - i - 1) / 2 + (j - i - 1)
}

impl Graph {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            adj: vec![false; p * p],
            edges: 0,
        }
    }

    pub fn full(p: usize) -> Self {
        let mut g = Self::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                g.set_edge(i, j, true);
            }
        }
        g
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(p);
        for &(i, j) in edges {
            g.set_edge(i, j, true);
        }
        g
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_edges(&self) -> usize {
        self.edges
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.adj[i * self.p + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, present: bool) {
        assert!(i != j, "self-loops are not allowed");
        assert!(i < self.p && j < self.p, "node out of range");
        if self.adj[i * self.p + j] != present {
            self.adj[i * self.p + j] = present;
            self.adj[j * self.p + i] = present;
            if present {
                self.edges += 1;
            } else {
                self.edges -= 1;
            }
        }
    }

    pub fn toggle(&mut self, i: usize, j: usize) {
        let present = self.has_edge(i, j);
        self.set_edge(i, j, !present);
    }

    pub fn with_toggled(&self, i: usize, j: usize) -> Self {
        let mut g = self.clone();
        g.toggle(i, j);
        g
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges);
        for i in 0..self.p {
            for j in i + 1..self.p {
                if self.adj[i * self.p + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.p).filter(|&u| self.has_edge(v, u)).collect()
    }

    /// Relabels nodes: node `v` of `self` becomes node `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.p);
        let edges: Vec<(usize, usize)> = self.edges().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.p, &edges)
    }

    pub fn is_clique(&self, nodes: &[usize]) -> bool {
        nodes
            .iter()
            .enumerate()
            .all(|(a, &u)| nodes[a + 1..].iter().all(|&v| self.has_edge(u, v)))
    }

    /// Maximum cardinality search order. When the graph is chordal this
    /// is a perfect elimination order read backwards: each node's
    /// earlier-numbered neighbours form a clique.
    pub fn max_cardinality_order(&self) -> Vec<usize> {
        let mut weight = vec![0usize; self.p];
        let mut numbered = vec![false; self.p];
        let mut order = Vec::with_capacity(self.p);
        for _ in 0..self.p {
            let v = (0..self.p)
                .filter(|&v| !numbered[v])
                .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
                .expect("unnumbered node remains");
            numbered[v] = true;
            order.push(v);
            for u in self.neighbors(v) {
                if !numbered[u] {
                    weight[u] += 1;
                }
            }
        }
        order
    }

    /// Perfect ordering with each node's earlier neighbours, or `None`
    /// when the graph is not decomposable (chordal).
    pub fn perfect_sequence(&self) -> Option<Vec<(usize, Vec<usize>)>> {
        let order = self.max_cardinality_order();
        let mut pos = vec![0; self.p];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut seq = Vec::with_capacity(self.p);
        for (k, &v) in order.iter().enumerate() {
            let earlier: Vec<usize> = self.neighbors(v).into_iter().filter(|&u| pos[u] < k).collect();
            if !self.is_clique(&earlier) {
                return None;
            }
            seq.push((v, earlier));
        }
        Some(seq)
    }

    pub fn is_decomposable(&self) -> bool {
        self.perfect_sequence().is_some()
    }
}

/// Serialized form: node count plus edge list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    pub p: usize,
    pub edges: Vec<(usize, usize)>,
}

impl From<&Graph> for GraphRecord {
    fn from(g: &Graph) -> Self {
        Self {
            p: g.p(),
            edges: g.edges(),
        }
    }
}

impl From<&GraphRecord> for Graph {
    fn from(r: &GraphRecord) -> Self {
        Graph::from_edges(r.p, &r.edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_round_trips() {
        for p in 2..9 {
            for k in 0..num_pairs(p) {
                let (i, j) = pair_from_index(p, k);
                assert!(i < j && j < p);
                assert_eq!(pair_index(p, i, j), k);
                assert_eq!(pair_index(p, j, i), k);
            }
        }
        assert_eq!(num_pairs(19), 171);
    }

    #[test]
    fn toggling_tracks_edge_count() {
        let mut g = Graph::empty(4);
        g.toggle(0, 3);
        g.toggle(2, 1);
        assert_eq!(g.num_edges(), 2);
        assert!(g.has_edge(3, 0) && g.has_edge(1, 2));
        g.toggle(3, 0);
        assert_eq!(g.edges(), vec![(1, 2)]);
        assert_eq!(Graph::full(5).num_edges(), 10);
    }

    #[test]
    fn chordality() {
        assert!(Graph::full(5).is_decomposable());
        assert!(Graph::empty(5).is_decomposable());
        let path = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        assert!(path.is_decomposable());
        let cycle4 = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!(!cycle4.is_decomposable());
        let mut chorded = cycle4.clone();
        chorded.set_edge(0, 2, true);
        assert!(chorded.is_decomposable());
        for k in 0..8u32 {
            let edges: Vec<(usize, usize)> = (0..3)
                .filter(|b| k & (1 << b) != 0)
                .map(|b| pair_from_index(3, b as usize))
                .collect();
            assert!(Graph::from_edges(3, &edges).is_decomposable());
        }
    }

    #[test]
    fn relabel_moves_edges() {
        let g = Graph::from_edges(3, &[(0, 1)]);
        let h = g.relabel(&[2, 0, 1]);
        assert_eq!(h.edges(), vec![(0, 2)]);
    }
}
