//! Synthetic CSR graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Pareto};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphKind {
    /// Heavy-tailed out-degrees.
    PowerLaw,
    /// Degrees in [1, 8] with mean about 3, edges to nearby vertices.
    Road,
    /// The fixed 10-vertex example from [`hand_graph`].
    Hand,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::PowerLaw => "powerlaw",
            GraphKind::Road => "road",
            GraphKind::Hand => "hand",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub kind: GraphKind,
    pub row: Vec<i32>,
    pub col: Vec<i32>,
    /// Edge weights in [1, 9].
    pub weight: Vec<i32>,
}

impl Graph {
    pub fn vertices(&self) -> usize {
        self.row.len() - 1
    }

    pub fn edges(&self) -> usize {
        self.col.len()
    }

    pub fn degree(&self, v: usize) -> usize {
        (self.row[v + 1] - self.row[v]) as usize
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.vertices()).map(|v| self.degree(v)).collect()
    }

    pub fn neighbors(&self, v: usize) -> &[i32] {
        &self.col[self.row[v] as usize..self.row[v + 1] as usize]
    }

    fn from_adjacency(kind: GraphKind, adj: Vec<Vec<(i32, i32)>>) -> Graph {
        let mut row = vec![0];
        let mut col = Vec::new();
        let mut weight = Vec::new();
        for list in adj {
            for (v, w) in list {
                col.push(v);
                weight.push(w);
            }
            row.push(col.len() as i32);
        }
        Graph { kind, row, col, weight }
    }
}

/// Deterministic per `(kind, size, seed)`. `size` is clamped to at least 1.
pub fn generate_graph(kind: GraphKind, size: usize, seed: u64) -> Graph {
    if kind == GraphKind::Hand {
        return hand_graph();
    }
    let n = size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n == 1 {
        return Graph::from_adjacency(kind, vec![vec![]]);
    }
    let mut adj = Vec::with_capacity(n);
    match kind {
        GraphKind::PowerLaw => {
            let pareto = Pareto::new(1.0, 1.2).expect("valid parameters");
            for _ in 0..n {
                let d = (pareto.sample(&mut rng) as usize).clamp(1, n - 1);
                let list = (0..d)
                    .map(|_| (rng.gen_range(0..n) as i32, rng.gen_range(1..10)))
                    .collect();
                adj.push(list);
            }
        }
        GraphKind::Road => {
            let extra = Binomial::new(7, 2.0 / 7.0).expect("valid parameters");
            for u in 0..n {
                let d = 1 + extra.sample(&mut rng) as usize;
                let list = (0..d)
                    .map(|_| {
                        let off = rng.gen_range(1..=16) as i64 * if rng.gen_bool(0.5) { 1 } else { -1 };
                        let v = (u as i64 + off).rem_euclid(n as i64);
                        (v as i32, rng.gen_range(1..10))
                    })
                    .collect();
                adj.push(list);
            }
        }
        GraphKind::Hand => unreachable!(),
    }
    Graph::from_adjacency(kind, adj)
}

/// Ten vertices, source 0. Unit-weight levels: 0:{0} 1:{1,2} 2:{3,4,5}
/// 3:{6,7} 4:{8}; vertex 9 is unreachable.
pub fn hand_graph() -> Graph {
    let edges: [&[(i32, i32)]; 10] = [
        &[(1, 4), (2, 1)],
        &[(3, 1), (4, 2)],
        &[(1, 1), (5, 7)],
        &[(6, 3)],
        &[(6, 1), (7, 5)],
        &[(7, 1)],
        &[(8, 2)],
        &[(8, 1), (0, 1)],
        &[],
        &[(0, 1)],
    ];
    Graph::from_adjacency(GraphKind::Hand, edges.iter().map(|e| e.to_vec()).collect())
}

/// Breadth-first levels from vertex 0, -1 for unreachable.
pub fn bfs_levels(g: &Graph) -> Vec<i32> {
    let mut dist = vec![-1; g.vertices()];
    let mut frontier = vec![0usize];
    dist[0] = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in g.neighbors(u) {
                if dist[v as usize] == -1 {
                    dist[v as usize] = dist[u] + 1;
                    next.push(v as usize);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Shortest weighted distances from vertex 0 (Dijkstra), `inf` for
/// unreachable.
pub fn shortest_paths(g: &Graph, inf: i32) -> Vec<i32> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut dist = vec![inf; g.vertices()];
    let mut heap = BinaryHeap::new();
    dist[0] = 0;
    heap.push(Reverse((0, 0usize)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for e in g.row[u] as usize..g.row[u + 1] as usize {
            let v = g.col[e] as usize;
            let nd = d + g.weight[e];
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn road_degree_profile() {
        let g = generate_graph(GraphKind::Road, 1000, 7);
        let d = g.degrees();
        assert!(d.iter().all(|&x| (1..=8).contains(&x)));
        let mean = d.iter().sum::<usize>() as f64 / d.len() as f64;
        assert!((2.5..=3.5).contains(&mean), "{mean}");
    }

    #[test]
    fn single_vertex() {
        for k in [GraphKind::Road, GraphKind::PowerLaw] {
            let g = generate_graph(k, 1, 3);
            assert_eq!((g.vertices(), g.edges()), (1, 0));
        }
    }

    #[test]
    fn power_law_has_hubs() {
        let g = generate_graph(GraphKind::PowerLaw, 10_000, 1);
        assert!(g.degrees().into_iter().max().unwrap() >= 100);
    }

    #[test]
    fn hand_levels() {
        assert_eq!(bfs_levels(&hand_graph()), [0, 1, 1, 2, 2, 2, 3, 3, 4, -1]);
    }
}
