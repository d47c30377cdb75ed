//! Undirected connected communication graph with a fixed edge orientation,
//! incidence/Laplacian structure and the blockwise kernels the solvers use.
//!
//! Orientation is bookkeeping only: edge `l = (head, tail)` puts `+1` at the
//! head and `-1` at the tail of the incidence row. Kronecker lifts such as
//! `L (x) I_m` are never materialized; the kernels apply them per node/edge.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CommGraph {
    n: usize,
    /// Oriented edges `(head, tail)`, 0-based.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds a validated graph from 0-based oriented edges. The orientation
    /// is kept as given.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut neighbors = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (l, &(head, tail)) in edges.iter().enumerate() {
            if head >= n || tail >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge {l} = ({head}, {tail}) references a node outside 0..{n}"
                )));
            }
            if head == tail {
                return Err(Error::InvalidGraph(format!(
                    "edge {l} = ({head}, {tail}) is a self-loop"
                )));
            }
            let key = (head.min(tail), head.max(tail));
            if !seen.insert(key) {
                return Err(Error::InvalidGraph(format!(
                    "edge {l} = ({head}, {tail}) duplicates an earlier edge"
                )));
            }
            neighbors[head].push(tail);
            neighbors[tail].push(head);
            out_edges[head].push(l);
            in_edges[tail].push(l);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }

        let graph = Self {
            n,
            edges: edges.to_vec(),
            neighbors,
            out_edges,
            in_edges,
        };
        if !graph.is_connected() {
            return Err(Error::InvalidGraph(format!(
                "graph with {n} nodes and {} edges is not connected",
                edges.len()
            )));
        }
        Ok(graph)
    }

    /// Builds from 1-based node indices (the wire format).
    pub fn from_one_based(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut shifted = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) outside 1..={n}"
                )));
            }
            shifted.push((i - 1, j - 1));
        }
        Self::new(n, &shifted)
    }

    fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.n];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.neighbors[v] {
                if !visited[w] {
                    visited[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Indices of edges whose head is `i`.
    pub fn out_edges(&self, i: usize) -> &[usize] {
        &self.out_edges[i]
    }

    /// Indices of edges whose tail is `i`.
    pub fn in_edges(&self, i: usize) -> &[usize] {
        &self.in_edges[i]
    }

    /// Dense oriented incidence matrix, `M x N`.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.edges.len(), self.n);
        for (l, &(head, tail)) in self.edges.iter().enumerate() {
            e[(l, head)] = 1.0;
            e[(l, tail)] = -1.0;
        }
        e
    }

    /// Dense Laplacian built as degree minus adjacency. Equals `E'E` for the
    /// oriented incidence `E`; tests compare the two routes.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            l[(i, i)] = self.neighbors[i].len() as f64;
            for &j in &self.neighbors[i] {
                l[(i, j)] = -1.0;
            }
        }
        l
    }

    /// `(L (x) I_m) v` for a stacked per-node vector, applied blockwise:
    /// block `i` becomes `sum_{j in N_i} (v_i - v_j)`.
    pub fn apply_laplacian(&self, v: &DVector<f64>, m: usize) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.n * m);
        let mut out = DVector::zeros(self.n * m);
        for i in 0..self.n {
            let vi = v.rows(i * m, m);
            let mut acc = DVector::zeros(m);
            for &j in &self.neighbors[i] {
                acc += vi - v.rows(j * m, m);
            }
            out.rows_mut(i * m, m).copy_from(&acc);
        }
        out
    }

    /// `(E (x) I_m) v`: per edge `l = (head, tail)`, block `l` becomes
    /// `v_head - v_tail`.
    pub fn apply_incidence(&self, v: &DVector<f64>, m: usize) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.n * m);
        let mut out = DVector::zeros(self.edges.len() * m);
        for (l, &(head, tail)) in self.edges.iter().enumerate() {
            let diff = v.rows(head * m, m) - v.rows(tail * m, m);
            out.rows_mut(l * m, m).copy_from(&diff);
        }
        out
    }

    /// `(E' (x) I_m) w` for a stacked per-edge vector: block `i` becomes
    /// `sum_{l in out(i)} w_l - sum_{l in in(i)} w_l`.
    pub fn apply_incidence_transpose(&self, w: &DVector<f64>, m: usize) -> DVector<f64> {
        debug_assert_eq!(w.len(), self.edges.len() * m);
        let mut out = DVector::zeros(self.n * m);
        for i in 0..self.n {
            let mut acc = DVector::zeros(m);
            for &l in &self.out_edges[i] {
                acc += w.rows(l * m, m);
            }
            for &l in &self.in_edges[i] {
                acc -= w.rows(l * m, m);
            }
            out.rows_mut(i * m, m).copy_from(&acc);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_graph() {
        let g = CommGraph::from_one_based(2, &[(1, 2)]).unwrap();
        let e = g.incidence();
        assert_eq!(e, DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        let l = g.laplacian();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn path_laplacian() {
        let g = CommGraph::from_one_based(3, &[(1, 2), (2, 3)]).unwrap();
        let l = g.laplacian();
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(l, expect);
    }

    #[test]
    fn ring_of_four_is_circulant() {
        let g = CommGraph::from_one_based(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]).unwrap();
        let l = g.laplacian();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                2.0, -1.0, 0.0, -1.0, //
                -1.0, 2.0, -1.0, 0.0, //
                0.0, -1.0, 2.0, -1.0, //
                -1.0, 0.0, -1.0, 2.0,
            ],
        );
        assert_eq!(l, expect);
    }

    #[test]
    fn construction_errors_name_the_offense() {
        let err = CommGraph::from_one_based(3, &[(1, 1)]).unwrap_err();
        assert!(err.to_string().contains("self-loop"));
        let err = CommGraph::from_one_based(3, &[(1, 2), (2, 1), (2, 3)]).unwrap_err();
        assert!(err.to_string().contains("duplicates"));
        let err = CommGraph::from_one_based(4, &[(1, 2), (3, 4)]).unwrap_err();
        assert!(err.to_string().contains("not connected"));
    }

    /// Row-echelon rank over f64 with partial pivoting; independent of the
    /// linear-algebra crate.
    fn elimination_rank(mat: &DMatrix<f64>) -> usize {
        let mut a = mat.clone();
        let (rows, cols) = a.shape();
        let mut rank = 0;
        let mut row = 0;
        for col in 0..cols {
            let mut pivot = row;
            for r in row..rows {
                if a[(r, col)].abs() > a[(pivot, col)].abs() {
                    pivot = r;
                }
            }
            if row >= rows || a[(pivot, col)].abs() < 1e-9 {
                continue;
            }
            a.swap_rows(row, pivot);
            for r in (row + 1)..rows {
                let factor = a[(r, col)] / a[(row, col)];
                for c in col..cols {
                    a[(r, c)] -= factor * a[(row, c)];
                }
            }
            row += 1;
            rank += 1;
        }
        rank
    }

    fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> CommGraph {
        // Random spanning tree, then a few extra edges.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for v in 1..n {
            let parent = rng.gen_range(0..v);
            edges.push((parent.min(v), parent.max(v)));
        }
        let extra = rng.gen_range(0..=n);
        for _ in 0..extra {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if !edges.contains(&key) {
                edges.push(key);
            }
        }
        CommGraph::new(n, &edges).unwrap()
    }

    #[test]
    fn incidence_and_laplacian_structure_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..12);
            let g = random_connected_graph(&mut rng, n);
            let e = g.incidence();
            let l = g.laplacian();

            // Rows of E sum to zero with exactly one +1 and one -1.
            let ones = DVector::from_element(n, 1.0);
            assert!((&e * &ones).amax() < 1e-15);
            for l_idx in 0..g.edge_count() {
                let row = e.row(l_idx);
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
            }

            // L = E'E entrywise, L 1 = 0 and 1' L = 0.
            assert!(((e.transpose() * &e) - &l).amax() < 1e-14);
            assert!((&l * &ones).amax() < 1e-14);
            assert!((l.transpose() * &ones).amax() < 1e-14);

            // rank(E) = N - 1 for connected graphs.
            assert_eq!(elimination_rank(&e), n - 1);

            // Second-smallest eigenvalue is positive, kernel dimension 1.
            let mut eig: Vec<f64> = l.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!(eig[0].abs() < 1e-10);
            assert!(eig[1] > 1e-10);
        }
    }

    #[test]
    fn orientation_flip_leaves_laplacian_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_connected_graph(&mut rng, 7);
        let flip = rng.gen_range(0..g.edge_count());
        let mut edges = g.edges().to_vec();
        edges[flip] = (edges[flip].1, edges[flip].0);
        let g2 = CommGraph::new(7, &edges).unwrap();
        assert_eq!(g.laplacian(), g2.laplacian());
    }

    #[test]
    fn blockwise_kernels_match_dense_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let n = rng.gen_range(2..8);
            let m = rng.gen_range(1..4);
            let g = random_connected_graph(&mut rng, n);
            let e = g.incidence();
            let l = g.laplacian();
            let kron = |a: &DMatrix<f64>| a.kronecker(&DMatrix::identity(m, m));

            let v = DVector::from_fn(n * m, |_, _| rng.gen_range(-1.0..1.0));
            let w = DVector::from_fn(g.edge_count() * m, |_, _| rng.gen_range(-1.0..1.0));

            assert!((g.apply_laplacian(&v, m) - kron(&l) * &v).amax() < 1e-13);
            assert!((g.apply_incidence(&v, m) - kron(&e) * &v).amax() < 1e-13);
            assert!(
                (g.apply_incidence_transpose(&w, m) - kron(&e.transpose()) * &w).amax() < 1e-13
            );
        }
    }

    proptest! {
        #[test]
        fn prop_laplacian_gram_identity(n in 2usize..10, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_connected_graph(&mut rng, n);
            let e = g.incidence();
            let l = g.laplacian();
            prop_assert!(((e.transpose() * &e) - &l).amax() < 1e-14);
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((&l * &ones).amax() < 1e-14);
        }
    }
}
