//! Public memory with bounded commit histories.
//!
//! Each agent owns public cells for its strategy block, multiplier block and
//! auxiliary (node variable plus change accumulator, or the out-edge
//! variables). A commit at step `k` becomes visible from `k + 1`. Reads ask
//! for the state "as of time t": the newest commit visible at `t`. Since at
//! most one agent commits per step, keeping `delay_bound + 2` commits per
//! cell is enough to answer every read whose staleness is within the bound.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::game::GameModel;
use crate::graph::CommGraph;

#[derive(Debug, Clone)]
pub(crate) struct CellHistory {
    /// `(visible_from, value)` with strictly increasing keys.
    entries: VecDeque<(u64, DVector<f64>)>,
    cap: usize,
}

impl CellHistory {
    fn new(initial: DVector<f64>, cap: usize) -> Self {
        let mut entries = VecDeque::with_capacity(cap);
        entries.push_back((0, initial));
        Self { entries, cap }
    }

    fn commit(&mut self, visible_from: u64, value: DVector<f64>) {
        debug_assert!(self.entries.back().is_none_or(|(t, _)| *t < visible_from));
        self.entries.push_back((visible_from, value));
        while self.entries.len() > self.cap {
            self.entries.pop_front();
        }
    }

    /// Newest value visible at time `t`.
    fn value_at(&self, t: u64) -> &DVector<f64> {
        let mut chosen = None;
        for (vis, val) in self.entries.iter() {
            if *vis <= t {
                chosen = Some(val);
            } else {
                break;
            }
        }
        chosen.unwrap_or_else(|| &self.entries.front().expect("history never empty").1)
    }

    fn latest(&self) -> &DVector<f64> {
        &self.entries.back().expect("history never empty").1
    }
}

/// Auxiliary cells, depending on the algorithm variant.
#[derive(Debug, Clone)]
pub(crate) enum AuxCells {
    /// Per-node auxiliary plus the accumulator of neighbour multiplier
    /// changes since the owner's last snapshot.
    Node {
        z: Vec<CellHistory>,
        mu: Vec<DVector<f64>>,
    },
    /// Per-edge auxiliaries, each written only by the edge's head.
    Edge { sigma: Vec<CellHistory> },
}

/// Shared public memory of one asynchronous run.
#[derive(Debug, Clone)]
pub struct MemoryBoard {
    pub(crate) x: Vec<CellHistory>,
    pub(crate) lambda: Vec<CellHistory>,
    pub(crate) aux: AuxCells,
    m: usize,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl MemoryBoard {
    fn base(game: &GameModel, delay_bound: usize) -> (Vec<CellHistory>, Vec<CellHistory>, usize) {
        let cap = delay_bound + 2;
        let m = game.n_constraints();
        let x = game
            .players()
            .iter()
            .map(|p| CellHistory::new(p.project(&DVector::zeros(p.dim)), cap))
            .collect();
        let lambda = (0..game.n_players())
            .map(|_| CellHistory::new(DVector::zeros(m), cap))
            .collect();
        (x, lambda, cap)
    }

    /// Board for the node-variable algorithm: zero auxiliaries and
    /// accumulators, strategies projected from the origin.
    pub fn new_node(game: &GameModel, graph: &CommGraph, delay_bound: usize) -> Self {
        let (x, lambda, cap) = Self::base(game, delay_bound);
        let m = game.n_constraints();
        let aux = AuxCells::Node {
            z: (0..graph.node_count())
                .map(|_| CellHistory::new(DVector::zeros(m), cap))
                .collect(),
            mu: vec![DVector::zeros(m); graph.node_count()],
        };
        Self {
            x,
            lambda,
            aux,
            m,
            dims: game.players().iter().map(|p| p.dim).collect(),
            offsets: (0..game.n_players()).map(|i| game.offset(i)).collect(),
        }
    }

    /// Board for the edge-variable algorithm: zero edge auxiliaries.
    pub fn new_edge(game: &GameModel, graph: &CommGraph, delay_bound: usize) -> Self {
        let (x, lambda, cap) = Self::base(game, delay_bound);
        let m = game.n_constraints();
        let aux = AuxCells::Edge {
            sigma: (0..graph.edge_count())
                .map(|_| CellHistory::new(DVector::zeros(m), cap))
                .collect(),
        };
        Self {
            x,
            lambda,
            aux,
            m,
            dims: game.players().iter().map(|p| p.dim).collect(),
            offsets: (0..game.n_players()).map(|i| game.offset(i)).collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.x.len()
    }

    /// Stacked strategy profile with per-agent staleness: block `j` is agent
    /// `j`'s value as of `k - delays[j]`.
    pub fn snapshot_x(&self, k: u64, delays: &[usize]) -> DVector<f64> {
        let total: usize = self.dims.iter().sum();
        let mut out = DVector::zeros(total);
        for j in 0..self.n_agents() {
            let t = k - delays[j] as u64;
            out.rows_mut(self.offsets[j], self.dims[j])
                .copy_from(self.x[j].value_at(t));
        }
        out
    }

    /// Stacked multipliers with per-agent staleness.
    pub fn snapshot_lambda(&self, k: u64, delays: &[usize]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_agents() * self.m);
        for j in 0..self.n_agents() {
            let t = k - delays[j] as u64;
            out.rows_mut(j * self.m, self.m)
                .copy_from(self.lambda[j].value_at(t));
        }
        out
    }

    pub fn latest_x_full(&self) -> DVector<f64> {
        let total: usize = self.dims.iter().sum();
        let mut out = DVector::zeros(total);
        for j in 0..self.n_agents() {
            out.rows_mut(self.offsets[j], self.dims[j])
                .copy_from(self.x[j].latest());
        }
        out
    }

    pub fn latest_lambda_full(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_agents() * self.m);
        for j in 0..self.n_agents() {
            out.rows_mut(j * self.m, self.m).copy_from(self.lambda[j].latest());
        }
        out
    }

    /// Node-auxiliary vector: the stored cells for the node variant, the
    /// incidence aggregate of the edge variables otherwise.
    pub fn latest_z_full(&self, graph: &CommGraph) -> DVector<f64> {
        match &self.aux {
            AuxCells::Node { z, .. } => {
                let mut out = DVector::zeros(self.n_agents() * self.m);
                for j in 0..self.n_agents() {
                    out.rows_mut(j * self.m, self.m).copy_from(z[j].latest());
                }
                out
            }
            AuxCells::Edge { sigma } => {
                let mut stacked = DVector::zeros(sigma.len() * self.m);
                for (l, cell) in sigma.iter().enumerate() {
                    stacked.rows_mut(l * self.m, self.m).copy_from(cell.latest());
                }
                graph.apply_incidence_transpose(&stacked, self.m)
            }
        }
    }

    pub fn latest_sigma_full(&self) -> Option<DVector<f64>> {
        match &self.aux {
            AuxCells::Edge { sigma } => {
                let mut stacked = DVector::zeros(sigma.len() * self.m);
                for (l, cell) in sigma.iter().enumerate() {
                    stacked.rows_mut(l * self.m, self.m).copy_from(cell.latest());
                }
                Some(stacked)
            }
            AuxCells::Node { .. } => None,
        }
    }

    pub(crate) fn latest_sigma(&self, l: usize) -> &DVector<f64> {
        match &self.aux {
            AuxCells::Edge { sigma } => sigma[l].latest(),
            AuxCells::Node { .. } => panic!("edge cells on a node board"),
        }
    }

    pub(crate) fn latest_z(&self, i: usize) -> &DVector<f64> {
        match &self.aux {
            AuxCells::Node { z, .. } => z[i].latest(),
            AuxCells::Edge { .. } => panic!("node cells on an edge board"),
        }
    }

    /// Reads and clears agent `i`'s accumulator; one atomic event with the
    /// snapshot.
    pub(crate) fn take_mu(&mut self, i: usize) -> DVector<f64> {
        match &mut self.aux {
            AuxCells::Node { mu, .. } => std::mem::replace(&mut mu[i], DVector::zeros(self.m)),
            AuxCells::Edge { .. } => panic!("accumulators on an edge board"),
        }
    }

    pub(crate) fn add_mu(&mut self, j: usize, delta: &DVector<f64>) {
        match &mut self.aux {
            AuxCells::Node { mu, .. } => mu[j] += delta,
            AuxCells::Edge { .. } => panic!("accumulators on an edge board"),
        }
    }

    pub(crate) fn commit_x(&mut self, i: usize, visible_from: u64, value: DVector<f64>) {
        self.x[i].commit(visible_from, value);
    }

    pub(crate) fn commit_lambda(&mut self, i: usize, visible_from: u64, value: DVector<f64>) {
        self.lambda[i].commit(visible_from, value);
    }

    pub(crate) fn commit_z(&mut self, i: usize, visible_from: u64, value: DVector<f64>) {
        match &mut self.aux {
            AuxCells::Node { z, .. } => z[i].commit(visible_from, value),
            AuxCells::Edge { .. } => panic!("node cells on an edge board"),
        }
    }

    pub(crate) fn commit_sigma(&mut self, l: usize, visible_from: u64, value: DVector<f64>) {
        match &mut self.aux {
            AuxCells::Edge { sigma } => sigma[l].commit(visible_from, value),
            AuxCells::Node { .. } => panic!("edge cells on a node board"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn history_lookup_respects_visibility() {
        let mut cell = CellHistory::new(v(0.0), 6);
        cell.commit(3, v(1.0));
        cell.commit(5, v(2.0));
        assert_eq!(cell.value_at(0)[0], 0.0);
        assert_eq!(cell.value_at(2)[0], 0.0);
        assert_eq!(cell.value_at(3)[0], 1.0);
        assert_eq!(cell.value_at(4)[0], 1.0);
        assert_eq!(cell.value_at(5)[0], 2.0);
        assert_eq!(cell.latest()[0], 2.0);
    }

    #[test]
    fn pruning_keeps_reads_within_the_bound_answerable() {
        // delay bound 2 -> cap 4; commits at every step.
        let mut cell = CellHistory::new(v(0.0), 4);
        for k in 1..=50u64 {
            cell.commit(k, v(k as f64));
        }
        // Any read with staleness <= 2 from the perspective of step 50.
        for stale in 0..=2u64 {
            let t = 50 - stale;
            assert_eq!(cell.value_at(t)[0], t as f64);
        }
    }
}
