//! Deterministic single-threaded simulator of the asynchronous solvers.
//!
//! At every global step one agent wakes up (random or cyclic activation),
//! reads a possibly stale snapshot of the public memory, updates its own
//! strategy, multiplier and auxiliary cells, and commits. All asynchrony is
//! modeled data — activation sequences and staleness draws come from
//! counter-keyed streams — so runs replay bit-identically. A wall-clock
//! multi-threaded executor is out of scope.
//!
//! Two variants share the same `(x, lambda)` dynamics:
//! - the edge variant keeps one auxiliary per oriented edge, written by the
//!   edge's head agent;
//! - the node variant keeps one auxiliary per node plus an accumulator
//!   `mu_i` that neighbours feed at write time, which reconstructs the
//!   incidence aggregate of the edge variables without storing them.

mod board;
mod schedule;

pub use board::MemoryBoard;
pub use schedule::{ActivationOrder, AsyncSchedule, DelayModel};

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::GameModel;
use crate::graph::CommGraph;
use crate::splitting::{sweep_node, NodeState, SolverParams};
use crate::sync::{make_record, StopRule};
use crate::trace::{StopReason, Trace};

/// Which asynchronous algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AsyncVariant {
    EAdagnes,
    AdGeno,
}

/// Norms of the blocks one update committed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CommittedNorms {
    pub x: f64,
    pub lambda: f64,
    pub aux: f64,
}

/// One agent update. The JSONL form keeps `{k, agent, staleness_map,
/// committed_norms}`; the richer fields exist for replay checks in tests.
#[derive(Debug, Clone)]
pub struct UpdateEvent {
    pub k: u64,
    pub agent: usize,
    /// Applied per-agent staleness of this update's reads.
    pub staleness: Vec<usize>,
    pub committed: CommittedNorms,
    /// The auxiliary aggregate entering the multiplier update: the incidence
    /// aggregate of stale edge variables, or the node auxiliary tilde value.
    pub aggregate: DVector<f64>,
    /// Accumulator value consumed by this update (node variant).
    pub mu_snapshot: Option<DVector<f64>>,
    /// `(neighbour, contribution)` pairs written to accumulators.
    pub mu_writes: Vec<(usize, DVector<f64>)>,
}

/// Serializes events one JSON object per line.
pub fn write_events_jsonl<W: Write>(events: &[UpdateEvent], mut w: W) -> Result<()> {
    for e in events {
        let line = serde_json::json!({
            "k": e.k,
            "agent": e.agent,
            "staleness_map": e.staleness,
            "committed_norms": {
                "x": e.committed.x,
                "lambda": e.committed.lambda,
                "aux": e.committed.aux,
            },
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

struct CommonUpdate {
    x_tilde: DVector<f64>,
    lam_tilde: DVector<f64>,
    x_hat_i: DVector<f64>,
    lam_hat_i: DVector<f64>,
    lam_hat: DVector<f64>,
    /// `sum_{l in out(i)} (lam_hat_i - lam_hat_tail(l))`.
    out_flow: DVector<f64>,
}

/// The variant-independent part of one update: the strategy step, the
/// out-edge multiplier flow, and the projected multiplier step driven by the
/// auxiliary aggregate `g`.
fn common_update(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    board: &MemoryBoard,
    i: usize,
    k: u64,
    delays: &[usize],
    aggregate: &DVector<f64>,
) -> CommonUpdate {
    let m = game.n_constraints();
    let p = game.player(i);

    let x_hat = board.snapshot_x(k, delays);
    let lam_hat = board.snapshot_lambda(k, delays);
    let x_hat_i = x_hat.rows(game.offset(i), p.dim).into_owned();
    let lam_hat_i = lam_hat.rows(i * m, m).into_owned();

    let grad = game.player_gradient(i, &x_hat);
    let step = &x_hat_i - params.tau[i] * (grad + p.coupling_block.transpose() * &lam_hat_i);
    let x_tilde = p.project(&step);

    let mut out_flow = DVector::zeros(m);
    for &l in graph.out_edges(i) {
        let (_, tail) = graph.edges()[l];
        out_flow += &lam_hat_i - lam_hat.rows(tail * m, m);
    }

    let reflected = 2.0 * &x_tilde - &x_hat_i;
    let drive = &p.coupling_block * reflected
        - &p.coupling_offset
        - aggregate
        - 2.0 * params.delta * &out_flow;
    let mut lam_tilde = &lam_hat_i + params.eps[i] * drive;
    for e in lam_tilde.iter_mut() {
        if *e < 0.0 {
            *e = 0.0;
        }
    }

    CommonUpdate {
        x_tilde,
        lam_tilde,
        x_hat_i,
        lam_hat_i,
        lam_hat,
        out_flow,
    }
}

fn applied_delays(schedule: &AsyncSchedule, i: usize, k: u64) -> Vec<usize> {
    let mut delays = schedule.delays(k);
    if !schedule.own_reads_stale {
        delays[i] = 0;
    }
    delays
}

/// One update of the edge-variable algorithm: the active agent refreshes its
/// out-edge auxiliaries from the stale multipliers and commits.
pub fn e_adagnes_step(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    board: &mut MemoryBoard,
    schedule: &AsyncSchedule,
    k: u64,
) -> Result<UpdateEvent> {
    let i = schedule.sample_activation(k);
    let m = game.n_constraints();
    let delays = applied_delays(schedule, i, k);

    // Incidence aggregate of the edge variables around node i. Out-edges are
    // written only by i itself, in-edges carry the writer's newest commit.
    let mut aggregate = DVector::zeros(m);
    for &l in graph.out_edges(i) {
        aggregate += board.latest_sigma(l);
    }
    for &l in graph.in_edges(i) {
        aggregate -= board.latest_sigma(l);
    }

    let upd = common_update(game, graph, params, board, i, k, &delays, &aggregate);

    let eta = params.eta;
    let x_new = &upd.x_hat_i + eta * (&upd.x_tilde - &upd.x_hat_i);
    let lam_new = &upd.lam_hat_i + eta * (&upd.lam_tilde - &upd.lam_hat_i);

    let mut aux_norm = 0.0f64;
    let visible = k + 1;
    for &l in graph.out_edges(i) {
        let (_, tail) = graph.edges()[l];
        let increment = (eta * params.delta) * (&upd.lam_hat_i - upd.lam_hat.rows(tail * m, m));
        let new_sigma = board.latest_sigma(l) + increment;
        aux_norm = aux_norm.max(new_sigma.amax());
        board.commit_sigma(l, visible, new_sigma);
    }
    let committed = CommittedNorms {
        x: x_new.amax(),
        lambda: lam_new.amax(),
        aux: aux_norm,
    };
    board.commit_x(i, visible, x_new);
    board.commit_lambda(i, visible, lam_new);

    Ok(UpdateEvent {
        k,
        agent: i,
        staleness: delays,
        committed,
        aggregate,
        mu_snapshot: None,
        mu_writes: Vec::new(),
    })
}

/// One update of the node-variable algorithm: the accumulator replaces the
/// edge variables, and neighbours' accumulators are fed during the write
/// phase (no extra communication round).
pub fn ad_geno_step(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    board: &mut MemoryBoard,
    schedule: &AsyncSchedule,
    k: u64,
) -> Result<UpdateEvent> {
    let i = schedule.sample_activation(k);
    let m = game.n_constraints();
    let delays = applied_delays(schedule, i, k);

    // Snapshot + accumulator reset is one atomic event.
    let mu = board.take_mu(i);
    let z_own = board.latest_z(i).clone();
    let z_tilde = &z_own + (params.delta * params.eta) * &mu;

    let upd = common_update(game, graph, params, board, i, k, &delays, &z_tilde);

    let eta = params.eta;
    let x_new = &upd.x_hat_i + eta * (&upd.x_tilde - &upd.x_hat_i);
    let lam_new = &upd.lam_hat_i + eta * (&upd.lam_tilde - &upd.lam_hat_i);
    let z_new = &z_tilde + (eta * params.delta) * &upd.out_flow;

    // Writing phase: out-edge tails accumulate the multiplier gap seen in
    // this snapshot. Edges headed at a neighbour are fed when that head
    // itself writes.
    let mut mu_writes = Vec::with_capacity(graph.out_edges(i).len());
    for &l in graph.out_edges(i) {
        let (_, tail) = graph.edges()[l];
        let delta_mu = upd.lam_hat.rows(tail * m, m) - &upd.lam_hat_i;
        board.add_mu(tail, &delta_mu);
        mu_writes.push((tail, delta_mu));
    }

    let committed = CommittedNorms {
        x: x_new.amax(),
        lambda: lam_new.amax(),
        aux: z_new.amax(),
    };
    let visible = k + 1;
    board.commit_x(i, visible, x_new);
    board.commit_lambda(i, visible, lam_new);
    board.commit_z(i, visible, z_new);

    Ok(UpdateEvent {
        k,
        agent: i,
        staleness: delays,
        committed,
        aggregate: z_tilde,
        mu_snapshot: Some(mu),
        mu_writes,
    })
}

/// A finished asynchronous run.
#[derive(Debug, Clone)]
pub struct AsyncRun {
    pub trace: Trace,
    /// Latest public state, with the node view of the auxiliaries.
    pub final_state: NodeState,
    /// Edge auxiliaries at termination (edge variant only).
    pub final_sigma: Option<DVector<f64>>,
    pub events: Vec<UpdateEvent>,
}

fn board_node_view(board: &MemoryBoard, graph: &CommGraph) -> NodeState {
    NodeState {
        x: board.latest_x_full(),
        z: board.latest_z_full(graph),
        lambda: board.latest_lambda_full(),
    }
}

/// Runs one asynchronous variant from the standard start (strategies
/// projected from the origin, zero multipliers and auxiliaries).
///
/// The trace is indexed by global steps; one step is one agent update.
/// Residuals are those of the full unrelaxed sweep at the newest public
/// state, evaluated at logged steps, where the stop rule is also checked.
pub fn run_async(
    variant: AsyncVariant,
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    schedule: &AsyncSchedule,
    stop: &StopRule,
    stride: u64,
) -> Result<AsyncRun> {
    params.check_positive(game.n_players())?;
    if schedule.n_agents() != game.n_players() {
        return Err(Error::Dimension {
            what: "schedule probability vector",
            expected: game.n_players(),
            got: schedule.n_agents(),
        });
    }
    let stride = stride.max(1);
    let mut board = match variant {
        AsyncVariant::EAdagnes => MemoryBoard::new_edge(game, graph, schedule.delay_bound),
        AsyncVariant::AdGeno => MemoryBoard::new_node(game, graph, schedule.delay_bound),
    };
    let mut events = Vec::new();
    let mut records = Vec::new();
    let mut counts = vec![0u64; game.n_players()];

    let mut k = 0u64;
    let reason = loop {
        let event = match variant {
            AsyncVariant::EAdagnes => e_adagnes_step(game, graph, params, &mut board, schedule, k)?,
            AsyncVariant::AdGeno => ad_geno_step(game, graph, params, &mut board, schedule, k)?,
        };
        counts[event.agent] += 1;
        events.push(event);
        k += 1;

        let log_due = k.is_multiple_of(stride) || k >= stop.max_iters;
        if log_due {
            let state = board_node_view(&board, graph);
            let tilde = sweep_node(game, graph, params, &state)?;
            let fp = state.linf_distance(&tilde);
            let rec = make_record(game, graph, &state, k, fp)?;
            let fp_hit = stop.tol_fixed_point.is_some_and(|t| fp <= t);
            let kkt_hit = stop.tol_kkt.is_some_and(|t| rec.kkt_residual <= t);
            let cons_hit = stop.tol_consensus.is_some_and(|t| rec.consensus_residual <= t);
            records.push(rec);
            if fp_hit {
                break StopReason::FixedPoint;
            }
            if kkt_hit {
                break StopReason::Kkt;
            }
            if cons_hit {
                break StopReason::Consensus;
            }
        }
        if k >= stop.max_iters {
            break StopReason::MaxIters;
        }
    };

    Ok(AsyncRun {
        trace: Trace {
            records,
            stop_reason: reason,
            iterations: k,
            update_counts: Some(counts),
        },
        final_state: board_node_view(&board, graph),
        final_sigma: board.latest_sigma_full(),
        events,
    })
}

/// Outcome of driving both variants under one schedule.
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub steps: u64,
    /// Largest public-trajectory deviation in the strategies.
    pub max_x_deviation: f64,
    /// Largest public-trajectory deviation in the multipliers.
    pub max_lambda_deviation: f64,
    /// Largest per-update gap between the node auxiliary tilde value and the
    /// incidence aggregate of the stale edge variables.
    pub max_probe_deviation: f64,
    pub tolerance: f64,
    /// First step at which any deviation exceeded the tolerance.
    pub first_divergence: Option<u64>,
    pub pass: bool,
}

/// Runs the two variants side by side under the same schedule and probes the
/// per-update equivalence of their auxiliary bookkeeping.
pub fn run_paired(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    schedule: &AsyncSchedule,
    steps: u64,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    run_paired_with(game, graph, params, schedule, schedule, steps, tolerance)
}

/// Like [`run_paired`] but with separate schedules per variant. Distinct
/// schedules serve as a negative control: the trajectories diverge and the
/// report records the first step past tolerance.
pub fn run_paired_with(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    schedule_edge: &AsyncSchedule,
    schedule_node: &AsyncSchedule,
    steps: u64,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let mut edge_board = MemoryBoard::new_edge(game, graph, schedule_edge.delay_bound);
    let mut node_board = MemoryBoard::new_node(game, graph, schedule_node.delay_bound);
    let mut max_x = 0.0f64;
    let mut max_lambda = 0.0f64;
    let mut max_probe = 0.0f64;
    let mut first_divergence = None;

    for k in 0..steps {
        let ev_edge = e_adagnes_step(game, graph, params, &mut edge_board, schedule_edge, k)?;
        let ev_node = ad_geno_step(game, graph, params, &mut node_board, schedule_node, k)?;

        let probe = (&ev_edge.aggregate - &ev_node.aggregate).amax();
        let dx = (edge_board.latest_x_full() - node_board.latest_x_full()).amax();
        let dl = (edge_board.latest_lambda_full() - node_board.latest_lambda_full()).amax();
        max_probe = max_probe.max(probe);
        max_x = max_x.max(dx);
        max_lambda = max_lambda.max(dl);
        if first_divergence.is_none() && probe.max(dx).max(dl) > tolerance {
            first_divergence = Some(k);
        }
    }

    let pass = first_divergence.is_none();
    Ok(EquivalenceReport {
        steps,
        max_x_deviation: max_x,
        max_lambda_deviation: max_lambda,
        max_probe_deviation: max_probe,
        tolerance,
        first_divergence,
        pass,
    })
}

/// Admissible relaxation bounds for the asynchronous iteration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EtaBounds {
    /// `(4 a t - l^2)/(a t) * c N p_min / (4 phi sqrt(p_min) + 1)`.
    pub stated: f64,
    /// Variant arising from the averagedness constant,
    /// `(4 a t - l^2)/(2 a t) * c N p_min / (2 phi sqrt(p_min) + 1)`.
    pub proof_variant: f64,
    /// The smaller of the two; gates validation.
    pub conservative: f64,
}

/// Upper bounds on the asynchronous relaxation. Two published forms differ
/// by a factor in the delay denominator; both are computed and the smaller
/// one is flagged as the gate.
pub fn async_eta_bound(
    alpha: f64,
    ell: f64,
    theta: f64,
    p_min: f64,
    phi_bar: usize,
    c: f64,
    n_agents: usize,
) -> Result<EtaBounds> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParams(format!("c must lie in (0, 1), got {c}")));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "p_min must lie in (0, 1], got {p_min}"
        )));
    }
    if theta <= ell * ell / (2.0 * alpha) {
        return Err(Error::StepSize(format!(
            "theta = {theta:.6e} must strictly exceed ell^2/(2 alpha) = {:.6e}",
            ell * ell / (2.0 * alpha)
        )));
    }
    let n = n_agents as f64;
    let phi = phi_bar as f64;
    let mass = c * n * p_min;
    let stated = ((4.0 * alpha * theta - ell * ell) / (alpha * theta))
        * (mass / (4.0 * phi * p_min.sqrt() + 1.0));
    let proof_variant = ((4.0 * alpha * theta - ell * ell) / (2.0 * alpha * theta))
        * (mass / (2.0 * phi * p_min.sqrt() + 1.0));
    Ok(EtaBounds {
        stated,
        proof_variant,
        conservative: stated.min(proof_variant),
    })
}
