//! Operator-splitting machinery: the block preconditioner, step-size
//! validation against the convergence conditions, and one full evaluation of
//! the preconditioned forward-backward sweep in node or edge coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameModel;
use crate::graph::CommGraph;

/// Step sizes and relaxation for the splitting iteration. `tau` and `eps`
/// hold one positive scalar per player; `theta` is the preconditioner
/// strong-convexity parameter used by the validation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverParams {
    pub tau: Vec<f64>,
    pub delta: f64,
    pub eps: Vec<f64>,
    pub eta: f64,
    pub theta: f64,
}

impl SolverParams {
    pub fn uniform(n_players: usize, tau: f64, delta: f64, eps: f64, eta: f64, theta: f64) -> Self {
        Self {
            tau: vec![tau; n_players],
            delta,
            eps: vec![eps; n_players],
            eta,
            theta,
        }
    }

    pub fn check_positive(&self, n_players: usize) -> Result<()> {
        if self.tau.len() != n_players || self.eps.len() != n_players {
            return Err(Error::Dimension {
                what: "per-player step vectors",
                expected: n_players,
                got: self.tau.len().min(self.eps.len()),
            });
        }
        let all_pos = self.tau.iter().chain(self.eps.iter()).all(|&s| s > 0.0);
        if !all_pos || self.delta <= 0.0 {
            return Err(Error::InvalidParams(
                "all step sizes tau_i, delta, eps_i must be strictly positive".into(),
            ));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParams("relaxation eta must be positive".into()));
        }
        Ok(())
    }
}

/// Iterate in node coordinates: `(x, z, lambda)` with one auxiliary and one
/// multiplier block per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl NodeState {
    pub fn zeros(game: &GameModel, graph: &CommGraph) -> Self {
        let m = game.n_constraints();
        Self {
            x: DVector::zeros(game.total_dim()),
            z: DVector::zeros(graph.node_count() * m),
            lambda: DVector::zeros(graph.node_count() * m),
        }
    }

    /// Default start: strategies projected from the origin, everything else zero.
    pub fn default_init(game: &GameModel, graph: &CommGraph) -> Self {
        let mut s = Self::zeros(game, graph);
        s.x = game.project(&s.x);
        s
    }

    pub fn linf_distance(&self, other: &Self) -> f64 {
        (&self.x - &other.x)
            .amax()
            .max((&self.z - &other.z).amax())
            .max((&self.lambda - &other.lambda).amax())
    }
}

/// Iterate in edge coordinates: `(x, sigma, lambda)` with one auxiliary block
/// per oriented edge. This is the coordinate system the preconditioner acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeState {
    pub x: DVector<f64>,
    pub sigma: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl EdgeState {
    pub fn zeros(game: &GameModel, graph: &CommGraph) -> Self {
        let m = game.n_constraints();
        Self {
            x: DVector::zeros(game.total_dim()),
            sigma: DVector::zeros(graph.edge_count() * m),
            lambda: DVector::zeros(graph.node_count() * m),
        }
    }

    pub fn default_init(game: &GameModel, graph: &CommGraph) -> Self {
        let mut s = Self::zeros(game, graph);
        s.x = game.project(&s.x);
        s
    }

    /// Stacks `(x, sigma, lambda)` in the preconditioner's row order.
    pub fn stack(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.x.len() + self.sigma.len() + self.lambda.len());
        v.rows_mut(0, self.x.len()).copy_from(&self.x);
        v.rows_mut(self.x.len(), self.sigma.len()).copy_from(&self.sigma);
        v.rows_mut(self.x.len() + self.sigma.len(), self.lambda.len())
            .copy_from(&self.lambda);
        v
    }

    /// Node view of this iterate: `z = (E' (x) I_m) sigma`.
    pub fn to_node(&self, graph: &CommGraph, m: usize) -> NodeState {
        NodeState {
            x: self.x.clone(),
            z: graph.apply_incidence_transpose(&self.sigma, m),
            lambda: self.lambda.clone(),
        }
    }
}

/// Symmetric block preconditioner over `(x, sigma, lambda)`:
///
/// ```text
/// [ tau^-1      0          -Lam'   ]
/// [ 0           delta^-1    E(x)I  ]
/// [ -Lam        E'(x)I      eps^-1 ]
/// ```
///
/// Materialized densely; intended for desk-scale eigenvalue checks and
/// weighted norms, not for hot paths.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    matrix: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl Preconditioner {
    pub fn build(game: &GameModel, graph: &CommGraph, params: &SolverParams) -> Result<Self> {
        let n_players = game.n_players();
        params.check_positive(n_players)?;
        if graph.node_count() != n_players {
            return Err(Error::Dimension {
                what: "graph node count",
                expected: n_players,
                got: graph.node_count(),
            });
        }
        let n = game.total_dim();
        let m = game.n_constraints();
        let me = graph.edge_count() * m;
        let mn = n_players * m;
        let dim = n + me + mn;
        let mut phi = DMatrix::zeros(dim, dim);

        for i in 0..n_players {
            let p = game.player(i);
            let off = game.offset(i);
            for j in 0..p.dim {
                phi[(off + j, off + j)] = 1.0 / params.tau[i];
            }
            let lam_off = n + me + i * m;
            for j in 0..m {
                phi[(lam_off + j, lam_off + j)] = 1.0 / params.eps[i];
            }
            // Coupling blocks -Lam' / -Lam between x_i and lambda_i.
            for r in 0..m {
                for c in 0..p.dim {
                    let a = p.coupling_block[(r, c)];
                    phi[(off + c, lam_off + r)] = -a;
                    phi[(lam_off + r, off + c)] = -a;
                }
            }
        }
        for l in 0..graph.edge_count() {
            let (head, tail) = graph.edges()[l];
            let sig_off = n + l * m;
            for j in 0..m {
                phi[(sig_off + j, sig_off + j)] = 1.0 / params.delta;
                phi[(sig_off + j, n + me + head * m + j)] = 1.0;
                phi[(n + me + head * m + j, sig_off + j)] = 1.0;
                phi[(sig_off + j, n + me + tail * m + j)] = -1.0;
                phi[(n + me + tail * m + j, sig_off + j)] = -1.0;
            }
        }

        Ok(Self { matrix: phi, n, m })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigmin(&self) -> f64 {
        self.matrix.clone().symmetric_eigen().eigenvalues.min()
    }

    /// Weighted norm `sqrt(v' Phi v)`; meaningful once the matrix is PD.
    pub fn weighted_norm(&self, v: &DVector<f64>) -> f64 {
        debug_assert_eq!(v.len(), self.dim());
        v.dot(&(&self.matrix * v)).max(0.0).sqrt()
    }

    /// Gershgorin-style lower bound on the smallest eigenvalue: minimum over
    /// rows of `diag - sum |offdiag|`. A cheap sufficient check before the
    /// dense eigendecomposition.
    pub fn diag_dominance_margin(&self) -> f64 {
        let dim = self.dim();
        let mut margin = f64::INFINITY;
        for r in 0..dim {
            let mut offdiag = 0.0;
            for c in 0..dim {
                if c != r {
                    offdiag += self.matrix[(r, c)].abs();
                }
            }
            margin = margin.min(self.matrix[(r, r)] - offdiag);
        }
        margin
    }

    /// Largest absolute off-diagonal row sum; step-size independent.
    fn offdiag_row_bound(&self) -> f64 {
        let dim = self.dim();
        let mut bound: f64 = 0.0;
        for r in 0..dim {
            let mut offdiag = 0.0;
            for c in 0..dim {
                if c != r {
                    offdiag += self.matrix[(r, c)].abs();
                }
            }
            bound = bound.max(offdiag);
        }
        bound
    }

    #[allow(dead_code)]
    fn strategy_dim(&self) -> usize {
        self.n
    }

    #[allow(dead_code)]
    fn constraint_dim(&self) -> usize {
        self.m
    }
}

/// Everything the step-size conditions look at, with the raw numbers kept for
/// reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSizeReport {
    pub alpha: f64,
    pub ell: f64,
    pub theta: f64,
    /// Least admissible preconditioner modulus `ell^2 / (2 alpha)`.
    pub theta_min: f64,
    /// `theta > theta_min` (strict).
    pub theta_ok: bool,
    pub phi_eigmin: f64,
    /// `eigmin(Phi) >= theta`, i.e. `Phi - theta I` is PSD.
    pub phi_psd: bool,
    /// `eigmin(Phi) > 0`.
    pub phi_pd: bool,
    pub eta: f64,
    /// Upper end of the admissible synchronous relaxation interval,
    /// `(4 alpha theta - ell^2) / (2 alpha theta)`.
    pub eta_max_sync: f64,
    /// `0 < eta < eta_max_sync` (open interval).
    pub eta_ok_sync: bool,
}

/// Computes the full report without gating. Errors only when the game is not
/// affine-quadratic, steps are nonpositive, or strong monotonicity fails.
pub fn step_size_report(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
) -> Result<StepSizeReport> {
    params.check_positive(game.n_players())?;
    let constants = game.monotonicity_constants()?;
    let phi = Preconditioner::build(game, graph, params)?;
    let eigmin = phi.eigmin();
    let theta_min = constants.ell * constants.ell / (2.0 * constants.alpha);
    let eta_max_sync =
        (4.0 * constants.alpha * params.theta - constants.ell * constants.ell)
            / (2.0 * constants.alpha * params.theta);
    let tol = 1e-9 * params.theta.abs().max(1.0);
    Ok(StepSizeReport {
        alpha: constants.alpha,
        ell: constants.ell,
        theta: params.theta,
        theta_min,
        theta_ok: params.theta > theta_min,
        phi_eigmin: eigmin,
        phi_psd: eigmin >= params.theta - tol,
        phi_pd: eigmin > 0.0,
        eta: params.eta,
        eta_max_sync,
        eta_ok_sync: params.eta > 0.0 && params.eta < eta_max_sync,
    })
}

/// Strict gate on the synchronous convergence conditions. Rejections name the
/// failed inequality.
pub fn validate_step_sizes(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
) -> Result<StepSizeReport> {
    let report = step_size_report(game, graph, params)?;
    if !report.theta_ok {
        return Err(Error::StepSize(format!(
            "theta = {:.12e} must strictly exceed ell^2/(2 alpha) = {:.12e}",
            report.theta, report.theta_min
        )));
    }
    if !report.phi_psd {
        return Err(Error::StepSize(format!(
            "Phi - theta I not PSD: eigmin(Phi) = {:.12e} < theta = {:.12e}",
            report.phi_eigmin, report.theta
        )));
    }
    if !report.eta_ok_sync {
        return Err(Error::StepSize(format!(
            "eta = {:.12e} outside the open interval (0, (4*alpha*theta - ell^2)/(2*alpha*theta)) = (0, {:.12e})",
            report.eta, report.eta_max_sync
        )));
    }
    Ok(report)
}

/// Samples step sizes that pass the strict gate: all steps equal up to a
/// random factor, scaled so the preconditioner dominates `theta_min`.
/// `theta` is set to the realized `eigmin(Phi)`.
pub fn sample_validated_params<R: Rng>(
    game: &GameModel,
    graph: &CommGraph,
    rng: &mut R,
    eta: f64,
) -> Result<SolverParams> {
    let constants = game.monotonicity_constants()?;
    let theta_min = constants.ell * constants.ell / (2.0 * constants.alpha);
    // Off-diagonal mass of Phi does not depend on the steps; probe it once.
    let probe = SolverParams::uniform(game.n_players(), 1.0, 1.0, 1.0, eta, 1.0);
    let offdiag = Preconditioner::build(game, graph, &probe)?.offdiag_row_bound();
    let scale = 1.0 / (1.05 * (theta_min + offdiag));

    for _ in 0..100 {
        let draw = |rng: &mut R| rng.gen_range(0.5 * scale..scale);
        let mut params = SolverParams {
            tau: (0..game.n_players()).map(|_| draw(rng)).collect(),
            delta: draw(rng),
            eps: (0..game.n_players()).map(|_| draw(rng)).collect(),
            eta,
            theta: 1.0,
        };
        let phi = Preconditioner::build(game, graph, &params)?;
        params.theta = phi.eigmin();
        if validate_step_sizes(game, graph, &params).is_ok() {
            return Ok(params);
        }
    }
    Err(Error::StepSize(
        "could not sample step sizes satisfying the strict conditions in 100 draws".into(),
    ))
}

fn check_node_state(game: &GameModel, graph: &CommGraph, state: &NodeState) -> Result<()> {
    let m = game.n_constraints();
    let mn = graph.node_count() * m;
    if state.x.len() != game.total_dim() {
        return Err(Error::Dimension {
            what: "state x",
            expected: game.total_dim(),
            got: state.x.len(),
        });
    }
    if state.z.len() != mn || state.lambda.len() != mn {
        return Err(Error::Dimension {
            what: "state z / lambda",
            expected: mn,
            got: state.z.len().min(state.lambda.len()),
        });
    }
    Ok(())
}

fn project_nonneg(v: &mut DVector<f64>) {
    for e in v.iter_mut() {
        if *e < 0.0 {
            *e = 0.0;
        }
    }
}

/// One unrelaxed forward-backward sweep in node coordinates:
///
/// ```text
/// x~      = proj_box(x - tau (F(x) + Lam' lambda))
/// z~      = z + delta (L (x) I_m) lambda
/// lam~_i  = proj_{>=0}(lam_i + eps_i (A_i (2 x~_i - x_i) - b_i + z_i - 2 z~_i))
/// ```
pub fn sweep_node(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    state: &NodeState,
) -> Result<NodeState> {
    check_node_state(game, graph, state)?;
    let m = game.n_constraints();
    let f = game.pseudo_gradient(&state.x)?;

    let mut x_tilde = DVector::zeros(game.total_dim());
    for i in 0..game.n_players() {
        let p = game.player(i);
        let off = game.offset(i);
        let xi = state.x.rows(off, p.dim);
        let fi = f.rows(off, p.dim);
        let lam_i = state.lambda.rows(i * m, m).into_owned();
        let step = xi - params.tau[i] * (fi + p.coupling_block.transpose() * lam_i);
        x_tilde.rows_mut(off, p.dim).copy_from(&p.project(&step.into_owned()));
    }

    let z_tilde = &state.z + params.delta * graph.apply_laplacian(&state.lambda, m);

    let mut lam_tilde = DVector::zeros(state.lambda.len());
    for i in 0..game.n_players() {
        let p = game.player(i);
        let off = game.offset(i);
        let reflected = 2.0 * x_tilde.rows(off, p.dim) - state.x.rows(off, p.dim);
        let drive = &p.coupling_block * reflected - &p.coupling_offset
            + state.z.rows(i * m, m)
            - 2.0 * z_tilde.rows(i * m, m);
        let mut li = state.lambda.rows(i * m, m) + params.eps[i] * drive;
        project_nonneg(&mut li);
        lam_tilde.rows_mut(i * m, m).copy_from(&li);
    }

    Ok(NodeState {
        x: x_tilde,
        z: z_tilde,
        lambda: lam_tilde,
    })
}

/// One unrelaxed sweep in edge coordinates (the system the preconditioner is
/// defined over):
///
/// ```text
/// x~      = proj_box(x - tau (F(x) + Lam' lambda))
/// sig~    = sig + delta (E (x) I_m) lambda
/// lam~_i  = proj_{>=0}(lam_i + eps_i (A_i (2 x~_i - x_i) - b_i - [E'(2 sig~ - sig)]_i))
/// ```
pub fn sweep_edge(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
    state: &EdgeState,
) -> Result<EdgeState> {
    let m = game.n_constraints();
    if state.sigma.len() != graph.edge_count() * m {
        return Err(Error::Dimension {
            what: "state sigma",
            expected: graph.edge_count() * m,
            got: state.sigma.len(),
        });
    }
    let node_view = NodeState {
        x: state.x.clone(),
        z: DVector::zeros(graph.node_count() * m),
        lambda: state.lambda.clone(),
    };
    check_node_state(game, graph, &node_view)?;

    let f = game.pseudo_gradient(&state.x)?;
    let mut x_tilde = DVector::zeros(game.total_dim());
    for i in 0..game.n_players() {
        let p = game.player(i);
        let off = game.offset(i);
        let xi = state.x.rows(off, p.dim);
        let fi = f.rows(off, p.dim);
        let lam_i = state.lambda.rows(i * m, m).into_owned();
        let step = xi - params.tau[i] * (fi + p.coupling_block.transpose() * lam_i);
        x_tilde.rows_mut(off, p.dim).copy_from(&p.project(&step.into_owned()));
    }

    let sigma_tilde = &state.sigma + params.delta * graph.apply_incidence(&state.lambda, m);

    let reflected_sigma = 2.0 * &sigma_tilde - &state.sigma;
    let aggregate = graph.apply_incidence_transpose(&reflected_sigma, m);

    let mut lam_tilde = DVector::zeros(state.lambda.len());
    for i in 0..game.n_players() {
        let p = game.player(i);
        let off = game.offset(i);
        let reflected = 2.0 * x_tilde.rows(off, p.dim) - state.x.rows(off, p.dim);
        let drive =
            &p.coupling_block * reflected - &p.coupling_offset - aggregate.rows(i * m, m);
        let mut li = state.lambda.rows(i * m, m) + params.eps[i] * drive;
        project_nonneg(&mut li);
        lam_tilde.rows_mut(i * m, m).copy_from(&li);
    }

    Ok(EdgeState {
        x: x_tilde,
        sigma: sigma_tilde,
        lambda: lam_tilde,
    })
}
