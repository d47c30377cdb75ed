//! Independent brute-force equilibrium solver for tiny affine-quadratic
//! instances, used as ground truth before trusting the splitting solvers.
//!
//! Two redundant routes: active-set enumeration over the KKT system, and a
//! lattice search minimizing the projected natural residual. Neither shares
//! code with the forward-backward sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::GameModel;

const MAX_DIM: usize = 6;
const MAX_CONSTRAINTS: usize = 2;
const FEAS_TOL: f64 = 1e-9;
const RESIDUAL_GATE: f64 = 1e-10;
const UNIQUENESS_TOL: f64 = 1e-8;

#[derive(Clone, Copy, PartialEq)]
enum BoxStatus {
    Free,
    AtLower,
    AtUpper,
}

/// Solves the shared-multiplier KKT system by enumerating every combination
/// of box-coordinate statuses (free / at lower / at upper) and tight
/// constraint subsets, solving the resulting linear system, and keeping the
/// candidates that satisfy all sign and feasibility conditions with residual
/// below `1e-10`. Errors if no candidate passes or two distinct solutions
/// pass (the latter signals a non-strongly-monotone game upstream).
pub fn solve_vgne_bruteforce(game: &GameModel) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = game.total_dim();
    let m = game.n_constraints();
    if n > MAX_DIM || m > MAX_CONSTRAINTS {
        return Err(Error::Unsupported(format!(
            "brute-force oracle is limited to n <= {MAX_DIM}, m <= {MAX_CONSTRAINTS}; got n = {n}, m = {m}"
        )));
    }
    let (mat, h) = game.affine_map()?;
    let (lower, upper) = stacked_bounds(game);
    let a = stacked_coupling(game);
    let b = game.b().clone();

    let mut accepted: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let n_status = 3usize.pow(n as u32);
    let n_tight = 1usize << m;

    for status_code in 0..n_status {
        let status = decode_status(status_code, n);
        for tight_mask in 0..n_tight {
            if let Some((x, lam)) =
                try_candidate(&mat, &h, &lower, &upper, &a, &b, &status, tight_mask)
            {
                if game.kkt_residual(&x, &lam)? > RESIDUAL_GATE {
                    continue;
                }
                let duplicate = accepted
                    .iter()
                    .any(|(xa, _)| (xa - &x).amax() <= UNIQUENESS_TOL);
                if !duplicate {
                    accepted.push((x, lam));
                }
            }
        }
    }

    match accepted.len() {
        0 => Err(Error::Oracle(
            "no active-set candidate satisfies the KKT system; instance infeasible or assumptions violated"
                .into(),
        )),
        1 => Ok(accepted.pop().unwrap()),
        k => Err(Error::Oracle(format!(
            "{k} distinct KKT points found; the equilibrium is not unique (strong monotonicity suspect)"
        ))),
    }
}

fn stacked_bounds(game: &GameModel) -> (DVector<f64>, DVector<f64>) {
    let n = game.total_dim();
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for (i, p) in game.players().iter().enumerate() {
        lower.rows_mut(game.offset(i), p.dim).copy_from(&p.lower);
        upper.rows_mut(game.offset(i), p.dim).copy_from(&p.upper);
    }
    (lower, upper)
}

fn stacked_coupling(game: &GameModel) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(game.n_constraints(), game.total_dim());
    for (i, p) in game.players().iter().enumerate() {
        a.view_mut((0, game.offset(i)), (game.n_constraints(), p.dim))
            .copy_from(&p.coupling_block);
    }
    a
}

fn decode_status(mut code: usize, n: usize) -> Vec<BoxStatus> {
    let mut status = Vec::with_capacity(n);
    for _ in 0..n {
        status.push(match code % 3 {
            0 => BoxStatus::Free,
            1 => BoxStatus::AtLower,
            _ => BoxStatus::AtUpper,
        });
        code /= 3;
    }
    status
}

/// Solves the equality system of one candidate and applies the sign and
/// feasibility checks. Unknowns are the free coordinates and the multipliers
/// of the tight constraints; fixed coordinates sit at their bounds and slack
/// multipliers are zero.
#[allow(clippy::too_many_arguments)]
fn try_candidate(
    mat: &DMatrix<f64>,
    h: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    status: &[BoxStatus],
    tight_mask: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = status.len();
    let m = b.len();
    let free: Vec<usize> = (0..n).filter(|&j| status[j] == BoxStatus::Free).collect();
    let tight: Vec<usize> = (0..m).filter(|&j| tight_mask & (1 << j) != 0).collect();
    let nf = free.len();
    let nt = tight.len();

    let mut x = DVector::zeros(n);
    for j in 0..n {
        match status[j] {
            BoxStatus::AtLower => x[j] = lower[j],
            BoxStatus::AtUpper => x[j] = upper[j],
            BoxStatus::Free => {}
        }
    }

    let dim = nf + nt;
    let mut sys = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    // Stationarity rows for free coordinates: (M x + h + A' lam)_free = 0.
    for (r, &jf) in free.iter().enumerate() {
        for (c, &jc) in free.iter().enumerate() {
            sys[(r, c)] = mat[(jf, jc)];
        }
        for (c, &jt) in tight.iter().enumerate() {
            sys[(r, nf + c)] = a[(jt, jf)];
        }
        let mut v = -h[jf];
        for j in 0..n {
            if status[j] != BoxStatus::Free {
                v -= mat[(jf, j)] * x[j];
            }
        }
        rhs[r] = v;
    }
    // Tightness rows: (A x)_tight = b_tight.
    for (r, &jt) in tight.iter().enumerate() {
        for (c, &jc) in free.iter().enumerate() {
            sys[(nf + r, c)] = a[(jt, jc)];
        }
        let mut v = b[jt];
        for j in 0..n {
            if status[j] != BoxStatus::Free {
                v -= a[(jt, j)] * x[j];
            }
        }
        rhs[nf + r] = v;
    }

    let sol = if dim == 0 {
        DVector::zeros(0)
    } else {
        let lu = sys.clone().full_piv_lu();
        let sol = lu.solve(&rhs)?;
        // Reject near-singular systems via the solve residual.
        if (&sys * &sol - &rhs).amax() > 1e-8 {
            return None;
        }
        sol
    };

    for (c, &jf) in free.iter().enumerate() {
        x[jf] = sol[c];
    }
    let mut lam = DVector::zeros(m);
    for (c, &jt) in tight.iter().enumerate() {
        lam[jt] = sol[nf + c];
    }

    // Feasibility of free coordinates and slack constraints.
    for &jf in &free {
        if x[jf] < lower[jf] - FEAS_TOL || x[jf] > upper[jf] + FEAS_TOL {
            return None;
        }
    }
    let slack_vals = a * &x - b;
    for j in 0..m {
        let is_tight = tight_mask & (1 << j) != 0;
        if is_tight {
            if lam[j] < -FEAS_TOL {
                return None;
            }
        } else if slack_vals[j] > FEAS_TOL {
            return None;
        }
    }

    // Bound multipliers: -(M x + h + A' lam) must sit in the box normal cone.
    let grad = mat * &x + h + a.transpose() * &lam;
    for j in 0..n {
        let nu = -grad[j];
        match status[j] {
            BoxStatus::Free => {
                if nu.abs() > 1e-7 {
                    return None;
                }
            }
            BoxStatus::AtLower => {
                // Degenerate box (lower == upper) admits any multiplier.
                if upper[j] > lower[j] && nu > FEAS_TOL {
                    return None;
                }
            }
            BoxStatus::AtUpper => {
                if upper[j] > lower[j] && nu < -FEAS_TOL {
                    return None;
                }
            }
        }
    }

    Some((x, lam))
}

/// Euclidean projection onto `{ y in [lower, upper] : a'y <= b }` for a
/// single half-space. Exact up to bisection precision: the multiplier solves
/// the monotone piecewise-linear equation `a' clamp(v - mu a) = b`.
pub fn project_box_halfspace(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    v: &DVector<f64>,
) -> DVector<f64> {
    let clamp = |w: &DVector<f64>| {
        DVector::from_fn(w.len(), |j, _| w[j].max(lower[j]).min(upper[j]))
    };
    let y0 = clamp(v);
    if a.dot(&y0) <= b + 1e-14 {
        return y0;
    }
    let eval = |mu: f64| a.dot(&clamp(&(v - mu * a))) - b;
    let mut hi = 1.0;
    while eval(hi) > 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clamp(&(v - hi * a))
}

/// Lattice cross-check for `n = 2, m <= 1` games: scans an
/// `points x points` grid over the box and returns the feasible point with
/// the smallest projected natural residual `|x - proj_X(x - F(x))|`.
pub fn grid_search_vgne(game: &GameModel, points: usize) -> Result<(DVector<f64>, f64)> {
    let n = game.total_dim();
    let m = game.n_constraints();
    if n != 2 || m > 1 {
        return Err(Error::Unsupported(format!(
            "grid search supports n = 2, m <= 1; got n = {n}, m = {m}"
        )));
    }
    if points < 2 {
        return Err(Error::InvalidParams("grid needs at least 2 points per axis".into()));
    }
    let (mat, h) = game.affine_map()?;
    let (lower, upper) = stacked_bounds(game);
    let a_mat = stacked_coupling(game);
    let a = a_mat.row(0).transpose();
    let b = game.b()[0];

    let mut best = (DVector::zeros(2), f64::INFINITY);
    for i in 0..points {
        let t0 = i as f64 / (points - 1) as f64;
        let x0 = lower[0] + t0 * (upper[0] - lower[0]);
        for j in 0..points {
            let t1 = j as f64 / (points - 1) as f64;
            let x1 = lower[1] + t1 * (upper[1] - lower[1]);
            let x = DVector::from_vec(vec![x0, x1]);
            if a.dot(&x) > b + 1e-9 {
                continue;
            }
            let step = &x - (&mat * &x + &h);
            let proj = project_box_halfspace(&lower, &upper, &a, b, &step);
            let res = (&x - proj).norm();
            if res < best.1 {
                best = (x, res);
            }
        }
    }
    if best.1.is_infinite() {
        return Err(Error::Oracle("no feasible lattice point".into()));
    }
    Ok(best)
}
