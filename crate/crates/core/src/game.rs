//! Game data model: players with box-constrained strategies, affine coupling
//! constraints `A x <= b`, pseudo-gradient evaluation and KKT residuals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gradient callback for costs that are not in quadratic-affine form.
/// Receives the full strategy profile and returns this player's partial
/// gradient (length `n_i`).
pub type GradientFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Per-player cost model.
#[derive(Clone)]
pub enum CostModel {
    /// `f_i(x) = x_i' Q_i x_i + q_i' x_i - P(x)' A_i x_i` with diagonal PSD
    /// `Q_i` and the game-level price `P(x) = pbar - D A x` (when present).
    QuadraticAffine {
        /// Diagonal of `Q_i`, entries >= 0.
        quad_diag: DVector<f64>,
        /// Linear term `q_i`.
        linear: DVector<f64>,
    },
    /// Opaque gradient oracle; excluded from affine analysis.
    GenericGradient(Arc<GradientFn>),
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostModel::QuadraticAffine { quad_diag, linear } => f
                .debug_struct("QuadraticAffine")
                .field("quad_diag", quad_diag)
                .field("linear", linear)
                .finish(),
            CostModel::GenericGradient(_) => f.write_str("GenericGradient(..)"),
        }
    }
}

/// Linear inverse-demand model shared by all players: `P(x) = pbar - D A x`
/// with diagonal `D`. Lives in constraint space (length `m`).
#[derive(Debug, Clone)]
pub struct PriceModel {
    pub pbar: DVector<f64>,
    pub d_diag: DVector<f64>,
}

/// One player: strategy box, coupling rows and cost.
#[derive(Debug, Clone)]
pub struct PlayerSpec {
    /// Strategy dimension `n_i`.
    pub dim: usize,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `A_i`, the `m x n_i` block of the coupling constraint.
    pub coupling_block: DMatrix<f64>,
    /// `b_i`, this player's share of the constraint offset; the shares sum to `b`.
    pub coupling_offset: DVector<f64>,
    pub cost: CostModel,
}

impl PlayerSpec {
    /// Componentwise clamp onto `[lower, upper]`. Total on finite inputs,
    /// idempotent and nonexpansive.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |j, _| v[j].max(self.lower[j]).min(self.upper[j]))
    }

    fn validate(&self, idx: usize, m: usize) -> Result<()> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::InvalidGame(format!("player {idx}: dim must be >= 1")));
        }
        for v in [&self.lower, &self.upper] {
            if v.len() != n {
                return Err(Error::Dimension {
                    what: "player box bound",
                    expected: n,
                    got: v.len(),
                });
            }
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || !self.upper[j].is_finite() {
                return Err(Error::InvalidGame(format!(
                    "player {idx}: box bounds must be finite (compact strategy set)"
                )));
            }
            if self.lower[j] > self.upper[j] {
                return Err(Error::InvalidGame(format!(
                    "player {idx}: empty box, lower[{j}] = {} > upper[{j}] = {}",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        if self.coupling_block.nrows() != m {
            return Err(Error::Dimension {
                what: "coupling block rows",
                expected: m,
                got: self.coupling_block.nrows(),
            });
        }
        if self.coupling_block.ncols() != n {
            return Err(Error::Dimension {
                what: "coupling block cols",
                expected: n,
                got: self.coupling_block.ncols(),
            });
        }
        if self.coupling_offset.len() != m {
            return Err(Error::Dimension {
                what: "coupling offset",
                expected: m,
                got: self.coupling_offset.len(),
            });
        }
        if let CostModel::QuadraticAffine { quad_diag, linear } = &self.cost {
            if quad_diag.len() != n || linear.len() != n {
                return Err(Error::Dimension {
                    what: "quadratic cost coefficients",
                    expected: n,
                    got: quad_diag.len().min(linear.len()),
                });
            }
            if quad_diag.iter().any(|&q| q < 0.0) {
                return Err(Error::InvalidGame(format!(
                    "player {idx}: quadratic diagonal must be >= 0 (convex cost)"
                )));
            }
        }
        Ok(())
    }
}

/// Strong-monotonicity modulus and Lipschitz constant of the pseudo-gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityConstants {
    pub alpha: f64,
    pub ell: f64,
}

/// Immutable N-player game with affine coupling constraints. All operations
/// are pure functions, safe for concurrent reads.
#[derive(Debug, Clone)]
pub struct GameModel {
    players: Vec<PlayerSpec>,
    m: usize,
    b: DVector<f64>,
    price: Option<PriceModel>,
    /// Player offsets into the stacked strategy vector, length `N + 1`.
    offsets: Vec<usize>,
    total_dim: usize,
    /// Cost Lipschitz bound, kept as metadata only; no update rule uses it.
    pub cost_lipschitz: Option<f64>,
}

impl GameModel {
    /// Builds and validates a game. When `b` is `None` the offset vector is
    /// the (float-exact) sum of the per-player shares; when given it must
    /// agree with that sum to a tight tolerance.
    pub fn new(
        players: Vec<PlayerSpec>,
        price: Option<PriceModel>,
        b: Option<DVector<f64>>,
    ) -> Result<Self> {
        if players.is_empty() {
            return Err(Error::InvalidGame("game needs at least one player".into()));
        }
        let m = players[0].coupling_block.nrows();
        let mut offsets = Vec::with_capacity(players.len() + 1);
        let mut total = 0usize;
        for (i, p) in players.iter().enumerate() {
            p.validate(i, m)?;
            offsets.push(total);
            total += p.dim;
        }
        offsets.push(total);

        let mut b_sum = DVector::zeros(m);
        for p in &players {
            b_sum += &p.coupling_offset;
        }
        let b = match b {
            None => b_sum,
            Some(b) => {
                if b.len() != m {
                    return Err(Error::Dimension {
                        what: "constraint offset b",
                        expected: m,
                        got: b.len(),
                    });
                }
                let scale = 1.0f64.max(b.amax());
                if (&b - &b_sum).amax() > 1e-9 * scale {
                    return Err(Error::InvalidGame(format!(
                        "per-player offsets do not decompose b: |sum b_i - b| = {:.3e}",
                        (&b - &b_sum).amax()
                    )));
                }
                b
            }
        };

        if let Some(pr) = &price {
            if pr.pbar.len() != m || pr.d_diag.len() != m {
                return Err(Error::Dimension {
                    what: "price model",
                    expected: m,
                    got: pr.pbar.len().min(pr.d_diag.len()),
                });
            }
        }

        Ok(Self {
            players,
            m,
            b,
            price,
            offsets,
            total_dim: total,
            cost_lipschitz: None,
        })
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    /// Number of coupling constraints `m`.
    pub fn n_constraints(&self) -> usize {
        self.m
    }

    /// Total strategy dimension `n`.
    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn price(&self) -> Option<&PriceModel> {
        self.price.as_ref()
    }

    pub fn player(&self, i: usize) -> &PlayerSpec {
        &self.players[i]
    }

    pub fn players(&self) -> &[PlayerSpec] {
        &self.players
    }

    /// Offset of player `i`'s block in the stacked strategy vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Player `i`'s block of a stacked strategy vector.
    pub fn player_block(&self, x: &DVector<f64>, i: usize) -> DVector<f64> {
        x.rows(self.offsets[i], self.players[i].dim).into_owned()
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.total_dim {
            return Err(Error::Dimension {
                what: "strategy profile",
                expected: self.total_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `A x` computed blockwise.
    pub fn coupling_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (i, p) in self.players.iter().enumerate() {
            out += &p.coupling_block * x.rows(self.offsets[i], p.dim);
        }
        out
    }

    /// Signed constraint values `A x - b`.
    pub fn coupling_violation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        Ok(self.coupling_apply(x) - &self.b)
    }

    /// `A' lam` for a shared (length-`m`) multiplier, stacked per player.
    pub fn coupling_adjoint(&self, lam: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim);
        for (i, p) in self.players.iter().enumerate() {
            out.rows_mut(self.offsets[i], p.dim)
                .copy_from(&(p.coupling_block.transpose() * lam));
        }
        out
    }

    /// Projection of a full profile onto the Cartesian product of the boxes.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_dim);
        for (i, p) in self.players.iter().enumerate() {
            let xi = x.rows(self.offsets[i], p.dim).into_owned();
            out.rows_mut(self.offsets[i], p.dim).copy_from(&p.project(&xi));
        }
        out
    }

    /// Partial gradient of player `i`'s cost at the profile `x`.
    ///
    /// For the quadratic-affine model this is
    /// `2 Q_i x_i + q_i + A_i'(D (A x + A_i x_i) - pbar)`,
    /// which collects the direct cost term and the price-feedback terms.
    pub fn player_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.players[i];
        let xi = x.rows(self.offsets[i], p.dim).into_owned();
        match &p.cost {
            CostModel::GenericGradient(g) => g(x),
            CostModel::QuadraticAffine { quad_diag, linear } => {
                let mut grad = DVector::from_fn(p.dim, |j, _| 2.0 * quad_diag[j] * xi[j]);
                grad += linear;
                if let Some(pr) = &self.price {
                    let ax = self.coupling_apply(x);
                    let aixi = &p.coupling_block * &xi;
                    let w = DVector::from_fn(self.m, |j, _| {
                        pr.d_diag[j] * (ax[j] + aixi[j]) - pr.pbar[j]
                    });
                    grad += p.coupling_block.transpose() * w;
                }
                grad
            }
        }
    }

    /// Pseudo-gradient: the stacked partial gradients of all players.
    pub fn pseudo_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut out = DVector::zeros(self.total_dim);
        for (i, p) in self.players.iter().enumerate() {
            out.rows_mut(self.offsets[i], p.dim)
                .copy_from(&self.player_gradient(i, x));
        }
        Ok(out)
    }

    /// Cost value `f_i(x)`; only available for quadratic-affine costs.
    pub fn cost_value(&self, i: usize, x: &DVector<f64>) -> Result<f64> {
        let p = &self.players[i];
        let xi = x.rows(self.offsets[i], p.dim).into_owned();
        match &p.cost {
            CostModel::GenericGradient(_) => Err(Error::Unsupported(
                "cost value is not available for gradient-callback players".into(),
            )),
            CostModel::QuadraticAffine { quad_diag, linear } => {
                let mut v = 0.0;
                for j in 0..p.dim {
                    v += quad_diag[j] * xi[j] * xi[j] + linear[j] * xi[j];
                }
                if let Some(pr) = &self.price {
                    let ax = self.coupling_apply(x);
                    let price = DVector::from_fn(self.m, |j, _| pr.pbar[j] - pr.d_diag[j] * ax[j]);
                    v -= price.dot(&(&p.coupling_block * &xi));
                }
                Ok(v)
            }
        }
    }

    /// Dense affine form `F(x) = M x + h` of the pseudo-gradient. Fails when
    /// any player uses a gradient callback.
    pub fn affine_map(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.total_dim;
        let mut mat = DMatrix::zeros(n, n);
        let mut h = DVector::zeros(n);
        for (i, p) in self.players.iter().enumerate() {
            let (quad_diag, linear) = match &p.cost {
                CostModel::QuadraticAffine { quad_diag, linear } => (quad_diag, linear),
                CostModel::GenericGradient(_) => {
                    return Err(Error::Unsupported(
                        "affine analysis needs quadratic-affine costs for every player".into(),
                    ))
                }
            };
            let oi = self.offsets[i];
            for j in 0..p.dim {
                mat[(oi + j, oi + j)] += 2.0 * quad_diag[j];
            }
            h.rows_mut(oi, p.dim).copy_from(linear);
            if let Some(pr) = &self.price {
                let d = DMatrix::from_diagonal(&pr.d_diag);
                // Price feedback: row block A_i' D A over all players plus the
                // extra own-block term A_i' D A_i.
                for (jp, q) in self.players.iter().enumerate() {
                    let block = p.coupling_block.transpose() * &d * &q.coupling_block;
                    let mut view = mat.view_mut((oi, self.offsets[jp]), (p.dim, q.dim));
                    view += block;
                }
                let own = p.coupling_block.transpose() * &d * &p.coupling_block;
                let mut view = mat.view_mut((oi, oi), (p.dim, p.dim));
                view += own;
                let mut hv = h.rows_mut(oi, p.dim);
                hv -= p.coupling_block.transpose() * &pr.pbar;
            }
        }
        Ok((mat, h))
    }

    /// Strong-monotonicity modulus and Lipschitz constant of the affine
    /// pseudo-gradient; errors when the modulus is nonpositive.
    pub fn monotonicity_constants(&self) -> Result<MonotonicityConstants> {
        let (mat, _) = self.affine_map()?;
        monotonicity_of_affine(&mat)
    }

    /// Residual certifying the KKT system of the variational problem at
    /// `(x, lam)` with a shared multiplier. Maximum of:
    /// stationarity `|x - proj(x - (F(x) + A'lam))|_inf`,
    /// primal violation `|max(0, Ax - b)|_inf`,
    /// complementarity `|lam'(b - Ax)|` and
    /// dual negativity `|max(0, -lam)|_inf`.
    pub fn kkt_residual(&self, x: &DVector<f64>, lam: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        if lam.len() != self.m {
            return Err(Error::Dimension {
                what: "shared multiplier",
                expected: self.m,
                got: lam.len(),
            });
        }
        let f = self.pseudo_gradient(x)?;
        let step = x - (f + self.coupling_adjoint(lam));
        let stationarity = (x - self.project(&step)).amax();

        let slack = self.coupling_apply(x) - &self.b;
        let primal = slack.iter().fold(0.0f64, |acc, &s| acc.max(s.max(0.0)));
        let complementarity = lam.dot(&(-&slack)).abs();
        let dual = lam.iter().fold(0.0f64, |acc, &l| acc.max((-l).max(0.0)));

        Ok(stationarity.max(primal).max(complementarity).max(dual))
    }
}

/// `alpha` = smallest eigenvalue of the symmetric part, `ell` = largest
/// singular value. Errors unless `alpha > 0`.
pub fn monotonicity_of_affine(mat: &DMatrix<f64>) -> Result<MonotonicityConstants> {
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let alpha = eig.eigenvalues.min();
    let svd = mat.clone().svd(false, false);
    let ell = svd.singular_values.max();
    if alpha <= 0.0 {
        return Err(Error::Assumption(format!(
            "pseudo-gradient is not strongly monotone: smallest symmetric eigenvalue {alpha:.6e} <= 0"
        )));
    }
    Ok(MonotonicityConstants { alpha, ell })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Box-constrained quadratic player without price coupling.
    fn quad_player(dim: usize, q: f64, lin: f64, m: usize, upper: f64) -> PlayerSpec {
        PlayerSpec {
            dim,
            lower: DVector::zeros(dim),
            upper: DVector::from_element(dim, upper),
            coupling_block: DMatrix::zeros(m, dim),
            coupling_offset: DVector::from_element(m, 1.0),
            cost: CostModel::QuadraticAffine {
                quad_diag: DVector::from_element(dim, q),
                linear: DVector::from_element(dim, lin),
            },
        }
    }

    /// Two scalar players, price coupling P(x) = pbar - D A x, A = [1, 1].
    pub(crate) fn two_player_toy(pbar: f64, d: f64, upper: f64, b: f64) -> GameModel {
        let player = |_: usize| PlayerSpec {
            dim: 1,
            lower: DVector::from_element(1, 0.0),
            upper: DVector::from_element(1, upper),
            coupling_block: DMatrix::from_element(1, 1, 1.0),
            coupling_offset: DVector::from_element(1, b / 2.0),
            cost: CostModel::QuadraticAffine {
                quad_diag: DVector::from_element(1, 1.0),
                linear: DVector::zeros(1),
            },
        };
        GameModel::new(
            vec![player(0), player(1)],
            Some(PriceModel {
                pbar: DVector::from_element(1, pbar),
                d_diag: DVector::from_element(1, d),
            }),
            None,
        )
        .unwrap()
    }

    #[test]
    fn scalar_quadratic_gradient() {
        // f(x) = x^2 so F(3) = 6.
        let game = GameModel::new(vec![quad_player(1, 1.0, 0.0, 1, 10.0)], None, None).unwrap();
        let f = game.pseudo_gradient(&DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(f[0], 6.0);
    }

    #[test]
    fn toy_affine_map_matches_reference() {
        // Q = I, q = 0, D = 1, A = [1, 1], pbar = 10:
        // M = 2Q + A'DA + blockdiag(A_i' D A_i) = [[4, 1], [1, 4]], h = -A'pbar.
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let (mat, h) = game.affine_map().unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 4.0]);
        assert!((mat - expect).amax() < 1e-14);
        assert!((h - DVector::from_element(2, -10.0)).amax() < 1e-14);
    }

    fn finite_diff_gradient(game: &GameModel, i: usize, x: &DVector<f64>, h: f64) -> DVector<f64> {
        let p = game.player(i);
        let off = game.offset(i);
        DVector::from_fn(p.dim, |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[off + j] += h;
            xm[off + j] -= h;
            (game.cost_value(i, &xp).unwrap() - game.cost_value(i, &xm).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(0.0..10.0));
            for i in 0..2 {
                let analytic = game.player_gradient(i, &x);
                let fd = finite_diff_gradient(&game, i, &x, 1e-6);
                let denom = 1.0f64.max(analytic.amax());
                assert!(
                    (analytic - fd).amax() / denom <= 1e-6,
                    "finite-difference mismatch at x = {x:?}"
                );
            }
        }
    }

    #[test]
    fn pseudo_gradient_is_affine() {
        // F(x) - h must be linear in x for quadratic-affine games.
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let (mat, h) = game.affine_map().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-5.0..5.0));
            let f = game.pseudo_gradient(&x).unwrap();
            assert!((f - (&mat * &x + &h)).amax() < 1e-12);
        }
    }

    #[test]
    fn projection_basics() {
        let p = quad_player(4, 1.0, 0.0, 1, 45.0);
        let interior = DVector::from_element(4, 12.5);
        assert_eq!(p.project(&interior), interior);

        let p1 = quad_player(1, 1.0, 0.0, 1, 1.0);
        assert_eq!(p.project(&DVector::from_element(4, -2.0))[0], 0.0);
        assert_eq!(p1.project(&DVector::from_element(1, -2.0))[0], 0.0);

        // Idempotent and nonexpansive on random pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = DVector::from_fn(4, |_, _| rng.gen_range(-100.0..100.0));
            let w = DVector::from_fn(4, |_, _| rng.gen_range(-100.0..100.0));
            let pv = p.project(&v);
            let pw = p.project(&w);
            assert_eq!(p.project(&pv), pv);
            assert!(
                (&pv - &pw).norm() <= (&v - &w).norm() + 1e-15,
                "projection expanded a pair"
            );
        }
    }

    #[test]
    fn monotonicity_scaled_identity() {
        let mat = DMatrix::from_diagonal(&DVector::from_element(3, 2.0));
        let c = monotonicity_of_affine(&mat).unwrap();
        assert!((c.alpha - 2.0).abs() < 1e-12);
        assert!((c.ell - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_asymmetric_case() {
        // M = [[2, 1], [0, 2]]: alpha = eigmin([[2, 0.5], [0.5, 2]]) = 1.5.
        let mat = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let c = monotonicity_of_affine(&mat).unwrap();
        assert!((c.alpha - 1.5).abs() < 1e-12);
        // Dense SVD oracle: sigma_max of [[2,1],[0,2]] solves
        // sigma^2 = eigmax(M'M), M'M = [[4,2],[2,5]], eigmax = (9+sqrt(17))/2.
        let expect = ((9.0 + 17.0f64.sqrt()) / 2.0).sqrt();
        assert!((c.ell - expect).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_rejects_nonmonotone() {
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let err = monotonicity_of_affine(&mat).unwrap_err();
        assert!(matches!(err, Error::Assumption(_)));
    }

    #[test]
    fn monotonicity_inequalities_on_samples() {
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let c = game.monotonicity_constants().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-10.0..10.0));
            let y = DVector::from_fn(2, |_, _| rng.gen_range(-10.0..10.0));
            let fx = game.pseudo_gradient(&x).unwrap();
            let fy = game.pseudo_gradient(&y).unwrap();
            let dx = &x - &y;
            let df = &fx - &fy;
            assert!(df.dot(&dx) >= c.alpha * dx.norm_squared() - 1e-10);
            assert!(df.norm() <= c.ell * dx.norm() + 1e-10);
        }
    }

    #[test]
    fn kkt_residual_interior_stationary_point() {
        // f(x) = (x - 2)^2 on [0, 10], no active constraint: residual 0 at x = 2.
        let mut p = quad_player(1, 1.0, -4.0, 1, 10.0);
        p.coupling_offset = DVector::from_element(1, 5.0);
        let game = GameModel::new(vec![p], None, None).unwrap();
        let r = game
            .kkt_residual(&DVector::from_element(1, 2.0), &DVector::zeros(1))
            .unwrap();
        assert!(r < 1e-14);
    }

    #[test]
    fn kkt_residual_detects_perturbation() {
        let mut p = quad_player(1, 1.0, -4.0, 1, 10.0);
        p.coupling_offset = DVector::from_element(1, 5.0);
        let game = GameModel::new(vec![p], None, None).unwrap();
        let r = game
            .kkt_residual(&DVector::from_element(1, 2.0 + 1e-2), &DVector::zeros(1))
            .unwrap();
        assert!(r > 1e-4);
    }

    #[test]
    fn monotonicity_modulus_never_exceeds_lipschitz_constant() {
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let c = game.monotonicity_constants().unwrap();
        assert!(c.alpha <= c.ell + 1e-12);
    }

    #[test]
    fn kkt_residual_is_locally_continuous() {
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let lam = DVector::from_element(1, 0.3);
        let base = DVector::from_vec(vec![1.0, 2.0]);
        let r0 = game.kkt_residual(&base, &lam).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let delta = DVector::from_fn(2, |_, _| rng.gen_range(-1e-3..1e-3));
            let r1 = game.kkt_residual(&(&base + &delta), &lam).unwrap();
            // Residual moves at most proportionally to the perturbation; the
            // constant is generous (affine map norms are O(10) here).
            assert!((r1 - r0).abs() <= 100.0 * delta.norm());
        }
    }

    #[test]
    fn coupling_violation_signs() {
        let game = two_player_toy(10.0, 1.0, 10.0, 1.0);
        let v = game.coupling_violation(&DVector::zeros(2)).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-15); // x = 0 gives -b
        let feasible = DVector::from_element(2, 0.25);
        let v = game.coupling_violation(&feasible).unwrap();
        assert!(v[0] <= 0.0);
    }

    #[test]
    fn b_decomposition_checked() {
        let mut p0 = quad_player(1, 1.0, 0.0, 1, 1.0);
        let p1 = quad_player(1, 1.0, 0.0, 1, 1.0);
        p0.coupling_offset = DVector::from_element(1, 0.25);
        let err = GameModel::new(
            vec![p0, p1],
            None,
            Some(DVector::from_element(1, 9.0)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidGame(_)));
    }

    #[test]
    fn generic_gradient_player_works() {
        let grad: Arc<GradientFn> =
            Arc::new(|x: &DVector<f64>| DVector::from_element(1, 2.0 * x[0] - 4.0));
        let p = PlayerSpec {
            dim: 1,
            lower: DVector::zeros(1),
            upper: DVector::from_element(1, 10.0),
            coupling_block: DMatrix::zeros(1, 1),
            coupling_offset: DVector::from_element(1, 1.0),
            cost: CostModel::GenericGradient(grad),
        };
        let game = GameModel::new(vec![p], None, None).unwrap();
        let f = game.pseudo_gradient(&DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(f[0], 2.0);
        assert!(game.affine_map().is_err());
    }
}
