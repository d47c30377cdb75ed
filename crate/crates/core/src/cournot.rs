//! Seeded generator for the networked-competition benchmark (N companies
//! selling into m markets through a shared linear price) and the three
//! convergence metrics used to compare runs.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CostModel, GameModel, PlayerSpec, PriceModel};
use crate::graph::CommGraph;
use crate::trace::Trace;

/// Inclusive-exclusive sampling range.
pub type Range = (f64, f64);

/// How strategies are assigned to markets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketPattern {
    /// Seeded random assignment, redrawn until every market has at least two
    /// participants and the resulting communication graph is connected.
    Seeded,
    /// A fixed hand-coded assignment table (8 players x 4 strategies over 4
    /// markets) for reproducible examples.
    Fixture,
}

/// Benchmark configuration. Defaults: 8 companies, 4 markets, 4 strategies
/// each, with capacity, price and cost coefficients drawn from the ranges
/// below.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CournotConfig {
    pub n_players: usize,
    pub n_markets: usize,
    pub strategies_per_player: usize,
    pub cap_range: Range,
    pub coupling_range: Range,
    pub b_range: Range,
    pub pbar_range: Range,
    pub d_range: Range,
    pub quad_range: Range,
    pub lin_range: Range,
    pub pattern: MarketPattern,
    pub seed: u64,
}

impl CournotConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            n_players: 8,
            n_markets: 4,
            strategies_per_player: 4,
            cap_range: (10.0, 45.0),
            coupling_range: (0.6, 1.0),
            b_range: (20.0, 100.0),
            pbar_range: (250.0, 500.0),
            d_range: (1.0, 5.0),
            quad_range: (1.0, 8.0),
            lin_range: (1.0, 4.0),
            pattern: MarketPattern::Seeded,
            seed,
        }
    }
}

/// Strategy -> market table for the fixture pattern: entry `[i][k]` is the
/// market hit by player `i`'s `k`-th strategy. Every market has at least two
/// participants and the sharing graph is connected.
const FIXTURE_PATTERN: [[usize; 4]; 8] = [
    [0, 0, 1, 3],
    [0, 1, 1, 2],
    [1, 2, 2, 3],
    [0, 2, 3, 3],
    [0, 1, 2, 3],
    [1, 3, 0, 0],
    [2, 2, 1, 0],
    [3, 0, 2, 1],
];

fn draw(rng: &mut ChaCha8Rng, range: Range) -> f64 {
    rng.gen_range(range.0..range.1)
}

fn sample_pattern(
    rng: &mut ChaCha8Rng,
    n_players: usize,
    n_markets: usize,
    strategies: usize,
) -> Vec<Vec<usize>> {
    (0..n_players)
        .map(|_| (0..strategies).map(|_| rng.gen_range(0..n_markets)).collect())
        .collect()
}

fn pattern_is_usable(pattern: &[Vec<usize>], n_markets: usize) -> bool {
    let n = pattern.len();
    let mut per_market = vec![0usize; n_markets];
    for row in pattern {
        let mut seen = vec![false; n_markets];
        for &mk in row {
            if !seen[mk] {
                seen[mk] = true;
                per_market[mk] += 1;
            }
        }
    }
    if per_market.iter().any(|&c| c < 2) {
        return false;
    }
    market_graph_edges(pattern, n_markets).is_some_and(|edges| CommGraph::new(n, &edges).is_ok())
}

/// Companies are neighbours iff they share a market. Orientation convention:
/// head is the smaller index. Returns `None` when some player hits no market.
fn market_graph_edges(pattern: &[Vec<usize>], n_markets: usize) -> Option<Vec<(usize, usize)>> {
    let n = pattern.len();
    let mut markets_of: Vec<Vec<bool>> = vec![vec![false; n_markets]; n];
    for (i, row) in pattern.iter().enumerate() {
        if row.is_empty() {
            return None;
        }
        for &mk in row {
            markets_of[i][mk] = true;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let share = (0..n_markets).any(|mk| markets_of[i][mk] && markets_of[j][mk]);
            if share {
                edges.push((i, j));
            }
        }
    }
    Some(edges)
}

/// Generates the benchmark game and its market-sharing communication graph,
/// deterministically in the seed. Retries with consecutive seeds (up to 100)
/// should the drawn instance fail the strong-monotonicity check.
pub fn generate_cournot(config: &CournotConfig) -> Result<(GameModel, CommGraph)> {
    if config.n_players < 2 || config.n_markets < 1 || config.strategies_per_player < 1 {
        return Err(Error::InvalidGame(
            "benchmark needs >= 2 players, >= 1 market, >= 1 strategy".into(),
        ));
    }
    for attempt in 0..100u64 {
        let seed = config.seed.wrapping_add(attempt);
        let (game, graph) = generate_once(config, seed)?;
        if game.monotonicity_constants().is_ok() {
            return Ok((game, graph));
        }
    }
    Err(Error::Assumption(format!(
        "no strongly monotone instance found in 100 seeds starting at {}",
        config.seed
    )))
}

fn generate_once(config: &CournotConfig, seed: u64) -> Result<(GameModel, CommGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_players;
    let m = config.n_markets;
    let s = config.strategies_per_player;

    let pattern = match config.pattern {
        MarketPattern::Fixture => {
            if n != 8 || m != 4 || s != 4 {
                return Err(Error::InvalidGame(
                    "the fixture pattern is defined for 8 players x 4 strategies x 4 markets"
                        .into(),
                ));
            }
            FIXTURE_PATTERN.iter().map(|row| row.to_vec()).collect()
        }
        MarketPattern::Seeded => {
            let mut pattern = sample_pattern(&mut rng, n, m, s);
            let mut tries = 0;
            while !pattern_is_usable(&pattern, m) {
                pattern = sample_pattern(&mut rng, n, m, s);
                tries += 1;
                if tries > 500 {
                    return Err(Error::InvalidGame(
                        "could not draw a usable market pattern in 500 tries".into(),
                    ));
                }
            }
            pattern
        }
    };

    let b = DVector::from_fn(m, |_, _| draw(&mut rng, config.b_range));
    let pbar = DVector::from_fn(m, |_, _| draw(&mut rng, config.pbar_range));
    let d_diag = DVector::from_fn(m, |_, _| draw(&mut rng, config.d_range));

    let mut players = Vec::with_capacity(n);
    for row in pattern.iter() {
        let upper = DVector::from_fn(s, |_, _| draw(&mut rng, config.cap_range));
        let mut a_i = DMatrix::zeros(m, s);
        for (k, &mk) in row.iter().enumerate() {
            a_i[(mk, k)] = draw(&mut rng, config.coupling_range);
        }
        let quad = DVector::from_fn(s, |_, _| draw(&mut rng, config.quad_range));
        let lin = DVector::from_fn(s, |_, _| draw(&mut rng, config.lin_range));
        players.push(PlayerSpec {
            dim: s,
            lower: DVector::zeros(s),
            upper,
            coupling_block: a_i,
            coupling_offset: &b / n as f64,
            cost: CostModel::QuadraticAffine {
                quad_diag: quad,
                linear: lin,
            },
        });
    }

    let edges = market_graph_edges(&pattern, m).expect("pattern validated above");
    let graph = CommGraph::new(n, &edges)?;
    let game = GameModel::new(players, Some(PriceModel { pbar, d_diag }), None)?;
    Ok((game, graph))
}

/// Per-iteration convergence metrics derived from a trace.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRecord {
    pub k: u64,
    /// `|x_k - x_ref|_2 / |x_ref|_2`.
    pub normalized_distance: f64,
    /// `|(L (x) I_m) lambda_k|_2`.
    pub disagreement: f64,
    /// Mean positive constraint violation.
    pub avg_violation: f64,
}

/// Computes the three metrics for every logged record against a reference
/// equilibrium (from a high-precision synchronous run).
pub fn metrics(trace: &Trace, x_ref: &DVector<f64>, graph: &CommGraph) -> Result<Vec<MetricRecord>> {
    let ref_norm = x_ref.norm();
    if ref_norm < 1e-12 {
        return Err(Error::InvalidParams(
            "reference equilibrium is numerically zero; normalized distance undefined".into(),
        ));
    }
    let n = graph.node_count();
    trace
        .records
        .iter()
        .map(|rec| {
            if rec.lambda.len() % n != 0 {
                return Err(Error::Dimension {
                    what: "stacked multipliers",
                    expected: n,
                    got: rec.lambda.len(),
                });
            }
            let m = rec.lambda.len() / n;
            Ok(MetricRecord {
                k: rec.k,
                normalized_distance: (&rec.x - x_ref).norm() / ref_norm,
                disagreement: graph.apply_laplacian(&rec.lambda, m).norm(),
                avg_violation: rec.avg_violation(),
            })
        })
        .collect()
}

/// CSV form of the metric records: `k,normalized_distance,disagreement,avg_violation`.
pub fn metrics_csv(records: &[MetricRecord]) -> String {
    use crate::trace::fmt_float;
    let mut out = String::from("k,normalized_distance,disagreement,avg_violation\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.k,
            fmt_float(r.normalized_distance),
            fmt_float(r.disagreement),
            fmt_float(r.avg_violation)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{StopReason, TraceRecord};

    #[test]
    fn generation_is_deterministic() {
        let config = CournotConfig::standard(42);
        let (g1, gr1) = generate_cournot(&config).unwrap();
        let (g2, gr2) = generate_cournot(&config).unwrap();
        assert_eq!(gr1.edges(), gr2.edges());
        assert_eq!(g1.b(), g2.b());
        for i in 0..g1.n_players() {
            assert_eq!(g1.player(i).upper, g2.player(i).upper);
            assert_eq!(g1.player(i).coupling_block, g2.player(i).coupling_block);
        }
    }

    #[test]
    fn neighbours_share_markets() {
        let (game, graph) = generate_cournot(&CournotConfig::standard(7)).unwrap();
        let n = game.n_players();
        let m = game.n_constraints();
        // Markets a player participates in = nonzero rows of its block.
        let markets: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                let a = &game.player(i).coupling_block;
                (0..m).map(|r| (0..a.ncols()).any(|c| a[(r, c)] != 0.0)).collect()
            })
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let share = (0..m).any(|r| markets[i][r] && markets[j][r]);
                let adjacent = graph.neighbors(i).contains(&j);
                assert_eq!(share, adjacent, "players {i} and {j}");
            }
        }
    }

    #[test]
    fn drawn_parameters_stay_in_their_ranges() {
        let config = CournotConfig::standard(3);
        let (game, _) = generate_cournot(&config).unwrap();
        let pr = game.price().unwrap();
        assert!(pr.pbar.iter().all(|&v| (250.0..500.0).contains(&v)));
        assert!(pr.d_diag.iter().all(|&v| (1.0..5.0).contains(&v)));
        assert!(game.b().iter().all(|&v| (20.0..100.0).contains(&v)));
        for p in game.players() {
            assert!(p.upper.iter().all(|&v| (10.0..45.0).contains(&v)));
            assert!(p.lower.iter().all(|&v| v == 0.0));
            let (quad, lin) = match &p.cost {
                CostModel::QuadraticAffine { quad_diag, linear } => (quad_diag, linear),
                _ => unreachable!(),
            };
            assert!(quad.iter().all(|&v| (1.0..8.0).contains(&v)));
            assert!(lin.iter().all(|&v| (1.0..4.0).contains(&v)));
            for c in 0..p.coupling_block.ncols() {
                let nonzeros: Vec<f64> = (0..game.n_constraints())
                    .map(|r| p.coupling_block[(r, c)])
                    .filter(|&v| v != 0.0)
                    .collect();
                assert_eq!(nonzeros.len(), 1, "one market per strategy");
                assert!((0.6..1.0).contains(&nonzeros[0]));
            }
        }
    }

    #[test]
    fn fixture_pattern_generates() {
        let mut config = CournotConfig::standard(1);
        config.pattern = MarketPattern::Fixture;
        let (game, graph) = generate_cournot(&config).unwrap();
        assert_eq!(game.n_players(), 8);
        assert!(graph.edge_count() >= 7);
    }

    #[test]
    fn strong_monotonicity_across_seeds() {
        let mut ok = 0;
        for seed in 0..100 {
            let (game, _) = generate_once(&CournotConfig::standard(seed), seed).unwrap();
            if game.monotonicity_constants().is_ok() {
                ok += 1;
            }
        }
        assert!(ok >= 95, "only {ok}/100 seeds strongly monotone");
    }

    #[test]
    fn graph_satisfies_laplacian_identities() {
        let (_, graph) = generate_cournot(&CournotConfig::standard(42)).unwrap();
        let ones = nalgebra::DVector::from_element(graph.node_count(), 1.0);
        assert!((graph.laplacian() * ones).amax() < 1e-14);
    }

    #[test]
    fn gradient_matches_price_feedback_formula() {
        // Partial gradient of the benchmark cost:
        // 2 Q_i x_i + q_i - A_i' pbar + A_i' D A x + A_i' D A_i x_i.
        use nalgebra::{DMatrix, DVector};
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;

        let (game, _) = generate_cournot(&CournotConfig::standard(11)).unwrap();
        let pr = game.price().unwrap();
        let d = DMatrix::from_diagonal(&pr.d_diag);
        let n = game.total_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DVector::from_fn(n, |_, _| rng.gen_range(0.0..40.0));
        let ax = game.coupling_apply(&x);
        for i in 0..game.n_players() {
            let p = game.player(i);
            let xi = game.player_block(&x, i);
            let (quad, lin) = match &p.cost {
                CostModel::QuadraticAffine { quad_diag, linear } => (quad_diag, linear),
                _ => unreachable!(),
            };
            let expect = DVector::from_fn(p.dim, |j, _| 2.0 * quad[j] * xi[j])
                + lin
                - p.coupling_block.transpose() * &pr.pbar
                + p.coupling_block.transpose() * &d * &ax
                + p.coupling_block.transpose() * &d * &p.coupling_block * &xi;
            let got = game.player_gradient(i, &x);
            assert!(
                (got - expect).amax() < 1e-11,
                "gradient formula mismatch for player {i}"
            );
        }
    }

    fn trace_of(records: Vec<TraceRecord>) -> Trace {
        Trace {
            records,
            stop_reason: StopReason::FixedPoint,
            iterations: 0,
            update_counts: None,
        }
    }

    #[test]
    fn metric_definitions() {
        let graph = CommGraph::new(2, &[(0, 1)]).unwrap();
        let x_ref = DVector::from_vec(vec![3.0, 4.0]);
        let rec = TraceRecord {
            k: 5,
            x: x_ref.clone(),
            lambda: DVector::from_vec(vec![0.7, 0.7]),
            z: None,
            fp_residual: 0.0,
            kkt_residual: 0.0,
            consensus_residual: 0.0,
            violation: DVector::from_vec(vec![-0.5, 1.0]),
        };
        let ms = metrics(&trace_of(vec![rec]), &x_ref, &graph).unwrap();
        assert_eq!(ms[0].normalized_distance, 0.0);
        assert_eq!(ms[0].disagreement, 0.0, "consensus multipliers disagree by 0");
        assert_eq!(ms[0].avg_violation, 0.5);

        let err = metrics(&trace_of(vec![]), &DVector::zeros(2), &graph).unwrap_err();
        assert!(matches!(err, Error::InvalidParams(_)));
    }
}
