//! JSON wire formats for games, graphs and schedules.
//!
//! Matrices are row-major (a list of rows). Graph node indices are 1-based
//! on the wire and 0-based in memory.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asynchronous::{ActivationOrder, AsyncSchedule, DelayModel};
use crate::error::{Error, Result};
use crate::game::{CostModel, GameModel, PlayerSpec, PriceModel};
use crate::graph::CommGraph;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerJson {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(rename = "A_i")]
    pub coupling_block: Vec<Vec<f64>>,
    #[serde(rename = "b_i")]
    pub coupling_offset: Vec<f64>,
    #[serde(rename = "Q_i")]
    pub quad: Vec<Vec<f64>>,
    #[serde(rename = "q_i")]
    pub lin: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceJson {
    #[serde(rename = "Pbar")]
    pub pbar: Vec<f64>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameJson {
    pub players: Vec<PlayerJson>,
    pub b: Vec<f64>,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<PriceJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    #[serde(rename = "N")]
    pub n: usize,
    /// 1-based `[head, tail]` pairs.
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleJson {
    pub p: Vec<f64>,
    pub seed: u64,
    pub phi_bar: usize,
    pub delay_model: DelayModelJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fairness_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub own_reads_stale: Option<bool>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModelJson {
    Zero,
    UniformIid,
    FixedLag(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OrderJson {
    Random,
    RoundRobin,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidGame(format!("{what}: ragged matrix rows")));
    }
    let mut mat = DMatrix::zeros(rows.len(), ncols);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            mat[(r, c)] = v;
        }
    }
    Ok(mat)
}

fn matrix_to_rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..mat.nrows())
        .map(|r| (0..mat.ncols()).map(|c| mat[(r, c)]).collect())
        .collect()
}

/// Extracts the diagonal, rejecting matrices with off-diagonal mass.
fn diagonal_of(mat: &DMatrix<f64>, what: &'static str) -> Result<DVector<f64>> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::InvalidGame(format!("{what}: matrix must be square")));
    }
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            if r != c && mat[(r, c)] != 0.0 {
                return Err(Error::InvalidGame(format!(
                    "{what}: expected a diagonal matrix, found nonzero at ({r}, {c})"
                )));
            }
        }
    }
    Ok(mat.diagonal())
}

pub fn game_to_json(game: &GameModel) -> Result<GameJson> {
    let players = game
        .players()
        .iter()
        .map(|p| {
            let (quad, lin) = match &p.cost {
                CostModel::QuadraticAffine { quad_diag, linear } => (
                    matrix_to_rows(&DMatrix::from_diagonal(quad_diag)),
                    linear.iter().copied().collect(),
                ),
                CostModel::GenericGradient(_) => {
                    return Err(Error::Unsupported(
                        "gradient-callback players have no wire form".into(),
                    ))
                }
            };
            Ok(PlayerJson {
                dim: p.dim,
                lower: p.lower.iter().copied().collect(),
                upper: p.upper.iter().copied().collect(),
                coupling_block: matrix_to_rows(&p.coupling_block),
                coupling_offset: p.coupling_offset.iter().copied().collect(),
                quad,
                lin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GameJson {
        players,
        b: game.b().iter().copied().collect(),
        m: game.n_constraints(),
        price: game.price().map(|pr| PriceJson {
            pbar: pr.pbar.iter().copied().collect(),
            d: matrix_to_rows(&DMatrix::from_diagonal(&pr.d_diag)),
        }),
    })
}

pub fn game_from_json(json: &GameJson) -> Result<GameModel> {
    let players = json
        .players
        .iter()
        .map(|p| {
            let coupling_block = matrix_from_rows(&p.coupling_block, "A_i")?;
            let quad_mat = matrix_from_rows(&p.quad, "Q_i")?;
            let quad_diag = diagonal_of(&quad_mat, "Q_i")?;
            Ok(PlayerSpec {
                dim: p.dim,
                lower: DVector::from_vec(p.lower.clone()),
                upper: DVector::from_vec(p.upper.clone()),
                coupling_block,
                coupling_offset: DVector::from_vec(p.coupling_offset.clone()),
                cost: CostModel::QuadraticAffine {
                    quad_diag,
                    linear: DVector::from_vec(p.lin.clone()),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let price = json
        .price
        .as_ref()
        .map(|pr| {
            let d_mat = matrix_from_rows(&pr.d, "D")?;
            Ok::<_, Error>(PriceModel {
                pbar: DVector::from_vec(pr.pbar.clone()),
                d_diag: diagonal_of(&d_mat, "D")?,
            })
        })
        .transpose()?;
    let game = GameModel::new(players, price, Some(DVector::from_vec(json.b.clone())))?;
    if game.n_constraints() != json.m {
        return Err(Error::Dimension {
            what: "declared m",
            expected: game.n_constraints(),
            got: json.m,
        });
    }
    Ok(game)
}

pub fn graph_to_json(graph: &CommGraph) -> GraphJson {
    GraphJson {
        n: graph.node_count(),
        edges: graph
            .edges()
            .iter()
            .map(|&(h, t)| [h + 1, t + 1])
            .collect(),
    }
}

pub fn graph_from_json(json: &GraphJson) -> Result<CommGraph> {
    let edges: Vec<(usize, usize)> = json.edges.iter().map(|e| (e[0], e[1])).collect();
    CommGraph::from_one_based(json.n, &edges)
}

pub fn schedule_from_json(json: &ScheduleJson) -> Result<AsyncSchedule> {
    let delay_model = match json.delay_model {
        DelayModelJson::Zero => DelayModel::Zero,
        DelayModelJson::UniformIid => DelayModel::UniformIid,
        DelayModelJson::FixedLag(lag) => DelayModel::FixedLag(lag),
    };
    let order = match (json.order, json.fairness_window) {
        (Some(OrderJson::RoundRobin), _) => ActivationOrder::RoundRobin,
        (_, Some(w)) => ActivationOrder::FairWindow(w),
        _ => ActivationOrder::Random,
    };
    let mut schedule =
        AsyncSchedule::new(json.p.clone(), json.seed, json.phi_bar, delay_model, order)?;
    if let Some(stale) = json.own_reads_stale {
        schedule.own_reads_stale = stale;
    }
    Ok(schedule)
}

pub fn schedule_to_json(schedule: &AsyncSchedule) -> ScheduleJson {
    let (order, fairness_window) = match schedule.order {
        ActivationOrder::Random => (Some(OrderJson::Random), None),
        ActivationOrder::RoundRobin => (Some(OrderJson::RoundRobin), None),
        ActivationOrder::FairWindow(w) => (Some(OrderJson::Random), Some(w)),
    };
    ScheduleJson {
        p: schedule.probabilities.clone(),
        seed: schedule.seed,
        phi_bar: schedule.delay_bound,
        delay_model: match schedule.delay_model {
            DelayModel::Zero => DelayModelJson::Zero,
            DelayModel::UniformIid => DelayModelJson::UniformIid,
            DelayModel::FixedLag(lag) => DelayModelJson::FixedLag(lag),
        },
        fairness_window,
        order,
        own_reads_stale: Some(schedule.own_reads_stale),
    }
}

pub fn load_game(path: &std::path::Path) -> Result<GameModel> {
    let text = std::fs::read_to_string(path)?;
    let json: GameJson = serde_json::from_str(&text)?;
    game_from_json(&json)
}

pub fn load_graph(path: &std::path::Path) -> Result<CommGraph> {
    let text = std::fs::read_to_string(path)?;
    let json: GraphJson = serde_json::from_str(&text)?;
    graph_from_json(&json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cournot::{generate_cournot, CournotConfig};

    #[test]
    fn game_round_trip() {
        let (game, _) = generate_cournot(&CournotConfig::standard(42)).unwrap();
        let wire = game_to_json(&game).unwrap();
        let text = serde_json::to_string(&wire).unwrap();
        let back: GameJson = serde_json::from_str(&text).unwrap();
        let game2 = game_from_json(&back).unwrap();
        assert_eq!(game.b(), game2.b());
        assert_eq!(game.total_dim(), game2.total_dim());
        for i in 0..game.n_players() {
            assert_eq!(game.player(i).coupling_block, game2.player(i).coupling_block);
            assert_eq!(game.player(i).upper, game2.player(i).upper);
        }
        let x = nalgebra::DVector::from_element(game.total_dim(), 1.5);
        assert_eq!(
            game.pseudo_gradient(&x).unwrap(),
            game2.pseudo_gradient(&x).unwrap()
        );
    }

    #[test]
    fn graph_round_trip_is_one_based() {
        let g = CommGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
        let wire = graph_to_json(&g);
        assert_eq!(wire.edges, vec![[1, 2], [2, 3]]);
        let g2 = graph_from_json(&wire).unwrap();
        assert_eq!(g.edges(), g2.edges());
    }

    #[test]
    fn non_diagonal_quad_rejected() {
        let (game, _) = generate_cournot(&CournotConfig::standard(1)).unwrap();
        let mut wire = game_to_json(&game).unwrap();
        wire.players[0].quad[0][1] = 0.3;
        assert!(game_from_json(&wire).is_err());
    }

    #[test]
    fn schedule_json_defaults() {
        let text = r#"{"p":[0.5,0.5],"seed":7,"phi_bar":4,"delay_model":"uniform_iid"}"#;
        let json: ScheduleJson = serde_json::from_str(text).unwrap();
        let s = schedule_from_json(&json).unwrap();
        assert_eq!(s.order, ActivationOrder::Random);
        assert!(s.own_reads_stale);
        assert_eq!(s.delay_bound, 4);

        let text = r#"{"p":[0.5,0.5],"seed":7,"phi_bar":4,"delay_model":"zero","fairness_window":40}"#;
        let json: ScheduleJson = serde_json::from_str(text).unwrap();
        let s = schedule_from_json(&json).unwrap();
        assert_eq!(s.order, ActivationOrder::FairWindow(40));
    }
}
