//! Drives solver runs, writes artifacts, and builds the machine-readable
//! report.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use geno::asynchronous::{
    async_eta_bound, run_async, run_paired_with, write_events_jsonl, AsyncVariant,
    EquivalenceReport, EtaBounds,
};
use geno::cournot::{metrics, metrics_csv};
use geno::json;
use geno::splitting::{step_size_report, SolverParams, StepSizeReport};
use geno::sync::{run_sync, sample_practical_params, StopRule};
use geno::trace::{StopReason, Trace};
use geno::{CommGraph, GameModel, NodeState};

use crate::config::{ExperimentConfig, OrderConfig, ParamsSpec, Variant};

/// Process exit codes: 0 success, 2 bad config, 3 violated modeling
/// assumption, 4 ran but did not meet the convergence criteria.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Debug, Serialize)]
pub struct FinalMetrics {
    pub fp_residual: f64,
    pub kkt_residual: f64,
    pub consensus_residual: f64,
    pub max_violation: f64,
    pub normalized_distance: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EtaBoundsReport {
    pub eta_used: f64,
    /// Bounds from the asynchronous step-size condition; absent when the
    /// preconditioner modulus does not clear the monotonicity threshold.
    pub bounds: Option<EtaBounds>,
    pub eta_within_conservative: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub variant: &'static str,
    pub iterations: u64,
    pub stop_reason: StopReason,
    pub converged: bool,
    pub final_metrics: FinalMetrics,
    pub step_report: StepSizeReport,
    pub eta_bounds: EtaBoundsReport,
    pub update_counts: Option<Vec<u64>>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    /// The only field that varies between identical runs.
    pub generated_at: String,
    pub all_converged: bool,
    pub runs: Vec<RunReport>,
}

#[derive(Debug, Serialize)]
pub struct CompareSeedReport {
    pub seed: u64,
    pub report: EquivalenceReport,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub generated_at: String,
    pub pass: bool,
    pub seeds: Vec<CompareSeedReport>,
}

fn timestamp() -> String {
    match std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH) {
        Ok(d) => format!("unix:{}.{:09}", d.as_secs(), d.subsec_nanos()),
        Err(_) => "unix:unknown".into(),
    }
}

/// Deterministic parameter stream per run seed, disjoint from the schedule
/// stream.
fn params_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

pub fn resolve_params(
    config: &ExperimentConfig,
    game: &GameModel,
    graph: &CommGraph,
    seed: u64,
) -> anyhow::Result<SolverParams> {
    match &config.params {
        ParamsSpec::Auto(_) => {
            let mut rng = params_rng(seed);
            Ok(sample_practical_params(game, graph, &mut rng, 0.35)?)
        }
        ParamsSpec::Explicit(p) => {
            p.check_positive(game.n_players())?;
            Ok(p.clone())
        }
    }
}

/// The practical admission gate: strong monotonicity, a positive-definite
/// preconditioner, and a relaxation inside the admissible interval. The full
/// theoretical margin is reported, not enforced.
pub fn admission_check(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
) -> anyhow::Result<StepSizeReport> {
    let report = step_size_report(game, graph, params)?; // errors when alpha <= 0
    if !report.phi_pd {
        anyhow::bail!(geno::Error::Assumption(format!(
            "preconditioner is not positive definite: eigmin(Phi) = {:.6e}",
            report.phi_eigmin
        )));
    }
    if !(params.eta > 0.0 && params.eta < 2.0)
        || (report.theta_ok && report.phi_psd && !report.eta_ok_sync)
    {
        anyhow::bail!(geno::Error::StepSize(format!(
            "eta = {} outside the admissible relaxation interval (0, (4*alpha*theta - ell^2)/(2*alpha*theta)) = (0, {:.6e})",
            params.eta, report.eta_max_sync
        )));
    }
    Ok(report)
}

fn eta_bounds_report(
    report: &StepSizeReport,
    params: &SolverParams,
    p_min: f64,
    phi_bar: usize,
    n: usize,
) -> EtaBoundsReport {
    let bounds = async_eta_bound(
        report.alpha,
        report.ell,
        report.theta,
        p_min,
        phi_bar,
        0.99,
        n,
    )
    .ok();
    EtaBoundsReport {
        eta_used: params.eta,
        eta_within_conservative: bounds.as_ref().map(|b| params.eta <= b.conservative),
        bounds,
    }
}

fn final_metrics(trace: &Trace, x_ref: Option<&DVector<f64>>) -> FinalMetrics {
    let last = trace.final_record().expect("runs always log a final record");
    FinalMetrics {
        fp_residual: last.fp_residual,
        kkt_residual: last.kkt_residual,
        consensus_residual: last.consensus_residual,
        max_violation: last.max_violation(),
        normalized_distance: x_ref.map(|r| (&last.x - r).norm() / r.norm()),
    }
}

/// High-precision synchronous reference equilibrium for the metrics.
pub fn reference_equilibrium(
    game: &GameModel,
    graph: &CommGraph,
    params: &SolverParams,
) -> anyhow::Result<NodeState> {
    let (_, state) = run_sync(game, graph, params, &StopRule::reference(), None, 10_000)?;
    Ok(state)
}

pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    order_flag: Option<OrderConfig>,
) -> anyhow::Result<ExperimentReport> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut runs = Vec::new();
    let mut all_converged = true;

    for &seed in &config.seeds {
        let (game, graph) = config.instance(seed)?;
        let params = resolve_params(config, &game, &graph, seed)?;
        let report = admission_check(&game, &graph, &params)?;
        let x_ref = reference_equilibrium(&game, &graph, &params)?;

        // The exact instance solved, in wire form, for replay.
        let instance_dir = out_dir.join(format!("instance-s{seed}"));
        fs::create_dir_all(&instance_dir)?;
        fs::write(
            instance_dir.join("game.json"),
            serde_json::to_string_pretty(&json::game_to_json(&game)?)?,
        )?;
        fs::write(
            instance_dir.join("graph.json"),
            serde_json::to_string_pretty(&json::graph_to_json(&graph))?,
        )?;
        fs::write(
            instance_dir.join("params.json"),
            serde_json::to_string_pretty(&params)?,
        )?;

        for variant in config.variant.expand() {
            // Artifact paths are stored relative to the output root so the
            // report bytes do not depend on where the experiment ran.
            let run_name = PathBuf::from(format!("{}-s{seed}", variant.name()));
            let run_dir = out_dir.join(&run_name);
            fs::create_dir_all(&run_dir)?;
            let stop = config.stop_rule(variant)?;
            let mut artifacts = Vec::new();

            let (trace, update_counts) = match variant {
                Variant::Sync => {
                    let (trace, _) = run_sync(&game, &graph, &params, &stop, None, 10)?;
                    (trace, None)
                }
                Variant::EAdagnes | Variant::AdGeno => {
                    let schedule = config.schedule_for(game.n_players(), seed, order_flag)?;
                    let kind = if variant == Variant::EAdagnes {
                        AsyncVariant::EAdagnes
                    } else {
                        AsyncVariant::AdGeno
                    };
                    let run = run_async(kind, &game, &graph, &params, &schedule, &stop, 50)?;
                    let file = fs::File::create(run_dir.join("events.jsonl"))?;
                    write_events_jsonl(&run.events, std::io::BufWriter::new(file))?;
                    artifacts.push(run_name.join("events.jsonl"));
                    let counts = run.trace.update_counts.clone();
                    (run.trace, counts)
                }
                Variant::All => unreachable!("expanded above"),
            };

            let file = fs::File::create(run_dir.join("trace.csv"))?;
            trace.write_csv(std::io::BufWriter::new(file), Some(&x_ref.x))?;
            artifacts.push(run_name.join("trace.csv"));

            let metric_records = metrics(&trace, &x_ref.x, &graph)?;
            fs::write(run_dir.join("metrics.csv"), metrics_csv(&metric_records))?;
            artifacts.push(run_name.join("metrics.csv"));

            let converged = trace.stop_reason.converged();
            all_converged &= converged;
            let schedule_p_min = 1.0 / game.n_players() as f64;
            runs.push(RunReport {
                seed,
                variant: variant.name(),
                iterations: trace.iterations,
                stop_reason: trace.stop_reason,
                converged,
                final_metrics: final_metrics(&trace, Some(&x_ref.x)),
                step_report: report.clone(),
                eta_bounds: eta_bounds_report(
                    &report,
                    &params,
                    schedule_p_min,
                    config.schedule.phi_bar,
                    game.n_players(),
                ),
                update_counts,
                artifacts,
            });
        }
    }

    let report = ExperimentReport {
        generated_at: timestamp(),
        all_converged,
        runs,
    };
    let path = out_dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn compare_variants(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> anyhow::Result<CompareReport> {
    fs::create_dir_all(out_dir)?;
    let mut seeds = Vec::new();
    let mut pass = true;
    for &seed in &config.seeds {
        let (game, graph) = config.instance(seed)?;
        let params = resolve_params(config, &game, &graph, seed)?;
        admission_check(&game, &graph, &params)?;
        let schedule_edge = config.schedule_for(game.n_players(), seed, None)?;
        let schedule_node = config.schedule_for(
            game.n_players(),
            seed.wrapping_add(config.desync_seed_offset),
            None,
        )?;
        let report = run_paired_with(
            &game,
            &graph,
            &params,
            &schedule_edge,
            &schedule_node,
            config.compare_steps,
            1e-10,
        )?;
        pass &= report.pass;
        seeds.push(CompareSeedReport { seed, report });
    }
    let report = CompareReport {
        generated_at: timestamp(),
        pass,
        seeds,
    };
    fs::write(
        out_dir.join("compare.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
