//! Command-line experiment runner: solve generated or file-based games with
//! the synchronous or simulated-asynchronous algorithms, compare the two
//! asynchronous variants under a shared schedule, query the brute-force
//! oracle, and validate step sizes.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, GameSource, OrderConfig, ParamsSpec, ScheduleConfig, Variant};
use geno::asynchronous::async_eta_bound;
use geno::json::load_game;
use geno::oracle::solve_vgne_bruteforce;
use geno::splitting::validate_step_sizes;
use runner::{EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_OK};

#[derive(Parser)]
#[command(name = "geno", about = "Distributed generalized Nash equilibrium experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config JSON; overrides are applied on top.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Game source: "cournot" or a path to a game JSON (needs --graph).
    #[arg(long)]
    game: Option<String>,
    /// Graph JSON, required for file-based games.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Run seeds; replaces the config's seed list.
    #[arg(long)]
    seed: Vec<u64>,
    /// Output directory (default: config, then $GENO_OUT_DIR, then ./geno-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run solver variants and write traces, metrics, events and a report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// sync | e_adagnes | ad_geno | all
        #[arg(long)]
        variant: Option<String>,
        /// uniform | round_robin | fair
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Drive both asynchronous variants under one schedule and check that
    /// their trajectories coincide.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Offset the second variant's schedule seed (negative control).
        #[arg(long, default_value_t = 0)]
        desync: u64,
        /// Steps per seed.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Solve a tiny game with the brute-force oracle and print the
    /// equilibrium.
    Oracle {
        /// Game JSON path.
        #[arg(long)]
        game: PathBuf,
    },
    /// Report the step-size conditions for a config.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn out_dir(common: &CommonArgs, config: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os("GENO_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("geno-out"))
}

fn build_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let game = match common.game.as_deref() {
                Some("cournot") | None => GameSource::Cournot {
                    seed: None,
                    fixture_pattern: false,
                },
                Some(path) => {
                    let graph = common
                        .graph
                        .clone()
                        .context("file-based games need --graph")?;
                    GameSource::Files {
                        game: PathBuf::from(path),
                        graph,
                    }
                }
            };
            ExperimentConfig {
                game,
                variant: Variant::All,
                params: ParamsSpec::default(),
                schedule: ScheduleConfig::default(),
                stop: None,
                seeds: vec![0],
                out_dir: None,
                compare_steps: 10_000,
                desync_seed_offset: 0,
            }
        }
    };
    if common.config.is_some() {
        if let Some(game) = common.game.as_deref() {
            config.game = match game {
                "cournot" => GameSource::Cournot {
                    seed: None,
                    fixture_pattern: false,
                },
                path => GameSource::Files {
                    game: PathBuf::from(path),
                    graph: common.graph.clone().context("file-based games need --graph")?,
                },
            };
        }
    }
    if !common.seed.is_empty() {
        config.seeds = common.seed.clone();
    }
    config.validate()?;
    Ok(config)
}

fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(ge) = cause.downcast_ref::<geno::Error>() {
            return match ge {
                geno::Error::Assumption(_) | geno::Error::StepSize(_) => EXIT_ASSUMPTION,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

fn parse_variant(s: &str) -> anyhow::Result<Variant> {
    Ok(match s {
        "sync" => Variant::Sync,
        "e_adagnes" => Variant::EAdagnes,
        "ad_geno" => Variant::AdGeno,
        "all" => Variant::All,
        other => bail!("unknown variant \"{other}\" (sync | e_adagnes | ad_geno | all)"),
    })
}

fn parse_order(s: &str) -> anyhow::Result<OrderConfig> {
    Ok(match s {
        "uniform" => OrderConfig::Uniform,
        "round_robin" => OrderConfig::RoundRobin,
        "fair" => OrderConfig::Fair,
        other => bail!("unknown schedule \"{other}\" (uniform | round_robin | fair)"),
    })
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run {
            common,
            variant,
            schedule,
        } => {
            let mut config = build_config(&common)?;
            if let Some(v) = variant.as_deref() {
                config.variant = parse_variant(v)?;
            }
            let order = schedule.as_deref().map(parse_order).transpose()?;
            let out = out_dir(&common, &config);
            let report = runner::run_experiment(&config, &out, order)?;
            for r in &report.runs {
                eprintln!(
                    "{} seed {}: {:?} after {} iterations (kkt {:.3e}, consensus {:.3e})",
                    r.variant,
                    r.seed,
                    r.stop_reason,
                    r.iterations,
                    r.final_metrics.kkt_residual,
                    r.final_metrics.consensus_residual,
                );
            }
            eprintln!("report: {}", out.join("report.json").display());
            Ok(if report.all_converged {
                EXIT_OK
            } else {
                EXIT_NO_CONVERGENCE
            })
        }
        Command::Compare {
            common,
            desync,
            steps,
        } => {
            let mut config = build_config(&common)?;
            config.desync_seed_offset = desync;
            if let Some(s) = steps {
                config.compare_steps = s;
            }
            let out = out_dir(&common, &config);
            let report = runner::compare_variants(&config, &out)?;
            for s in &report.seeds {
                match s.report.first_divergence {
                    None => eprintln!(
                        "seed {}: PASS (max deviation {:.3e})",
                        s.seed,
                        s.report
                            .max_x_deviation
                            .max(s.report.max_lambda_deviation)
                            .max(s.report.max_probe_deviation)
                    ),
                    Some(k) => eprintln!("seed {}: FAIL, first divergence at step {k}", s.seed),
                }
            }
            Ok(if report.pass { EXIT_OK } else { EXIT_NO_CONVERGENCE })
        }
        Command::Oracle { game } => {
            let game = load_game(&game)?;
            let (x, lam) = solve_vgne_bruteforce(&game)?;
            let out = serde_json::json!({
                "x": x.iter().copied().collect::<Vec<f64>>(),
                "lambda": lam.iter().copied().collect::<Vec<f64>>(),
                "kkt_residual": game.kkt_residual(&x, &lam)?,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(EXIT_OK)
        }
        Command::Validate { common } => {
            let config = build_config(&common)?;
            let seed = config.seeds[0];
            let (game, graph) = config.instance(seed)?;
            let params = runner::resolve_params(&config, &game, &graph, seed)?;
            let report = runner::admission_check(&game, &graph, &params)?;
            let strict = validate_step_sizes(&game, &graph, &params);
            let bounds = async_eta_bound(
                report.alpha,
                report.ell,
                report.theta,
                1.0 / game.n_players() as f64,
                config.schedule.phi_bar,
                0.99,
                game.n_players(),
            );
            let out = serde_json::json!({
                "params": params,
                "report": report,
                "strict_conditions": match &strict {
                    Ok(_) => serde_json::json!({"pass": true}),
                    Err(e) => serde_json::json!({"pass": false, "reason": e.to_string()}),
                },
                "async_eta_bounds": match &bounds {
                    Ok(b) => serde_json::to_value(b)?,
                    Err(e) => serde_json::json!({"unavailable": e.to_string()}),
                },
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err) as u8)
        }
    }
}
