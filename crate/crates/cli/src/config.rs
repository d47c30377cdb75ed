//! Experiment configuration: JSON schema and resolution into runnable pieces.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use geno::asynchronous::{ActivationOrder, AsyncSchedule, DelayModel};
use geno::cournot::{generate_cournot, CournotConfig, MarketPattern};
use geno::json::{load_game, load_graph};
use geno::splitting::SolverParams;
use geno::sync::StopRule;
use geno::{CommGraph, GameModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sync,
    EAdagnes,
    AdGeno,
    All,
}

impl Variant {
    pub fn expand(self) -> Vec<Variant> {
        match self {
            Variant::All => vec![Variant::Sync, Variant::EAdagnes, Variant::AdGeno],
            v => vec![v],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sync => "sync",
            Variant::EAdagnes => "e_adagnes",
            Variant::AdGeno => "ad_geno",
            Variant::All => "all",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSource {
    /// Seeded benchmark instance; the per-run seed offsets the base seed.
    Cournot {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        fixture_pattern: bool,
    },
    /// Explicit game and graph files.
    Files { game: PathBuf, graph: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSpec {
    /// `"auto"`: instance-adapted sampling with a convergence probe.
    Auto(String),
    Explicit(SolverParams),
}

impl Default for ParamsSpec {
    fn default() -> Self {
        ParamsSpec::Auto("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Activation probabilities; uniform when omitted.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default = "default_phi_bar")]
    pub phi_bar: usize,
    #[serde(default = "default_delay_model")]
    pub delay_model: DelayModelConfig,
    #[serde(default)]
    pub fairness_window: Option<usize>,
    #[serde(default)]
    pub order: Option<OrderConfig>,
    #[serde(default)]
    pub own_reads_stale: Option<bool>,
}

fn default_phi_bar() -> usize {
    4
}

fn default_delay_model() -> DelayModelConfig {
    DelayModelConfig::UniformIid
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            p: None,
            phi_bar: default_phi_bar(),
            delay_model: default_delay_model(),
            fairness_window: None,
            order: None,
            own_reads_stale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayModelConfig {
    Zero,
    UniformIid,
    FixedLag(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderConfig {
    Uniform,
    RoundRobin,
    Fair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    #[serde(default)]
    pub max_iters: Option<u64>,
    #[serde(default)]
    pub tol_fixed_point: Option<f64>,
    #[serde(default)]
    pub tol_kkt: Option<f64>,
    #[serde(default)]
    pub tol_consensus: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSource,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub params: ParamsSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub stop: Option<StopConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Steps for `compare`; also offsets the second schedule's seed so the
    /// negative control can be exercised deliberately.
    #[serde(default = "default_compare_steps")]
    pub compare_steps: u64,
    #[serde(default)]
    pub desync_seed_offset: u64,
}

fn default_variant() -> Variant {
    Variant::All
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_compare_steps() -> u64 {
    10_000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| "parsing experiment config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds list is empty");
        }
        if let ParamsSpec::Auto(word) = &self.params {
            if word != "auto" {
                bail!("params must be \"auto\" or an explicit object, got \"{word}\"");
            }
        }
        if let Some(p) = &self.schedule.p {
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                bail!("schedule probabilities must sum to 1, got {total}");
            }
        }
        Ok(())
    }

    /// Builds the game and graph for one run seed.
    pub fn instance(&self, seed: u64) -> anyhow::Result<(GameModel, CommGraph)> {
        match &self.game {
            GameSource::Cournot {
                seed: base,
                fixture_pattern,
            } => {
                let mut cfg = CournotConfig::standard(base.unwrap_or(0).wrapping_add(seed));
                if *fixture_pattern {
                    cfg.pattern = MarketPattern::Fixture;
                }
                Ok(generate_cournot(&cfg)?)
            }
            GameSource::Files { game, graph } => {
                let g = load_game(game).with_context(|| format!("loading {}", game.display()))?;
                let gr =
                    load_graph(graph).with_context(|| format!("loading {}", graph.display()))?;
                if gr.node_count() != g.n_players() {
                    bail!(
                        "graph has {} nodes but the game has {} players",
                        gr.node_count(),
                        g.n_players()
                    );
                }
                Ok((g, gr))
            }
        }
    }

    pub fn schedule_for(&self, n: usize, seed: u64, order_flag: Option<OrderConfig>) -> anyhow::Result<AsyncSchedule> {
        let p = match &self.schedule.p {
            Some(p) => {
                if p.len() != n {
                    bail!("schedule probabilities have length {} for {} agents", p.len(), n);
                }
                p.clone()
            }
            None => vec![1.0 / n as f64; n],
        };
        let delay_model = match self.schedule.delay_model {
            DelayModelConfig::Zero => DelayModel::Zero,
            DelayModelConfig::UniformIid => DelayModel::UniformIid,
            DelayModelConfig::FixedLag(lag) => DelayModel::FixedLag(lag),
        };
        let order = match order_flag.or(self.schedule.order) {
            Some(OrderConfig::RoundRobin) => ActivationOrder::RoundRobin,
            Some(OrderConfig::Fair) => {
                ActivationOrder::FairWindow(self.schedule.fairness_window.unwrap_or(20 * n))
            }
            Some(OrderConfig::Uniform) | None => match self.schedule.fairness_window {
                Some(w) => ActivationOrder::FairWindow(w),
                None => ActivationOrder::Random,
            },
        };
        let mut schedule =
            AsyncSchedule::new(p, seed, self.schedule.phi_bar, delay_model, order)?;
        if let Some(stale) = self.schedule.own_reads_stale {
            schedule.own_reads_stale = stale;
        }
        Ok(schedule)
    }

    pub fn stop_rule(&self, variant: Variant) -> anyhow::Result<StopRule> {
        let defaults = match variant {
            Variant::Sync => (1_000_000, Some(1e-10), None, None),
            _ => (200_000, Some(1e-8), None, None),
        };
        let rule = match &self.stop {
            None => StopRule::new(defaults.0, defaults.1, defaults.2, defaults.3)?,
            Some(s) => StopRule::new(
                s.max_iters.unwrap_or(defaults.0),
                s.tol_fixed_point.or(defaults.1),
                s.tol_kkt,
                s.tol_consensus,
            )?,
        };
        Ok(rule)
    }
}
