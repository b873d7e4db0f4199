use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use staged_rl::deeprl::{evaluate_agents, DqnAgent};
use staged_rl::env_multi::ObsEncoder;
use staged_rl::env_single::SingleVariant;
use staged_rl::harness::{emit_plot, run_stage, save_metrics, ExperimentConfig, Stage};
use staged_rl::neuralnet::DenseNet;
use staged_rl::tabular::{evaluate_table, merge_tables, QTable};
use staged_rl::transfer::{pad_network, transfer_capacity};
use staged_rl::{Error, Result};

#[derive(Parser)]
#[command(name = "srl", version, about = "Staged RL on traffic-junction gridworlds", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubtaskVariant {
    Goal,
    Avoid,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a sub-task Q-table (first seed) and save it.
    TrainSubtask {
        #[arg(long, value_enum)]
        variant: SubtaskVariant,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Merge Q-tables by averaging shared states.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the joint task, optionally from a merged table.
    TrainJoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Centralised VDN training; saves the shared policy of the first seed.
    TrainVdn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Independent DQN training, from scratch or from pretrained weights.
    TrainIdql {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Plot smoothed learning curves from metrics files.
    Plot {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy rollouts of a saved table or network.
    Eval {
        #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
        qtable: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
}

fn load_config(common: &Common, stage: Stage) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_as(&common.config, stage)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

/// Distinguishes runs in plots when the config leaves `run.id` at the stage tag.
fn default_run_id(cfg: &mut ExperimentConfig, id: &str) {
    if cfg.run_id == cfg.stage.tag() {
        cfg.run_id = id.to_string();
    }
}

fn train(cfg: &ExperimentConfig, metrics: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let output = run_stage(cfg)?;
    if let Some(path) = metrics {
        save_metrics(path, &output.rows)?;
    }
    if let (Some(path), Some(artifact)) = (out, &output.artifact) {
        artifact.save(path)?;
    }
    let n = output.rows.len().max(1) as f64;
    let mean = output.rows.iter().map(|r| r.return_total).sum::<f64>() / n;
    eprintln!(
        "{}: {} seeds x {} episodes, mean return {mean:.3}",
        cfg.stage.tag(),
        cfg.seeds.len(),
        cfg.episodes
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainSubtask {
            variant,
            common,
            out,
            metrics,
        } => {
            let mut cfg = load_config(&common, Stage::TabularSubtask)?;
            let variant = match variant {
                SubtaskVariant::Goal => SingleVariant::GoalOnly,
                SubtaskVariant::Avoid => SingleVariant::AvoidOnly,
            };
            cfg.env.variant = Some(variant);
            default_run_id(&mut cfg, &format!("subtask-{}", variant.tag()));
            train(&cfg, metrics.as_deref(), Some(&out))
        }
        Command::Merge { inputs, out } => {
            let tables = inputs.iter().map(|p| QTable::load(p)).collect::<Result<Vec<_>>>()?;
            let merged = merge_tables(&tables)?;
            merged.save(&out)?;
            eprintln!("merged {} tables into {} states", tables.len(), merged.len());
            Ok(())
        }
        Command::TrainJoint {
            common,
            init,
            metrics,
            out,
        } => {
            let mut cfg = load_config(&common, Stage::TabularJoint)?;
            cfg.env.variant = Some(SingleVariant::Joint);
            if init.is_some() {
                cfg.init = init;
            }
            if cfg.init.is_some() {
                default_run_id(&mut cfg, "tabular-joint-merged");
            }
            train(&cfg, Some(&metrics), out.as_deref())
        }
        Command::TrainVdn { common, out, metrics } => {
            let cfg = load_config(&common, Stage::VdnPretrain)?;
            train(&cfg, Some(&metrics), Some(&out))
        }
        Command::TrainIdql { common, init, metrics } => {
            let stage = if init.is_some() {
                Stage::IdqlTransfer
            } else {
                Stage::IdqlScratch
            };
            let mut cfg = load_config(&common, stage)?;
            cfg.init = init;
            train(&cfg, Some(&metrics), None)
        }
        Command::Plot { inputs, window, out } => emit_plot(&inputs, window, &out),
        Command::Eval {
            qtable,
            weights,
            common,
            episodes,
        } => {
            if episodes == 0 {
                return Err(Error::Config("--episodes must be >= 1".into()));
            }
            let records = match (qtable, weights) {
                (Some(path), _) => {
                    let cfg = load_config(&common, Stage::TabularJoint)?;
                    let env = cfg.single_env(cfg.seeds.first().copied().unwrap_or(0))?;
                    evaluate_table(&QTable::load(&path)?, &env, episodes)?
                }
                (None, Some(path)) => {
                    let cfg = load_config(&common, Stage::IdqlScratch)?;
                    let env = cfg.multi_env(cfg.seeds.first().copied().unwrap_or(0))?;
                    let net = DenseNet::load(&path)?;
                    let capacity = transfer_capacity(net.input_dim(), &env);
                    let net = pad_network(&net, ObsEncoder::BASE_DIM + capacity)?;
                    evaluate_agents(&[DqnAgent::new(net)], &env, capacity, episodes)?
                }
                (None, None) => unreachable!("clap requires one of --qtable/--weights"),
            };
            let mean = records.iter().map(|r| r.return_total).sum::<f64>() / records.len() as f64;
            let collisions: usize = records.iter().map(|r| r.collisions).sum();
            println!("episodes {episodes} mean_return {mean:.4} collisions {collisions}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
