use std::path::PathBuf;

use rayon::prelude::*;

use crate::deeprl::{train_idql, train_vdn, DqnAgent, MultiRun};
use crate::error::{Error, Result};
use crate::neuralnet::DenseNet;
use crate::tabular::{train_tabular, QTable, TabularRun};
use crate::transfer::{pad_network, replicate_policy, transfer_capacity};

use super::config::{ExperimentConfig, Stage};
use super::metrics::{save_metrics, MetricsRow};
use super::EpisodeRecord;

/// The learned object a stage leaves behind (taken from the first seed).
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Table(QTable),
    Weights(DenseNet),
}

impl Artifact {
    pub fn extension(&self) -> &'static str {
        match self {
            Artifact::Table(_) => "qt",
            Artifact::Weights(_) => "wts",
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        match self {
            Artifact::Table(t) => t.save(path),
            Artifact::Weights(w) => w.save(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    /// Ordered by (seed as listed, episode).
    pub rows: Vec<MetricsRow>,
    pub artifact: Option<Artifact>,
}

enum Init {
    None,
    Table(QTable),
    Weights(DenseNet),
}

fn thread_count(seeds: usize) -> Result<usize> {
    match std::env::var("SRL_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(seeds)),
            _ => Err(Error::config(format!("SRL_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(seeds),
    }
}

/// Runs the configured stage once per seed, in parallel across seeds.
/// Results are gathered in seed order, so output never depends on scheduling.
pub fn run_stage(cfg: &ExperimentConfig) -> Result<StageOutput> {
    cfg.validate()?;
    let init = match (&cfg.init, cfg.stage) {
        (None, _) => Init::None,
        (Some(path), Stage::TabularJoint) => Init::Table(QTable::load(path)?),
        (Some(path), _) => Init::Weights(DenseNet::load(path)?),
    };
    let threads = thread_count(cfg.seeds.len())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let per_seed: Vec<Result<(Vec<EpisodeRecord>, Option<Artifact>)>> =
        pool.install(|| cfg.seeds.par_iter().map(|&seed| run_seed(cfg, &init, seed)).collect());

    let mut rows = Vec::with_capacity(cfg.seeds.len() * cfg.episodes);
    let mut artifact = None;
    for (&seed, result) in cfg.seeds.iter().zip(per_seed) {
        let (records, art) = result?;
        if artifact.is_none() {
            artifact = art;
        }
        rows.extend(records.into_iter().enumerate().map(|(episode, r)| MetricsRow {
            run_id: cfg.run_id.clone(),
            seed,
            episode,
            return_total: r.return_total,
            collisions: r.collisions,
            steps: r.steps,
            epsilon: r.epsilon,
        }));
    }
    Ok(StageOutput { rows, artifact })
}

fn run_seed(cfg: &ExperimentConfig, init: &Init, seed: u64) -> Result<(Vec<EpisodeRecord>, Option<Artifact>)> {
    match cfg.stage {
        Stage::TabularSubtask | Stage::TabularJoint => {
            let env = cfg.single_env(seed)?;
            let run = TabularRun {
                episodes: cfg.episodes,
                init: match init {
                    Init::Table(t) => Some(t.clone()),
                    _ => None,
                },
                frozen: false,
            };
            let (table, records) = train_tabular(&env, &cfg.tabular_params()?, run)?;
            Ok((records, Some(Artifact::Table(table))))
        }
        Stage::VdnPretrain => {
            let env = cfg.multi_env(seed)?;
            let run = MultiRun {
                episodes: cfg.episodes,
                agent_capacity: cfg.agent_capacity(&env),
            };
            let (agent, records) = train_vdn(&env, &cfg.deep_params()?, run)?;
            Ok((records, Some(Artifact::Weights(agent.online))))
        }
        Stage::IdqlScratch | Stage::IdqlTransfer => {
            let env = cfg.multi_env(seed)?;
            let mut params = cfg.deep_params()?;
            let (capacity, agents) = match init {
                Init::Weights(net) => {
                    let capacity = transfer_capacity(net.input_dim(), &env).max(cfg.agent_capacity(&env));
                    let net = pad_network(net, crate::env_multi::ObsEncoder::BASE_DIM + capacity)?;
                    let dims = net.dims();
                    params.hidden = dims[1..dims.len() - 1].to_vec();
                    let agents = replicate_policy(&net, env.n_agents).into_iter().map(DqnAgent::new).collect();
                    (capacity, Some(agents))
                }
                _ => (cfg.agent_capacity(&env), None),
            };
            let run = MultiRun {
                episodes: cfg.episodes,
                agent_capacity: capacity,
            };
            let (_, records) = train_idql(&env, &params, run, agents)?;
            Ok((records, None))
        }
    }
}

/// Runs the stage and writes `<output_dir>/<run_id>.csv`, plus the first
/// seed's table or weights as `<run_id>.qt` / `<run_id>.wts` when the stage
/// produces one. Returns the metrics path.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = run_stage(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let metrics = cfg.output_dir.join(format!("{}.csv", cfg.run_id));
    save_metrics(&metrics, &out.rows)?;
    if let Some(art) = &out.artifact {
        art.save(&cfg.output_dir.join(format!("{}.{}", cfg.run_id, art.extension())))?;
    }
    Ok(metrics)
}
