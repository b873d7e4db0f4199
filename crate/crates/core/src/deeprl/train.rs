//! Episode loops for shared-parameter VDN and independent DQN learners on
//! the multi-agent junction.

use crate::env_multi::{MultiEnv, MultiEnvConfig, ObsEncoder};
use crate::error::{Error, Result};
use crate::gridworld::{Action, LocalObservation};
use crate::harness::EpisodeRecord;
use crate::neuralnet::init_network_with;
use crate::rng::{seeded, seeded_sub, Stream};
use crate::tabular::{default_decay_episodes, linear_epsilon, validate_epsilon};
use crate::transfer::pad_network;

use super::{dqn_train_step, sync_target, vdn_train_step, DqnAgent, JointTransition, ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct DeepParams {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient updates between target syncs.
    pub target_sync: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    /// Minimum buffer size before updates start.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
}

impl DeepParams {
    pub fn for_episodes(episodes: usize) -> Self {
        Self {
            gamma: 0.99,
            lr: 5e-4,
            batch_size: 32,
            buffer_capacity: 10_000,
            target_sync: 200,
            train_every: 4,
            warmup: 32,
            hidden: vec![32, 32],
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: default_decay_episodes(episodes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("need 0 < batch_size <= buffer_capacity"));
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return Err(Error::config("target_sync and train_every must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        validate_epsilon(self.epsilon_start, self.epsilon_end, self.epsilon_decay_episodes)
    }

    pub fn epsilon_at(&self, episode: usize) -> f64 {
        linear_epsilon(self.epsilon_start, self.epsilon_end, self.epsilon_decay_episodes, episode)
    }

    /// Layer sizes for an input of `input_dim` values.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(Action::COUNT);
        dims
    }

    fn warmup_len(&self) -> usize {
        self.warmup.max(self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiRun {
    pub episodes: usize,
    /// Size of the one-hot identity block in observations; at least
    /// `n_agents`. Larger values reserve inert slots for a bigger team.
    pub agent_capacity: usize,
}

impl MultiRun {
    fn encoder(&self, env_cfg: &MultiEnvConfig) -> Result<ObsEncoder> {
        if self.episodes == 0 {
            return Err(Error::config("episodes must be >= 1"));
        }
        if self.agent_capacity < env_cfg.n_agents {
            return Err(Error::config(format!(
                "agent capacity {} is smaller than the team of {}",
                self.agent_capacity, env_cfg.n_agents
            )));
        }
        Ok(ObsEncoder::new(&env_cfg.layout, self.agent_capacity))
    }
}

fn encode_all(encoder: &ObsEncoder, obs: &[Option<LocalObservation>]) -> Result<Vec<Option<Vec<f64>>>> {
    obs.iter()
        .enumerate()
        .map(|(i, o)| o.as_ref().map(|o| encoder.encode(o, i)).transpose())
        .collect()
}

/// CTDE training of one network shared by every agent, with the additive
/// joint value and the summed team reward. Seeded by `env_cfg.seed`.
pub fn train_vdn(
    env_cfg: &MultiEnvConfig,
    params: &DeepParams,
    run: MultiRun,
) -> Result<(DqnAgent, Vec<EpisodeRecord>)> {
    params.validate()?;
    let encoder = run.encoder(env_cfg)?;
    let env = MultiEnv::new(env_cfg.clone())?;
    let seed = env_cfg.seed;
    // Initialise for the team actually present, then pad the identity block:
    // unused slots get zero columns and only ever see zero inputs.
    let net = init_network_with(
        &params.dims(ObsEncoder::BASE_DIM + env_cfg.n_agents),
        &mut seeded(seed, Stream::Init),
    )?;
    let mut agent = DqnAgent::new(pad_network(&net, encoder.dim())?);
    let mut buffer = ReplayBuffer::new(params.buffer_capacity, seeded(seed, Stream::Replay))?;
    let mut explore = seeded(seed, Stream::Exploration);
    let mut records = Vec::with_capacity(run.episodes);
    let mut total_steps = 0usize;

    let (mut state, mut obs) = env.reset();
    for episode in 0..run.episodes {
        if episode > 0 {
            (state, obs) = env.reset_with(state.rng);
        }
        let epsilon = params.epsilon_at(episode);
        let mut record = EpisodeRecord {
            epsilon,
            ..EpisodeRecord::default()
        };
        let mut encoded = encode_all(&encoder, &obs)?;
        loop {
            let mut actions = Vec::with_capacity(env_cfg.n_agents);
            for o in &encoded {
                actions.push(match o {
                    Some(x) => agent.act(x, epsilon, &mut explore)?,
                    None => Action::Stay,
                });
            }
            let out = env.step(&mut state, &actions)?;
            let team_reward: f64 = out.rewards.iter().sum();
            let next = encode_all(&encoder, &out.obs)?;
            buffer.push(JointTransition {
                obs: encoded,
                actions,
                team_reward,
                next_obs: next.clone(),
                done: out.done,
            });
            encoded = next;
            total_steps += 1;
            if buffer.len() >= params.warmup_len() && total_steps.is_multiple_of(params.train_every) {
                vdn_train_step(&mut agent, &mut buffer, params.batch_size, params.gamma, params.lr)?;
                if agent.steps_since_sync >= params.target_sync {
                    sync_target(&mut agent);
                }
            }
            record.return_total += team_reward;
            record.collisions += out.collisions;
            record.steps += 1;
            if out.done {
                break;
            }
        }
        records.push(record);
    }
    Ok((agent, records))
}

/// Fully decentralised training: every agent owns its network, target and
/// replay buffer and learns from its own reward. `init` supplies starting
/// agents (e.g. a transferred policy); otherwise each agent gets a fresh
/// network from its own seeded stream.
pub fn train_idql(
    env_cfg: &MultiEnvConfig,
    params: &DeepParams,
    run: MultiRun,
    init: Option<Vec<DqnAgent>>,
) -> Result<(Vec<DqnAgent>, Vec<EpisodeRecord>)> {
    params.validate()?;
    let encoder = run.encoder(env_cfg)?;
    let env = MultiEnv::new(env_cfg.clone())?;
    let n = env_cfg.n_agents;
    let seed = env_cfg.seed;
    let dims = params.dims(encoder.dim());
    let mut agents = match init {
        Some(agents) => {
            if agents.len() != n {
                return Err(Error::config(format!("{} initial agents for a team of {n}", agents.len())));
            }
            if let Some(bad) = agents.iter().position(|a| a.online.dims() != dims) {
                return Err(Error::config(format!(
                    "initial agent {bad} has dims {:?}, expected {dims:?}",
                    agents[bad].online.dims()
                )));
            }
            agents
        }
        None => (0..n)
            .map(|i| {
                let net = init_network_with(&dims, &mut seeded_sub(seed, Stream::Init, i as u64 + 1))?;
                Ok(DqnAgent::new(net))
            })
            .collect::<Result<_>>()?,
    };
    let mut buffers: Vec<ReplayBuffer<Transition>> = (0..n)
        .map(|i| ReplayBuffer::new(params.buffer_capacity, seeded_sub(seed, Stream::Replay, i as u64 + 1)))
        .collect::<Result<_>>()?;
    let mut explore = seeded(seed, Stream::Exploration);
    let mut records = Vec::with_capacity(run.episodes);
    let mut total_steps = 0usize;

    let (mut state, mut obs) = env.reset();
    for episode in 0..run.episodes {
        if episode > 0 {
            (state, obs) = env.reset_with(state.rng);
        }
        let epsilon = params.epsilon_at(episode);
        let mut record = EpisodeRecord {
            epsilon,
            ..EpisodeRecord::default()
        };
        let mut encoded = encode_all(&encoder, &obs)?;
        loop {
            let mut actions = Vec::with_capacity(n);
            for (agent, o) in agents.iter().zip(&encoded) {
                actions.push(match o {
                    Some(x) => agent.act(x, epsilon, &mut explore)?,
                    None => Action::Stay,
                });
            }
            let out = env.step(&mut state, &actions)?;
            let next = encode_all(&encoder, &out.obs)?;
            for (i, (o, buffer)) in encoded.iter_mut().zip(buffers.iter_mut()).enumerate() {
                let Some(obs) = o.take() else { continue };
                let (next_obs, done) = match &next[i] {
                    Some(x) => (x.clone(), out.dones[i]),
                    None => (vec![0.0; obs.len()], true),
                };
                buffer.push(Transition {
                    obs,
                    action: actions[i],
                    reward: out.rewards[i],
                    next_obs,
                    done,
                });
            }
            encoded = next;
            total_steps += 1;
            if total_steps.is_multiple_of(params.train_every) {
                for (agent, buffer) in agents.iter_mut().zip(buffers.iter_mut()) {
                    if buffer.len() < params.warmup_len() {
                        continue;
                    }
                    dqn_train_step(agent, buffer, params.batch_size, params.gamma, params.lr)?;
                    if agent.steps_since_sync >= params.target_sync {
                        sync_target(agent);
                    }
                }
            }
            record.return_total += out.rewards.iter().sum::<f64>();
            record.collisions += out.collisions;
            record.steps += 1;
            if out.done {
                break;
            }
        }
        records.push(record);
    }
    Ok((agents, records))
}

/// Greedy rollouts without learning. One agent acts for the whole team
/// when `agents` has a single entry; otherwise agent `i` acts for slot `i`.
pub fn evaluate_agents(
    agents: &[DqnAgent],
    env_cfg: &MultiEnvConfig,
    agent_capacity: usize,
    episodes: usize,
) -> Result<Vec<EpisodeRecord>> {
    let run = MultiRun { episodes, agent_capacity };
    let encoder = run.encoder(env_cfg)?;
    if agents.len() != 1 && agents.len() != env_cfg.n_agents {
        return Err(Error::config(format!("{} agents for a team of {}", agents.len(), env_cfg.n_agents)));
    }
    if let Some(bad) = agents.iter().find(|a| a.online.input_dim() != encoder.dim()) {
        return Err(Error::config(format!(
            "network takes {} inputs, observations have {}",
            bad.online.input_dim(),
            encoder.dim()
        )));
    }
    let env = MultiEnv::new(env_cfg.clone())?;
    let mut records = Vec::with_capacity(episodes);
    let (mut state, mut obs) = env.reset();
    for episode in 0..episodes {
        if episode > 0 {
            (state, obs) = env.reset_with(state.rng);
        }
        let mut record = EpisodeRecord::default();
        loop {
            let mut actions = Vec::with_capacity(env_cfg.n_agents);
            for (i, o) in encode_all(&encoder, &obs)?.iter().enumerate() {
                actions.push(match o {
                    Some(x) => agents[i % agents.len()].greedy_action(x)?,
                    None => Action::Stay,
                });
            }
            let out = env.step(&mut state, &actions)?;
            record.return_total += out.rewards.iter().sum::<f64>();
            record.collisions += out.collisions;
            record.steps += 1;
            obs = out.obs;
            if out.done {
                break;
            }
        }
        records.push(record);
    }
    Ok(records)
}
