//! Multi-agent traffic junction with assigned destinations.
//!
//! Agents move simultaneously. Conflicting moves (same target cell, or two
//! agents swapping cells) are penalised and the movers are sent back to the
//! cell they came from, repeating until no conflict remains. An agent that
//! reaches its destination leaves the grid. When there are more agents than
//! road ends, the surplus waits in a queue and enters through road ends
//! left free at the end of a step.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::gridworld::{apply_action, observe, Action, CellCode, GridLayout, LocalObservation, Position};
use crate::rng::{seeded, EnvRng, Stream};

#[derive(Debug, Clone)]
pub struct MultiEnvConfig {
    pub n_agents: usize,
    pub layout: GridLayout,
    pub max_steps: usize,
    pub collision_penalty: f64,
    pub step_penalty: f64,
    pub seed: u64,
}

impl MultiEnvConfig {
    pub const DEFAULT_MAX_STEPS: usize = 60;
    pub const DEFAULT_COLLISION_PENALTY: f64 = -10.0;
    pub const DEFAULT_STEP_PENALTY: f64 = -0.01;

    pub fn new(n_agents: usize, layout: GridLayout) -> Self {
        Self {
            n_agents,
            layout,
            max_steps: Self::DEFAULT_MAX_STEPS,
            collision_penalty: Self::DEFAULT_COLLISION_PENALTY,
            step_penalty: Self::DEFAULT_STEP_PENALTY,
            seed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.layout.spawn_points().len() * self.layout.arm_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::config("env.n_agents must be positive"));
        }
        if self.n_agents > self.capacity() {
            return Err(Error::config(format!(
                "env.n_agents = {} exceeds the layout capacity of {}",
                self.n_agents,
                self.capacity()
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps must be positive"));
        }
        if !(self.collision_penalty < self.step_penalty && self.step_penalty < 0.0)
            || !self.collision_penalty.is_finite()
        {
            return Err(Error::config(format!(
                "need collision_penalty < step_penalty < 0, got {} and {}",
                self.collision_penalty, self.step_penalty
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Queued,
    Active,
    Arrived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSlot {
    pub status: AgentStatus,
    /// Current cell while active; last cell once arrived; `None` while queued.
    pub pos: Option<Position>,
    /// Assigned on entry.
    pub dest: Option<Position>,
}

impl AgentSlot {
    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }
}

#[derive(Debug, Clone)]
pub struct MultiEnvState {
    pub agents: Vec<AgentSlot>,
    pub step: usize,
    pub done: bool,
    pub rng: EnvRng,
}

#[derive(Debug, Clone)]
pub struct MultiStep {
    /// `None` for agents not on the grid (queued or arrived).
    pub obs: Vec<Option<LocalObservation>>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Agents that received the collision penalty this step.
    pub collisions: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct MultiEnv {
    config: MultiEnvConfig,
}

impl MultiEnv {
    pub fn new(config: MultiEnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MultiEnvConfig {
        &self.config
    }

    pub fn reset(&self) -> (MultiEnvState, Vec<Option<LocalObservation>>) {
        self.reset_with(seeded(self.config.seed, Stream::Environment))
    }

    pub fn reset_with(&self, rng: EnvRng) -> (MultiEnvState, Vec<Option<LocalObservation>>) {
        let queued = AgentSlot {
            status: AgentStatus::Queued,
            pos: None,
            dest: None,
        };
        let mut state = MultiEnvState {
            agents: vec![queued; self.config.n_agents],
            step: 0,
            done: false,
            rng,
        };
        self.admit_queued(&mut state);
        let obs = self.observe_all(&state);
        (state, obs)
    }

    pub fn step(&self, state: &mut MultiEnvState, acts: &[Action]) -> Result<MultiStep> {
        let cfg = &self.config;
        if acts.len() != cfg.n_agents {
            return Err(Error::contract(format!(
                "expected {} actions, got {}",
                cfg.n_agents,
                acts.len()
            )));
        }
        if state.done {
            return Err(Error::contract("step called on a finished episode"));
        }

        let active: Vec<usize> = (0..cfg.n_agents).filter(|&i| state.agents[i].is_active()).collect();
        let prev: Vec<Position> = active.iter().map(|&i| state.agents[i].pos.unwrap()).collect();
        let mut next = Vec::with_capacity(active.len());
        for (&i, &p) in active.iter().zip(&prev) {
            next.push(apply_action(p, acts[i], &cfg.layout)?);
        }

        let mut collided = BTreeSet::new();
        loop {
            let hits = detect_collisions(&prev, &next);
            if hits.is_empty() {
                break;
            }
            for &k in &hits {
                next[k] = prev[k];
            }
            collided.extend(hits);
        }

        let mut rewards = vec![0.0; cfg.n_agents];
        let mut dones = vec![false; cfg.n_agents];
        for (k, &i) in active.iter().enumerate() {
            let slot = &mut state.agents[i];
            slot.pos = Some(next[k]);
            rewards[i] = cfg.step_penalty;
            if collided.contains(&k) {
                rewards[i] += cfg.collision_penalty;
            } else if slot.dest == Some(next[k]) {
                slot.status = AgentStatus::Arrived;
                dones[i] = true;
            }
        }

        // Waiting to enter still costs time: queued agents have not arrived.
        for (i, slot) in state.agents.iter().enumerate() {
            if slot.status == AgentStatus::Queued {
                rewards[i] = cfg.step_penalty;
            }
        }

        state.step += 1;
        self.admit_queued(state);
        let all_arrived = state.agents.iter().all(|a| a.status == AgentStatus::Arrived);
        state.done = all_arrived || state.step >= cfg.max_steps;
        for (i, slot) in state.agents.iter().enumerate() {
            dones[i] |= state.done || slot.status == AgentStatus::Arrived;
        }
        Ok(MultiStep {
            obs: self.observe_all(state),
            rewards,
            dones,
            collisions: collided.len(),
            done: state.done,
        })
    }

    pub fn observe_all(&self, state: &MultiEnvState) -> Vec<Option<LocalObservation>> {
        let frac = state.step as f64 / self.config.max_steps as f64;
        let vehicles: Vec<(usize, Position)> = state
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_active())
            .map(|(i, a)| (i, a.pos.unwrap()))
            .collect();
        state
            .agents
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                if !slot.is_active() {
                    return None;
                }
                let mut marks: Vec<(Position, CellCode)> = vehicles
                    .iter()
                    .filter(|(j, _)| *j != i)
                    .map(|&(_, p)| (p, CellCode::Vehicle))
                    .collect();
                if let Some(d) = slot.dest {
                    marks.push((d, CellCode::Goal));
                }
                Some(observe(&self.config.layout, &marks, slot.pos.unwrap(), Some(frac)))
            })
            .collect()
    }

    /// Queued agents, in index order, take road ends not held by an active
    /// agent; the free ends are visited in a seeded random order.
    fn admit_queued(&self, state: &mut MultiEnvState) {
        if !state.agents.iter().any(|a| a.status == AgentStatus::Queued) {
            return;
        }
        let layout = &self.config.layout;
        let mut free: Vec<Position> = layout
            .spawn_points()
            .iter()
            .copied()
            .filter(|p| !state.agents.iter().any(|a| a.is_active() && a.pos == Some(*p)))
            .collect();
        free.shuffle(&mut state.rng);
        let mut free = free.into_iter();
        for slot in state.agents.iter_mut().filter(|a| a.status == AgentStatus::Queued) {
            let Some(spawn) = free.next() else { break };
            let arm = layout.arm_of(spawn);
            let dests: Vec<Position> = layout
                .goal_candidates()
                .iter()
                .copied()
                .filter(|&g| layout.arm_of(g) != arm)
                .collect();
            slot.status = AgentStatus::Active;
            slot.pos = Some(spawn);
            slot.dest = dests.choose(&mut state.rng).copied();
        }
    }
}

/// Indices whose next cells coincide, or that swapped cells with another
/// entry.
pub fn detect_collisions(prev: &[Position], next: &[Position]) -> BTreeSet<usize> {
    let mut hits = BTreeSet::new();
    for i in 0..next.len() {
        for j in i + 1..next.len() {
            let same = next[i] == next[j];
            let swap = next[i] == prev[j] && next[j] == prev[i] && next[i] != prev[i];
            if same || swap {
                hits.insert(i);
                hits.insert(j);
            }
        }
    }
    hits
}

/// Flattens a local observation into a network input:
/// normalised position (2), one-hot mask (9 × 4), step fraction (1) and a
/// one-hot agent identity block of `agent_capacity` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsEncoder {
    height: usize,
    width: usize,
    agent_capacity: usize,
}

impl ObsEncoder {
    pub const BASE_DIM: usize = 2 + 9 * CellCode::COUNT + 1;

    pub fn new(layout: &GridLayout, agent_capacity: usize) -> Self {
        Self {
            height: layout.height(),
            width: layout.width(),
            agent_capacity,
        }
    }

    pub fn agent_capacity(&self) -> usize {
        self.agent_capacity
    }

    pub fn dim(&self) -> usize {
        Self::BASE_DIM + self.agent_capacity
    }

    pub fn encode(&self, obs: &LocalObservation, agent: usize) -> Result<Vec<f64>> {
        if agent >= self.agent_capacity {
            return Err(Error::contract(format!(
                "agent {agent} has no identity slot (capacity {})",
                self.agent_capacity
            )));
        }
        let mut v = vec![0.0; self.dim()];
        v[0] = obs.own_position.row as f64 / (self.height - 1).max(1) as f64;
        v[1] = obs.own_position.col as f64 / (self.width - 1).max(1) as f64;
        for (k, code) in obs.mask.iter().flatten().enumerate() {
            v[2 + k * CellCode::COUNT + *code as usize] = 1.0;
        }
        v[Self::BASE_DIM - 1] = obs.step_fraction.unwrap_or(0.0);
        v[Self::BASE_DIM + agent] = 1.0;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::build_junction_layout;
    use crate::rng::Stream;
    use rand::Rng;

    fn env(n: usize, seed: u64) -> MultiEnv {
        let mut cfg = MultiEnvConfig::new(n, build_junction_layout(6, 2).unwrap());
        cfg.seed = seed;
        MultiEnv::new(cfg).unwrap()
    }

    fn active_cells(state: &MultiEnvState) -> Vec<Position> {
        state.agents.iter().filter(|a| a.is_active()).map(|a| a.pos.unwrap()).collect()
    }

    #[test]
    fn four_agents_start_on_distinct_road_ends() {
        let e = env(4, 3);
        let (s, obs) = e.reset();
        let cells = active_cells(&s);
        assert_eq!(cells.len(), 4);
        let unique: BTreeSet<_> = cells.iter().collect();
        assert_eq!(unique.len(), 4);
        let layout = &e.config().layout;
        for a in &s.agents {
            let (p, d) = (a.pos.unwrap(), a.dest.unwrap());
            assert!(layout.spawn_points().contains(&p));
            assert_ne!(layout.arm_of(p), layout.arm_of(d));
        }
        assert!(obs.iter().all(|o| o.as_ref().unwrap().step_fraction == Some(0.0)));
    }

    #[test]
    fn reset_is_deterministic() {
        let (a, _) = env(4, 9).reset();
        let (b, _) = env(4, 9).reset();
        assert_eq!(a.agents, b.agents);
    }

    #[test]
    fn surplus_agents_queue() {
        let (s, obs) = env(10, 1).reset();
        assert_eq!(s.agents.iter().filter(|a| a.is_active()).count(), 8);
        assert_eq!(s.agents.iter().filter(|a| a.status == AgentStatus::Queued).count(), 2);
        assert!(obs[8].is_none() && obs[9].is_none());
    }

    #[test]
    fn queued_agents_enter_at_freed_road_ends() {
        let e = env(10, 1);
        let (mut s, _) = e.reset();
        // Move everyone one cell inward; the top agents go Down, etc.
        let acts: Vec<Action> = s
            .agents
            .iter()
            .map(|a| match a.pos.map(|p| e.config().layout.arm_of(p)) {
                Some(Some(crate::gridworld::Arm::North)) => Action::Down,
                Some(Some(crate::gridworld::Arm::South)) => Action::Up,
                Some(Some(crate::gridworld::Arm::West)) => Action::Right,
                Some(Some(crate::gridworld::Arm::East)) => Action::Left,
                _ => Action::Stay,
            })
            .collect();
        let out = e.step(&mut s, &acts).unwrap();
        assert_eq!(out.collisions, 0);
        assert_eq!(s.agents.iter().filter(|a| a.is_active()).count(), 10);
        let cells: BTreeSet<_> = active_cells(&s).into_iter().collect();
        assert_eq!(cells.len(), 10);
        // Waiting in the queue costs the step penalty.
        assert_eq!(out.rewards[8], -0.01);
        assert_eq!(out.rewards[9], -0.01);
    }

    #[test]
    fn same_cell_collision_penalises_both() {
        let e = env(2, 0);
        let (mut s, _) = e.reset();
        s.agents[0].pos = Some(Position::new(6, 2));
        s.agents[1].pos = Some(Position::new(6, 4));
        s.agents[0].dest = Some(Position::new(0, 6));
        s.agents[1].dest = Some(Position::new(0, 6));
        let out = e.step(&mut s, &[Action::Right, Action::Left]).unwrap();
        assert!((out.rewards[0] - (-10.01)).abs() < 1e-12);
        assert!((out.rewards[1] - (-10.01)).abs() < 1e-12);
        assert_eq!(s.agents[0].pos, Some(Position::new(6, 2)));
        assert_eq!(s.agents[1].pos, Some(Position::new(6, 4)));
        assert_eq!(out.collisions, 2);
        assert!(!out.done);
    }

    #[test]
    fn quiet_step_costs_step_penalty() {
        let e = env(4, 2);
        let (mut s, _) = e.reset();
        let out = e.step(&mut s, &[Action::Stay; 4]).unwrap();
        assert!(out.rewards.iter().all(|&r| (r - (-0.01)).abs() < 1e-12));
        assert!(out.dones.iter().all(|d| !d));
    }

    #[test]
    fn arrived_agent_is_inert() {
        let e = env(1, 0);
        let (mut s, _) = e.reset();
        s.agents[0].pos = Some(Position::new(7, 12));
        s.agents[0].dest = Some(Position::new(7, 13));
        let out = e.step(&mut s, &[Action::Right]).unwrap();
        assert!((out.rewards[0] - (-0.01)).abs() < 1e-12);
        assert!(out.done && out.dones[0]);
        assert_eq!(s.agents[0].status, AgentStatus::Arrived);

        let e = env(2, 0);
        let (mut s, _) = e.reset();
        s.agents[0].pos = Some(Position::new(7, 12));
        s.agents[0].dest = Some(Position::new(7, 13));
        s.agents[1].pos = Some(Position::new(0, 6));
        s.agents[1].dest = Some(Position::new(13, 6));
        e.step(&mut s, &[Action::Right, Action::Stay]).unwrap();
        for _ in 0..5 {
            let out = e.step(&mut s, &[Action::Left, Action::Stay]).unwrap();
            assert_eq!(out.rewards[0], 0.0);
            assert!(out.obs[0].is_none());
        }
    }

    #[test]
    fn wrong_action_count_is_rejected() {
        let e = env(4, 0);
        let (mut s, _) = e.reset();
        assert!(matches!(e.step(&mut s, &[Action::Stay; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn capacity_is_enforced() {
        let cfg = MultiEnvConfig::new(17, build_junction_layout(6, 2).unwrap());
        assert!(matches!(MultiEnv::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn collision_detection_rules() {
        let c = Position::new(1, 1);
        let p = Position::new(0, 0);
        let q = Position::new(0, 1);
        assert_eq!(detect_collisions(&[p, q], &[c, c]), BTreeSet::from([0, 1]));
        assert_eq!(detect_collisions(&[p, q], &[q, p]), BTreeSet::from([0, 1]));
        assert!(detect_collisions(&[p, q], &[p, c]).is_empty());
    }

    #[test]
    fn random_play_invariants() {
        let e = env(10, 5);
        let (mut s, _) = e.reset();
        let mut rng = seeded(1, Stream::Exploration);
        let mut episodes = 0;
        let mut returns = vec![0.0; 10];
        let mut steps_in_episode = 0;
        while episodes < 20 {
            let cells = active_cells(&s);
            let unique: BTreeSet<_> = cells.iter().collect();
            assert_eq!(unique.len(), cells.len());
            let acts: Vec<Action> = (0..10).map(|_| Action::ALL[rng.gen_range(0..5)]).collect();
            let out = e.step(&mut s, &acts).unwrap();
            assert!(out.rewards.iter().sum::<f64>() <= 0.0);
            for (r, x) in returns.iter_mut().zip(&out.rewards) {
                *r += x;
            }
            steps_in_episode += 1;
            if out.done {
                assert!(steps_in_episode <= 60);
                let floor = (-10.0 - 0.01) * 60.0;
                assert!(returns.iter().all(|&r| r >= floor));
                returns.iter_mut().for_each(|r| *r = 0.0);
                steps_in_episode = 0;
                episodes += 1;
                s = e.reset_with(s.rng).0;
            }
        }
    }

    #[test]
    fn collision_free_return_counts_steps() {
        let e = env(1, 4);
        let (mut s, _) = e.reset();
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let out = e.step(&mut s, &[Action::Stay]).unwrap();
            total += out.rewards[0];
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 60);
        assert!((total - (-0.01 * 60.0)).abs() < 1e-9);
    }

    #[test]
    fn encoder_layout() {
        let layout = build_junction_layout(6, 2).unwrap();
        let enc = ObsEncoder::new(&layout, 10);
        assert_eq!(ObsEncoder::BASE_DIM, 39);
        assert_eq!(enc.dim(), 49);
        let obs = observe(&layout, &[], Position::new(0, 6), Some(0.5));
        let v = enc.encode(&obs, 3).unwrap();
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 9 + 1);
        assert_eq!(v[38], 0.5);
        assert_eq!(v[39 + 3], 1.0);
        assert!(enc.encode(&obs, 10).is_err());
    }
}
