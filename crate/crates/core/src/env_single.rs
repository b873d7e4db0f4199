//! Single-agent traffic junction: reach a goal, evade a pursuing vehicle,
//! or both.
//!
//! The goal sits on a fixed road end chosen by configuration. The adversary
//! watches the same 3×3 window the agent does: while the agent is inside it
//! the adversary closes in greedily, otherwise it holds its cell. After a
//! collision it is moved back to a random road cell at least
//! [`RELOCATE_DISTANCE`] away.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gridworld::{apply_action, observe, Action, CellCode, GridLayout, LocalObservation, Position};
use crate::rng::{seeded, EnvRng, Stream};

/// Minimum Manhattan distance from the agent for initial adversary placement.
pub const SPAWN_DISTANCE: usize = 2;
/// Minimum Manhattan distance from the agent after a collision.
pub const RELOCATE_DISTANCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SingleVariant {
    GoalOnly,
    AvoidOnly,
    Joint,
}

impl SingleVariant {
    pub fn has_goal(self) -> bool {
        self != SingleVariant::AvoidOnly
    }

    pub fn has_adversary(self) -> bool {
        self != SingleVariant::GoalOnly
    }

    pub fn tag(self) -> &'static str {
        match self {
            SingleVariant::GoalOnly => "goal",
            SingleVariant::AvoidOnly => "avoid",
            SingleVariant::Joint => "joint",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "goal" => Ok(SingleVariant::GoalOnly),
            "avoid" => Ok(SingleVariant::AvoidOnly),
            "joint" => Ok(SingleVariant::Joint),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (expected goal, avoid or joint)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SingleEnvConfig {
    pub variant: SingleVariant,
    pub layout: GridLayout,
    pub max_steps: usize,
    pub goal_reward: f64,
    pub collision_penalty: f64,
    /// Index into the layout's goal candidates.
    pub goal_spawn: usize,
    pub seed: u64,
}

impl SingleEnvConfig {
    pub const DEFAULT_MAX_STEPS: usize = 50;
    pub const DEFAULT_GOAL_REWARD: f64 = 5.0;
    pub const DEFAULT_COLLISION_PENALTY: f64 = -0.2;

    /// Defaults on the given layout; the goal sits on the last road end.
    pub fn new(variant: SingleVariant, layout: GridLayout) -> Self {
        let goal_spawn = layout.goal_candidates().len().saturating_sub(1);
        Self {
            variant,
            layout,
            max_steps: Self::DEFAULT_MAX_STEPS,
            goal_reward: Self::DEFAULT_GOAL_REWARD,
            collision_penalty: Self::DEFAULT_COLLISION_PENALTY,
            goal_spawn,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::config("env.max_steps must be positive"));
        }
        if !(self.goal_reward > 0.0 && self.collision_penalty < 0.0)
            || !self.goal_reward.is_finite()
            || !self.collision_penalty.is_finite()
        {
            return Err(Error::config(format!(
                "need goal_reward > 0 > collision_penalty, got {} and {}",
                self.goal_reward, self.collision_penalty
            )));
        }
        if self.goal_spawn >= self.layout.goal_candidates().len() {
            return Err(Error::config(format!(
                "env.goal_spawn {} out of range (layout has {} road ends)",
                self.goal_spawn,
                self.layout.goal_candidates().len()
            )));
        }
        if self.variant.has_goal() && self.layout.spawn_points().len() < 2 {
            return Err(Error::config("goal variants need at least two road ends"));
        }
        Ok(())
    }

    pub fn goal_position(&self) -> Position {
        self.layout.goal_candidates()[self.goal_spawn]
    }
}

#[derive(Debug, Clone)]
pub struct SingleEnvState {
    pub agent: Position,
    pub adversary: Option<Position>,
    pub goal: Option<Position>,
    pub step: usize,
    pub done: bool,
    pub rng: EnvRng,
}

#[derive(Debug, Clone)]
pub struct SingleStep {
    pub obs: LocalObservation,
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
}

/// Stateless environment description; episodes live in [`SingleEnvState`].
#[derive(Debug, Clone)]
pub struct SingleEnv {
    config: SingleEnvConfig,
}

impl SingleEnv {
    pub fn new(config: SingleEnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SingleEnvConfig {
        &self.config
    }

    /// First episode for the configured seed.
    pub fn reset(&self) -> (SingleEnvState, LocalObservation) {
        self.reset_with(seeded(self.config.seed, Stream::Environment))
    }

    /// Starts an episode drawing from `rng`; pass a finished episode's
    /// generator to continue the same random stream.
    pub fn reset_with(&self, mut rng: EnvRng) -> (SingleEnvState, LocalObservation) {
        let cfg = &self.config;
        let goal = cfg.variant.has_goal().then(|| cfg.goal_position());
        let starts: Vec<Position> = cfg
            .layout
            .spawn_points()
            .iter()
            .copied()
            .filter(|&p| Some(p) != goal)
            .collect();
        let agent = *starts.choose(&mut rng).expect("validated layout has spawn points");
        let adversary = cfg
            .variant
            .has_adversary()
            .then(|| self.sample_far_cell(agent, SPAWN_DISTANCE, &mut rng));
        let state = SingleEnvState {
            agent,
            adversary,
            goal,
            step: 0,
            done: false,
            rng,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn observe(&self, state: &SingleEnvState) -> LocalObservation {
        let mut marks = Vec::with_capacity(2);
        if let Some(g) = state.goal {
            marks.push((g, CellCode::Goal));
        }
        if let Some(a) = state.adversary {
            marks.push((a, CellCode::Vehicle));
        }
        observe(&self.config.layout, &marks, state.agent, None)
    }

    pub fn step(&self, state: &mut SingleEnvState, act: Action) -> Result<SingleStep> {
        if state.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let cfg = &self.config;
        let prev_agent = state.agent;
        state.agent = apply_action(state.agent, act, &cfg.layout)?;

        let mut collided = false;
        if let Some(prev_adv) = state.adversary {
            let next_adv = if prev_adv.chebyshev(state.agent) <= 1 {
                adversary_move(prev_adv, state.agent, &cfg.layout)?
            } else {
                prev_adv
            };
            let swapped = next_adv == prev_agent && prev_adv == state.agent;
            collided = next_adv == state.agent || swapped;
            state.adversary = Some(if collided {
                self.sample_far_cell(state.agent, RELOCATE_DISTANCE, &mut state.rng)
            } else {
                next_adv
            });
        }

        let mut reward = 0.0;
        let reached = state.goal == Some(state.agent);
        if reached {
            reward += cfg.goal_reward;
        }
        if collided {
            reward += cfg.collision_penalty;
        }
        state.step += 1;
        state.done = reached || state.step >= cfg.max_steps;
        Ok(SingleStep {
            obs: self.observe(state),
            reward,
            done: state.done,
            collided,
        })
    }

    fn sample_far_cell(&self, agent: Position, min_dist: usize, rng: &mut EnvRng) -> Position {
        let cells: Vec<Position> = self
            .config
            .layout
            .road_cells()
            .filter(|p| p.manhattan(agent) >= min_dist)
            .collect();
        match cells.choose(rng) {
            Some(&p) => p,
            // Layouts too small for the distance rule: take any other cell.
            None => {
                let others: Vec<_> = self.config.layout.road_cells().filter(|&p| p != agent).collect();
                others[rng.gen_range(0..others.len())]
            }
        }
    }
}

/// Greedy pursuit step: the road neighbor (or the current cell) closest to
/// `agent` in Manhattan distance, ties broken in Up, Down, Left, Right, Stay
/// order.
pub fn adversary_move(adversary: Position, agent: Position, layout: &GridLayout) -> Result<Position> {
    let mut best = adversary;
    let mut best_dist = usize::MAX;
    for act in Action::ALL {
        let cand = apply_action(adversary, act, layout)?;
        let d = cand.manhattan(agent);
        if d < best_dist {
            best = cand;
            best_dist = d;
        }
    }
    Ok(best)
}
