//! Flat `section.key = value` experiment files.
//!
//! ```text
//! # comment
//! run.stage = tabular-joint
//! run.seeds = 1..10
//! env.variant = joint
//! learning.alpha = 0.1
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::deeprl::DeepParams;
use crate::env_multi::MultiEnvConfig;
use crate::env_single::{SingleEnvConfig, SingleVariant};
use crate::error::{Error, Result};
use crate::gridworld::build_junction_layout;
use crate::tabular::LearningParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TabularSubtask,
    TabularJoint,
    VdnPretrain,
    IdqlScratch,
    IdqlTransfer,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::TabularSubtask,
        Stage::TabularJoint,
        Stage::VdnPretrain,
        Stage::IdqlScratch,
        Stage::IdqlTransfer,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Stage::TabularSubtask => "tabular-subtask",
            Stage::TabularJoint => "tabular-joint",
            Stage::VdnPretrain => "vdn-pretrain",
            Stage::IdqlScratch => "idql-scratch",
            Stage::IdqlTransfer => "idql-transfer",
        }
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, Stage::TabularSubtask | Stage::TabularJoint)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown stage `{s}`")))
    }
}

/// Environment overrides; `None` keeps the stage default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnvSection {
    pub variant: Option<SingleVariant>,
    pub arm_length: Option<usize>,
    pub arm_width: Option<usize>,
    pub max_steps: Option<usize>,
    pub goal_reward: Option<f64>,
    pub collision_penalty: Option<f64>,
    pub goal_spawn: Option<usize>,
    pub n_agents: Option<usize>,
    pub step_penalty: Option<f64>,
}

/// Learner overrides; `None` keeps the learner default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningSection {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon_start: Option<f64>,
    pub epsilon_end: Option<f64>,
    pub epsilon_decay_episodes: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub target_sync: Option<usize>,
    pub train_every: Option<usize>,
    pub warmup: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub agent_capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub stage: Stage,
    pub run_id: String,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Q-table for tabular-joint, weights for idql-transfer.
    pub init: Option<PathBuf>,
    pub env: EnvSection,
    pub learning: LearningSection,
}

pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

impl ExperimentConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            run_id: stage.tag().to_string(),
            episodes: if stage.is_tabular() { 2000 } else { 1000 },
            seeds: DEFAULT_SEEDS.collect(),
            output_dir: PathBuf::from("."),
            init: None,
            env: EnvSection::default(),
            learning: LearningSection::default(),
        }
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_inner(path, None)
    }

    /// Like [`load`](Self::load) but runs `stage` whatever `run.stage` says;
    /// the key may then be omitted.
    pub fn load_as(path: &Path, stage: Stage) -> Result<Self> {
        Self::load_inner(path, Some(stage))
    }

    fn load_inner(path: &Path, stage: Option<Stage>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::parse_inner(&text, &path.display().to_string(), stage)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(init) = cfg.init.as_mut().filter(|p| p.is_relative()) {
            *init = base.join(&*init);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        Self::parse_inner(text, source_name, None)
    }

    fn parse_inner(text: &str, source_name: &str, forced: Option<Stage>) -> Result<Self> {
        let mut stage = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, n, "expected `section.key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(Error::parse(source_name, n, format!("duplicate key `{key}`")));
            }
            if key == "run.stage" {
                stage = Some(value.parse::<Stage>().map_err(|e| Error::parse(source_name, n, e.to_string()))?);
            }
            entries.push((key, value, n));
        }
        let stage = forced
            .or(stage)
            .ok_or_else(|| Error::parse(source_name, 1, "missing `run.stage`"))?;
        let mut cfg = Self::new(stage);
        let mut seeds_set = false;
        let mut env_seed = None;
        for (key, value, n) in entries {
            let err = |msg: String| Error::parse(source_name, n, msg);
            let env = &mut cfg.env;
            let l = &mut cfg.learning;
            match key {
                "run.stage" => {}
                "run.id" => cfg.run_id = value.to_string(),
                "run.episodes" => cfg.episodes = num(value, key).map_err(err)?,
                "run.seeds" => {
                    cfg.seeds = parse_seeds(value).map_err(err)?;
                    seeds_set = true;
                }
                "run.output_dir" => cfg.output_dir = PathBuf::from(value),
                "run.init" => cfg.init = Some(PathBuf::from(value)),
                "env.variant" => env.variant = Some(SingleVariant::from_tag(value).map_err(|e| err(e.to_string()))?),
                "env.arm_length" => env.arm_length = Some(num(value, key).map_err(err)?),
                "env.arm_width" => env.arm_width = Some(num(value, key).map_err(err)?),
                "env.max_steps" => env.max_steps = Some(num(value, key).map_err(err)?),
                "env.seed" => env_seed = Some((num::<u64>(value, key).map_err(err)?, n)),
                "env.goal_reward" => env.goal_reward = Some(num(value, key).map_err(err)?),
                "env.collision_penalty" => env.collision_penalty = Some(num(value, key).map_err(err)?),
                "env.goal_spawn" => env.goal_spawn = Some(num(value, key).map_err(err)?),
                "env.n_agents" => env.n_agents = Some(num(value, key).map_err(err)?),
                "env.step_penalty" => env.step_penalty = Some(num(value, key).map_err(err)?),
                "learning.alpha" => l.alpha = Some(num(value, key).map_err(err)?),
                "learning.gamma" => l.gamma = Some(num(value, key).map_err(err)?),
                "learning.epsilon_start" => l.epsilon_start = Some(num(value, key).map_err(err)?),
                "learning.epsilon_end" => l.epsilon_end = Some(num(value, key).map_err(err)?),
                "learning.epsilon_decay_episodes" => l.epsilon_decay_episodes = Some(num(value, key).map_err(err)?),
                "learning.lr" => l.lr = Some(num(value, key).map_err(err)?),
                "learning.batch_size" => l.batch_size = Some(num(value, key).map_err(err)?),
                "learning.buffer_capacity" => l.buffer_capacity = Some(num(value, key).map_err(err)?),
                "learning.target_sync" => l.target_sync = Some(num(value, key).map_err(err)?),
                "learning.train_every" => l.train_every = Some(num(value, key).map_err(err)?),
                "learning.warmup" => l.warmup = Some(num(value, key).map_err(err)?),
                "learning.hidden" => l.hidden = Some(parse_list(value, key).map_err(err)?),
                "learning.agent_capacity" => l.agent_capacity = Some(num(value, key).map_err(err)?),
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if let Some((seed, n)) = env_seed {
            if seeds_set {
                return Err(Error::parse(source_name, n, "`env.seed` conflicts with `run.seeds`"));
            }
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }

    /// Checks wiring without training: seeds, stage/variant pairing, init
    /// files and every derived environment and learner config.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("run.seeds must not be empty"));
        }
        if self.episodes == 0 {
            return Err(Error::config("run.episodes must be >= 1"));
        }
        if self.run_id.is_empty() || self.run_id.contains([',', '"', '\n', '\r', '/', '\\']) {
            return Err(Error::config(format!("run.id {:?} is not a usable name", self.run_id)));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::config("run.seeds contains duplicates"));
        }
        match (self.stage, &self.init) {
            (Stage::IdqlTransfer, None) => {
                return Err(Error::config("idql-transfer needs pretrained weights (run.init or --init)"))
            }
            (Stage::TabularSubtask | Stage::VdnPretrain | Stage::IdqlScratch, Some(_)) => {
                return Err(Error::config(format!("stage {} takes no initialisation", self.stage.tag())))
            }
            (_, Some(path)) if !path.is_file() => {
                return Err(Error::config(format!("init file {} does not exist", path.display())))
            }
            _ => {}
        }
        if self.stage.is_tabular() {
            let cfg = self.single_env(self.seeds[0])?;
            match (self.stage, cfg.variant) {
                (Stage::TabularSubtask, SingleVariant::Joint) => {
                    return Err(Error::config("tabular-subtask needs env.variant = goal or avoid"))
                }
                (Stage::TabularJoint, v) if v != SingleVariant::Joint => {
                    return Err(Error::config("tabular-joint needs env.variant = joint"))
                }
                _ => {}
            }
            cfg.validate()?;
            self.tabular_params()?.validate()
        } else {
            let cfg = self.multi_env(self.seeds[0])?;
            cfg.validate()?;
            if self.agent_capacity(&cfg) < cfg.n_agents {
                return Err(Error::config("learning.agent_capacity is smaller than env.n_agents"));
            }
            self.deep_params()?.validate()
        }
    }

    pub fn single_env(&self, seed: u64) -> Result<SingleEnvConfig> {
        let e = &self.env;
        let variant = e.variant.unwrap_or(match self.stage {
            Stage::TabularSubtask => SingleVariant::GoalOnly,
            _ => SingleVariant::Joint,
        });
        let layout = build_junction_layout(e.arm_length.unwrap_or(3), e.arm_width.unwrap_or(1))?;
        let mut cfg = SingleEnvConfig::new(variant, layout);
        cfg.max_steps = e.max_steps.unwrap_or(cfg.max_steps);
        cfg.goal_reward = e.goal_reward.unwrap_or(cfg.goal_reward);
        cfg.collision_penalty = e.collision_penalty.unwrap_or(cfg.collision_penalty);
        cfg.goal_spawn = e.goal_spawn.unwrap_or(cfg.goal_spawn);
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn multi_env(&self, seed: u64) -> Result<MultiEnvConfig> {
        let e = &self.env;
        let n_default = if self.stage == Stage::VdnPretrain { 4 } else { 10 };
        let layout = build_junction_layout(e.arm_length.unwrap_or(6), e.arm_width.unwrap_or(2))?;
        let mut cfg = MultiEnvConfig::new(e.n_agents.unwrap_or(n_default), layout);
        cfg.max_steps = e.max_steps.unwrap_or(cfg.max_steps);
        cfg.collision_penalty = e.collision_penalty.unwrap_or(cfg.collision_penalty);
        cfg.step_penalty = e.step_penalty.unwrap_or(cfg.step_penalty);
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn agent_capacity(&self, env: &MultiEnvConfig) -> usize {
        self.learning.agent_capacity.unwrap_or(env.n_agents)
    }

    pub fn tabular_params(&self) -> Result<LearningParams> {
        let l = &self.learning;
        let d = LearningParams::for_episodes(self.episodes);
        Ok(LearningParams {
            alpha: l.alpha.unwrap_or(d.alpha),
            gamma: l.gamma.unwrap_or(d.gamma),
            epsilon_start: l.epsilon_start.unwrap_or(d.epsilon_start),
            epsilon_end: l.epsilon_end.unwrap_or(d.epsilon_end),
            epsilon_decay_episodes: l.epsilon_decay_episodes.unwrap_or(d.epsilon_decay_episodes),
        })
    }

    pub fn deep_params(&self) -> Result<DeepParams> {
        let l = &self.learning;
        let d = DeepParams::for_episodes(self.episodes);
        let batch_size = l.batch_size.unwrap_or(d.batch_size);
        Ok(DeepParams {
            gamma: l.gamma.unwrap_or(d.gamma),
            lr: l.lr.unwrap_or(d.lr),
            batch_size,
            buffer_capacity: l.buffer_capacity.unwrap_or(d.buffer_capacity),
            target_sync: l.target_sync.unwrap_or(d.target_sync),
            train_every: l.train_every.unwrap_or(d.train_every),
            warmup: l.warmup.unwrap_or(batch_size),
            hidden: l.hidden.clone().unwrap_or(d.hidden),
            epsilon_start: l.epsilon_start.unwrap_or(d.epsilon_start),
            epsilon_end: l.epsilon_end.unwrap_or(d.epsilon_end),
            epsilon_decay_episodes: l.epsilon_decay_episodes.unwrap_or(d.epsilon_decay_episodes),
        })
    }
}

fn num<T: FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_list(value: &str, key: &str) -> std::result::Result<Vec<usize>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(v.trim(), key)).collect()
}

/// `1,2,5` or an inclusive range `1..10`, or a mix of both.
fn parse_seeds(value: &str) -> std::result::Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (num(a.trim(), "run.seeds")?, num(b.trim(), "run.seeds")?);
                if a > b {
                    return Err(format!("empty seed range `{part}`"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(num(part, "run.seeds")?),
        }
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_sections() {
        let text = "\
# joint run
run.stage = tabular-joint
run.id = merged
run.episodes = 300
run.seeds = 1..3, 7
env.variant = joint
env.max_steps = 40
learning.alpha = 0.2
learning.hidden = 8, 4
";
        let cfg = ExperimentConfig::parse(text, "c.cfg").unwrap();
        assert_eq!(cfg.stage, Stage::TabularJoint);
        assert_eq!(cfg.run_id, "merged");
        assert_eq!(cfg.episodes, 300);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 7]);
        assert_eq!(cfg.env.max_steps, Some(40));
        assert_eq!(cfg.learning.hidden, Some(vec![8, 4]));
        let params = cfg.tabular_params().unwrap();
        assert_eq!(params.alpha, 0.2);
        assert_eq!(params.gamma, 0.95);
        let env = cfg.single_env(7).unwrap();
        assert_eq!((env.max_steps, env.seed, env.layout.height()), (40, 7, 7));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_line() {
        let err = ExperimentConfig::parse("run.stage = vdn-pretrain\nenv.colour = red\n", "c").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ExperimentConfig::parse("run.stage = vdn-pretrain\n\nlearning.lr = fast\n", "c").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("run.stage = nope\n", "c").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(ExperimentConfig::parse("env.max_steps = 3\n", "c").is_err());
        assert!(ExperimentConfig::parse("run.stage = vdn-pretrain\nrun.stage = vdn-pretrain\n", "c").is_err());
        assert!(ExperimentConfig::parse("run.stage = vdn-pretrain\njunk\n", "c").is_err());
    }

    #[test]
    fn env_seed_is_a_single_seed_alias() {
        let cfg = ExperimentConfig::parse("run.stage = tabular-subtask\nenv.seed = 42\n", "c").unwrap();
        assert_eq!(cfg.seeds, vec![42]);
        let err = ExperimentConfig::parse("run.stage = tabular-subtask\nenv.seed = 4\nrun.seeds = 1,2\n", "c");
        assert!(err.is_err());
    }

    #[test]
    fn wiring_errors() {
        let cfg = ExperimentConfig::new(Stage::IdqlTransfer);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::new(Stage::IdqlTransfer);
        cfg.init = Some(PathBuf::from("/definitely/not/here.wts"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::new(Stage::TabularSubtask);
        cfg.env.variant = Some(SingleVariant::Joint);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(Stage::VdnPretrain);
        cfg.learning.agent_capacity = Some(3);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(Stage::TabularJoint);
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        for stage in [Stage::TabularSubtask, Stage::TabularJoint, Stage::VdnPretrain, Stage::IdqlScratch] {
            ExperimentConfig::new(stage).validate().unwrap();
        }
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("1..10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert!(parse_seeds("5..1").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
