//! Tabular Q-learning and sub-task table merging.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::env_single::{SingleEnv, SingleEnvConfig};
use crate::error::{Error, Result};
use crate::gridworld::{state_key, Action};
use crate::harness::EpisodeRecord;
use crate::rng::{seeded, Stream};

pub type ActionValues = [f64; Action::COUNT];

const MAGIC: &str = "SRLQT 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    entries: BTreeMap<String, ActionValues>,
    /// Which task produced the table (not persisted).
    pub variant: Option<String>,
    /// Training episodes behind the table (not persisted).
    pub episodes: usize,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Values for `key`, zeros when unvisited.
    pub fn values(&self, key: &str) -> ActionValues {
        self.entries.get(key).copied().unwrap_or([0.0; Action::COUNT])
    }

    pub fn get(&self, key: &str) -> Option<&ActionValues> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, values: ActionValues) -> Result<()> {
        let key = key.into();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::contract(format!("invalid state key {key:?}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite values for {key}")));
        }
        self.entries.insert(key, values);
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ActionValues)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Greedy action with lowest-index tie-breaking.
    pub fn greedy(&self, key: &str) -> Action {
        Action::ALL[argmax(&self.values(key))]
    }

    /// Writes the canonical text form: header, then entries sorted by key.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "actions {}", Action::COUNT)?;
        for (key, values) in &self.entries {
            write!(out, "{key}")?;
            for v in values {
                write!(out, " {v:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table text is ASCII")
    }

    pub fn read_from(input: impl BufRead, source_name: &str) -> Result<QTable> {
        let mut lines = input.lines().enumerate();
        let mut next_line = |expect: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::parse(source_name, 0, format!("missing {expect}"))),
            }
        };
        let (n, magic) = next_line("header")?;
        if magic.trim_end() != MAGIC {
            return Err(Error::parse(source_name, n, format!("expected `{MAGIC}`, found `{magic}`")));
        }
        let (n, actions) = next_line("action count")?;
        if actions.trim_end() != format!("actions {}", Action::COUNT) {
            return Err(Error::parse(
                source_name,
                n,
                format!("expected `actions {}`, found `{actions}`", Action::COUNT),
            ));
        }
        let mut table = QTable::new();
        for (i, line) in lines {
            let n = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().expect("non-empty line has a field");
            let mut values = [0.0; Action::COUNT];
            for (slot, v) in values.iter_mut().enumerate() {
                let field = fields
                    .next()
                    .ok_or_else(|| Error::parse(source_name, n, format!("missing value {slot}")))?;
                *v = field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(source_name, n, format!("bad value `{field}`")))?;
            }
            if fields.next().is_some() {
                return Err(Error::parse(source_name, n, "too many values"));
            }
            if table.entries.insert(key.to_string(), values).is_some() {
                return Err(Error::parse(source_name, n, format!("duplicate key `{key}`")));
            }
        }
        Ok(table)
    }

    pub fn load(path: &std::path::Path) -> Result<QTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        QTable::read_from(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
}

impl LearningParams {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_GAMMA: f64 = 0.95;

    /// Defaults for a run of `episodes`: epsilon decays 1.0 → 0.05 over the
    /// first 70 % of episodes.
    pub fn for_episodes(episodes: usize) -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            gamma: Self::DEFAULT_GAMMA,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: default_decay_episodes(episodes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        validate_epsilon(self.epsilon_start, self.epsilon_end, self.epsilon_decay_episodes)
    }

    pub fn epsilon_at(&self, episode: usize) -> f64 {
        linear_epsilon(self.epsilon_start, self.epsilon_end, self.epsilon_decay_episodes, episode)
    }
}

pub(crate) fn default_decay_episodes(episodes: usize) -> usize {
    ((episodes as f64 * 0.7).round() as usize).max(1)
}

pub(crate) fn validate_epsilon(start: f64, end: f64, decay: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || end > start {
        return Err(Error::config(format!(
            "need 0 <= epsilon_end <= epsilon_start <= 1, got {start} and {end}"
        )));
    }
    if decay == 0 {
        return Err(Error::config("epsilon_decay_episodes must be positive"));
    }
    Ok(())
}

pub(crate) fn linear_epsilon(start: f64, end: f64, decay: usize, episode: usize) -> f64 {
    let t = (episode as f64 / decay as f64).min(1.0);
    start + (end - start) * t
}

/// One Q-learning backup:
/// `Q(s,a) ← (1-α)·Q(s,a) + α·(r + γ·max_a' Q(s',a'))`, bootstrap dropped
/// when `done`.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    table: &mut QTable,
    s: &str,
    a: Action,
    r: f64,
    s_next: &str,
    done: bool,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::contract(format!("non-finite reward {r}")));
    }
    let bootstrap = if done {
        0.0
    } else {
        table.values(s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let mut values = table.values(s);
    let q = &mut values[a.index()];
    *q = (1.0 - alpha) * *q + alpha * (r + gamma * bootstrap);
    table.insert(s, values)
}

/// Epsilon-greedy choice. Always draws once from `rng` so the stream does
/// not depend on the table contents.
pub fn select_action(table: &QTable, s: &str, epsilon: f64, rng: &mut impl Rng) -> Action {
    let explore = rng.gen::<f64>() < epsilon;
    let random = Action::ALL[rng.gen_range(0..Action::COUNT)];
    if explore {
        random
    } else {
        table.greedy(s)
    }
}

/// Combines sub-task tables into one: keys unique to a table are copied,
/// shared keys hold the element-wise mean. The result does not depend on
/// the input order.
pub fn merge_tables(tables: &[QTable]) -> Result<QTable> {
    if tables.is_empty() {
        return Err(Error::contract("merge_tables needs at least one table"));
    }
    let mut gathered: BTreeMap<&str, Vec<&ActionValues>> = BTreeMap::new();
    for t in tables {
        for (k, v) in &t.entries {
            gathered.entry(k.as_str()).or_default().push(v);
        }
    }
    let mut merged = QTable::new();
    for (key, vectors) in gathered {
        let values = if let [only] = vectors.as_slice() {
            **only
        } else {
            let mut mean = [0.0; Action::COUNT];
            let mut column = Vec::with_capacity(vectors.len());
            for (a, slot) in mean.iter_mut().enumerate() {
                column.clear();
                column.extend(vectors.iter().map(|v| v[a]));
                // Summing in sorted order makes the result permutation-invariant.
                column.sort_by(f64::total_cmp);
                *slot = column.iter().sum::<f64>() / column.len() as f64;
            }
            mean
        };
        merged.entries.insert(key.to_string(), values);
    }
    let mut tags: Vec<&str> = tables.iter().filter_map(|t| t.variant.as_deref()).collect();
    tags.sort_unstable();
    tags.dedup();
    merged.variant = (!tags.is_empty()).then(|| tags.join("+"));
    merged.episodes = tables.iter().map(|t| t.episodes).sum();
    Ok(merged)
}

#[derive(Debug, Clone)]
pub struct TabularRun {
    pub episodes: usize,
    pub init: Option<QTable>,
    /// Act greedily on `init` without updating it.
    pub frozen: bool,
}

/// Epsilon-greedy Q-learning on one single-agent environment. The run is
/// fully determined by `env_config.seed`.
pub fn train_tabular(
    env_config: &SingleEnvConfig,
    params: &LearningParams,
    run: TabularRun,
) -> Result<(QTable, Vec<EpisodeRecord>)> {
    if run.episodes == 0 {
        return Err(Error::config("episodes must be >= 1"));
    }
    params.validate()?;
    let env = SingleEnv::new(env_config.clone())?;
    let mut table = run.init.unwrap_or_default();
    let mut explore = seeded(env_config.seed, Stream::Exploration);
    let mut records = Vec::with_capacity(run.episodes);
    let (mut state, mut obs) = env.reset();
    for episode in 0..run.episodes {
        if episode > 0 {
            (state, obs) = env.reset_with(state.rng);
        }
        let epsilon = if run.frozen { 0.0 } else { params.epsilon_at(episode) };
        let mut key = state_key(&obs);
        let mut record = EpisodeRecord {
            epsilon,
            ..EpisodeRecord::default()
        };
        loop {
            let act = select_action(&table, &key, epsilon, &mut explore);
            let out = env.step(&mut state, act)?;
            let next_key = state_key(&out.obs);
            if !run.frozen {
                q_update(&mut table, &key, act, out.reward, &next_key, out.done, params.alpha, params.gamma)?;
            }
            record.return_total += out.reward;
            record.collisions += out.collided as usize;
            record.steps += 1;
            key = next_key;
            if out.done {
                break;
            }
        }
        records.push(record);
    }
    table.variant = Some(env_config.variant.tag().to_string());
    table.episodes += if run.frozen { 0 } else { run.episodes };
    Ok((table, records))
}

/// Greedy rollouts without learning; returns per-episode records.
pub fn evaluate_table(table: &QTable, env_config: &SingleEnvConfig, episodes: usize) -> Result<Vec<EpisodeRecord>> {
    let params = LearningParams::for_episodes(episodes.max(1));
    let run = TabularRun {
        episodes,
        init: Some(table.clone()),
        frozen: true,
    };
    train_tabular(env_config, &params, run).map(|(_, records)| records)
}
