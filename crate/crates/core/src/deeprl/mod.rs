//! Deep Q-learning pieces: replay, target networks, the squared TD loss,
//! the additive (VDN) joint value with parameter sharing, and independent
//! per-agent learners (IDQL).

mod train;

pub use train::{evaluate_agents, train_idql, train_vdn, DeepParams, MultiRun};

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::neuralnet::{optimizer_step, DenseNet, Gradients};
use crate::rng::EnvRng;
use crate::tabular::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// One team step. Entries are `None` for agents off the grid; an agent that
/// leaves during the step has `Some` obs and `None` next obs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransition {
    pub obs: Vec<Option<Vec<f64>>>,
    pub actions: Vec<Action>,
    pub team_reward: f64,
    pub next_obs: Vec<Option<Vec<f64>>>,
    pub done: bool,
}

/// Fixed-capacity FIFO of experience with its own sampling stream.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    rng: EnvRng,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, rng: EnvRng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&mut self, batch_size: usize) -> Result<Vec<&T>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::contract(format!(
                "cannot sample {batch_size} from a buffer holding {}",
                self.items.len()
            )));
        }
        let n = self.items.len();
        let picks: Vec<usize> = (0..batch_size).map(|_| self.rng.gen_range(0..n)).collect();
        Ok(picks.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Online network θ, target network θ⁻ and the updates since the last sync.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnAgent {
    pub online: DenseNet,
    pub target: DenseNet,
    pub steps_since_sync: usize,
}

impl DqnAgent {
    /// Target starts as a copy of `online`.
    pub fn new(online: DenseNet) -> Self {
        Self {
            target: online.clone(),
            online,
            steps_since_sync: 0,
        }
    }

    pub fn greedy_action(&self, obs: &[f64]) -> Result<Action> {
        let q = self.online.forward(obs)?;
        Ok(Action::ALL[argmax(&q)])
    }

    /// Epsilon-greedy; draws from `rng` exactly twice per call.
    pub fn act(&self, obs: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<Action> {
        let explore = rng.gen::<f64>() < epsilon;
        let random = Action::ALL[rng.gen_range(0..Action::COUNT)];
        if explore {
            Ok(random)
        } else {
            self.greedy_action(obs)
        }
    }
}

/// Copies θ into θ⁻ and resets the update counter.
pub fn sync_target(agent: &mut DqnAgent) {
    agent.target = agent.online.clone();
    agent.steps_since_sync = 0;
}

/// `Q_tot = Σ_i Q_i[a_i]`.
pub fn vdn_qtot(per_agent_q: &[Vec<f64>], actions: &[Action]) -> Result<f64> {
    if per_agent_q.is_empty() || per_agent_q.len() != actions.len() {
        return Err(Error::contract(format!(
            "need one action per agent, got {} value vectors and {} actions",
            per_agent_q.len(),
            actions.len()
        )));
    }
    let mut total = 0.0;
    for (i, (q, a)) in per_agent_q.iter().zip(actions).enumerate() {
        total += q
            .get(a.index())
            .ok_or_else(|| Error::contract(format!("agent {i} has no value for {a:?}")))?;
    }
    Ok(total)
}

/// Largest team for which [`igm_check`] enumerates joint actions.
pub const IGM_MAX_AGENTS: usize = 6;

/// Exhaustively checks that the tuple of per-agent greedy actions maximises
/// the additive joint value.
pub fn igm_check(per_agent_q: &[Vec<f64>]) -> Result<bool> {
    let n = per_agent_q.len();
    if n == 0 {
        return Err(Error::contract("igm_check needs at least one agent"));
    }
    if n > IGM_MAX_AGENTS {
        return Err(Error::contract(format!(
            "igm_check enumerates 5^N joint actions; refusing N = {n} > {IGM_MAX_AGENTS}"
        )));
    }
    if let Some(i) = per_agent_q.iter().position(|q| q.len() != Action::COUNT) {
        return Err(Error::contract(format!("agent {i} does not have {} values", Action::COUNT)));
    }
    let greedy: Vec<Action> = per_agent_q.iter().map(|q| Action::ALL[argmax(q)]).collect();
    let greedy_value = vdn_qtot(per_agent_q, &greedy)?;
    let mut joint = vec![Action::Up; n];
    let mut best = f64::NEG_INFINITY;
    for code in 0..Action::COUNT.pow(n as u32) {
        let mut c = code;
        for slot in joint.iter_mut() {
            *slot = Action::ALL[c % Action::COUNT];
            c /= Action::COUNT;
        }
        best = best.max(vdn_qtot(per_agent_q, &joint)?);
    }
    Ok(greedy_value >= best)
}

fn max_value(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Mean squared TD error over `batch` with targets from θ⁻, and its
/// gradient with respect to θ.
pub fn td_loss(agent: &DqnAgent, batch: &[&Transition], gamma: f64) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::contract("td_loss on an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = agent.online.zeros_like();
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; agent.online.output_dim()];
    for t in batch {
        let trace = agent.online.forward_trace(&t.obs)?;
        let q = trace.output()[t.action.index()];
        let bootstrap = if t.done {
            0.0
        } else {
            max_value(&agent.target.forward(&t.next_obs)?)
        };
        let td = t.reward + gamma * bootstrap - q;
        loss += td * td * scale;
        out_grad.fill(0.0);
        out_grad[t.action.index()] = -2.0 * td * scale;
        agent.online.accumulate_gradients(&trace, &out_grad, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Squared TD error of the additive joint value, gradients summed over the
/// agents sharing `agent.online`.
pub fn vdn_loss(agent: &DqnAgent, batch: &[&JointTransition], gamma: f64) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::contract("vdn_loss on an empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = agent.online.zeros_like();
    let mut loss = 0.0;
    let mut out_grad = vec![0.0; agent.online.output_dim()];
    for t in batch {
        if t.obs.len() != t.actions.len() || t.obs.len() != t.next_obs.len() {
            return Err(Error::contract("joint transition lists differ in length"));
        }
        let mut traces = Vec::with_capacity(t.obs.len());
        let mut q_tot = 0.0;
        for (obs, a) in t.obs.iter().zip(&t.actions) {
            if let Some(obs) = obs {
                let trace = agent.online.forward_trace(obs)?;
                q_tot += trace.output()[a.index()];
                traces.push((trace, *a));
            }
        }
        // The joint max of a sum is the sum of per-agent maxima.
        let mut next_max = 0.0;
        if !t.done {
            for next in t.next_obs.iter().flatten() {
                next_max += max_value(&agent.target.forward(next)?);
            }
        }
        let td = t.team_reward + gamma * next_max - q_tot;
        loss += td * td * scale;
        for (trace, a) in &traces {
            out_grad.fill(0.0);
            out_grad[a.index()] = -2.0 * td * scale;
            agent.online.accumulate_gradients(trace, &out_grad, &mut grads)?;
        }
    }
    Ok((loss, grads))
}

/// One shared-parameter VDN update from a sampled batch.
pub fn vdn_train_step(
    shared: &mut DqnAgent,
    buffer: &mut ReplayBuffer<JointTransition>,
    batch_size: usize,
    gamma: f64,
    lr: f64,
) -> Result<f64> {
    let batch = buffer.sample(batch_size)?;
    let (loss, grads) = vdn_loss(shared, &batch, gamma)?;
    optimizer_step(&mut shared.online, &grads, lr)?;
    shared.steps_since_sync += 1;
    Ok(loss)
}

/// One DQN update for each agent on its own buffer.
pub fn idql_train_step(
    agents: &mut [DqnAgent],
    buffers: &mut [ReplayBuffer<Transition>],
    batch_size: usize,
    gamma: f64,
    lr: f64,
) -> Result<Vec<f64>> {
    if agents.len() != buffers.len() {
        return Err(Error::contract(format!(
            "{} agents but {} buffers",
            agents.len(),
            buffers.len()
        )));
    }
    agents
        .iter_mut()
        .zip(buffers.iter_mut())
        .map(|(agent, buffer)| dqn_train_step(agent, buffer, batch_size, gamma, lr))
        .collect()
}

pub fn dqn_train_step(
    agent: &mut DqnAgent,
    buffer: &mut ReplayBuffer<Transition>,
    batch_size: usize,
    gamma: f64,
    lr: f64,
) -> Result<f64> {
    let batch = buffer.sample(batch_size)?;
    let (loss, grads) = td_loss(agent, &batch, gamma)?;
    optimizer_step(&mut agent.online, &grads, lr)?;
    agent.steps_since_sync += 1;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::init_network;
    use crate::rng::{seeded, seeded_sub, Stream};

    fn random_transition(rng: &mut EnvRng, dim: usize) -> Transition {
        Transition {
            obs: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: Action::ALL[rng.gen_range(0..5)],
            reward: rng.gen_range(-2.0..2.0),
            next_obs: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: rng.gen_bool(0.3),
        }
    }

    #[test]
    fn qtot_sums_chosen_values() {
        let q = vec![vec![0.0, 1.0, 0.0, 0.0, 0.0], vec![2.5, 0.0, 0.0, 0.0, 0.0]];
        assert_eq!(vdn_qtot(&q, &[Action::Down, Action::Up]).unwrap(), 3.5);
        assert_eq!(vdn_qtot(&q[..1], &[Action::Down]).unwrap(), 1.0);
        assert_eq!(vdn_qtot(&q, &[Action::Up, Action::Down]).unwrap(), 0.0);
        assert!(vdn_qtot(&[vec![1.0]], &[Action::Stay]).is_err());
    }

    #[test]
    fn igm_holds_for_additive_values() {
        let mut rng = seeded(17, Stream::Init);
        for n in 1..=3 {
            for _ in 0..100 {
                let q: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
                assert!(igm_check(&q).unwrap());
            }
        }
        assert!(igm_check(&vec![vec![0.0; 5]; 7]).is_err());
    }

    #[test]
    fn replay_buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3, seeded(0, Stream::Replay)).unwrap();
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!(b.sample(4).is_err());
        assert_eq!(b.sample(10).err().map(|e| matches!(e, Error::Contract(_))), Some(true));
    }

    #[test]
    fn replay_sampling_is_reproducible() {
        let fill = |seed| {
            let mut b = ReplayBuffer::new(100, seeded(seed, Stream::Replay)).unwrap();
            for i in 0..50 {
                b.push(i);
            }
            b
        };
        let mut a = fill(4);
        let mut b = fill(4);
        let sa: Vec<i32> = a.sample(20).unwrap().into_iter().copied().collect();
        let sb: Vec<i32> = b.sample(20).unwrap().into_iter().copied().collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn exact_fit_has_zero_loss() {
        let net = init_network(&[4, 6, 5], 2).unwrap();
        let agent = DqnAgent::new(net);
        let mut rng = seeded(5, Stream::Replay);
        let batch: Vec<Transition> = (0..6)
            .map(|_| {
                let mut t = random_transition(&mut rng, 4);
                t.reward = agent.online.forward(&t.obs).unwrap()[t.action.index()];
                t
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let (loss, grads) = td_loss(&agent, &refs, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.norm(), 0.0);
    }

    #[test]
    fn single_terminal_sample_loss() {
        let agent = DqnAgent::new(DenseNet::zeros(&[3, 5]).unwrap());
        let t = Transition {
            obs: vec![1.0, 2.0, 3.0],
            action: Action::Left,
            reward: 1.0,
            next_obs: vec![0.0; 3],
            done: true,
        };
        let (loss, _) = td_loss(&agent, &[&t], 0.99).unwrap();
        assert_eq!(loss, 1.0);
        assert!(td_loss(&agent, &[], 0.99).is_err());
    }

    #[test]
    fn sync_copies_and_detaches() {
        let mut agent = DqnAgent::new(init_network(&[3, 4, 5], 1).unwrap());
        agent.online = init_network(&[3, 4, 5], 2).unwrap();
        agent.steps_since_sync = 9;
        sync_target(&mut agent);
        let x = [0.2, -0.4, 0.9];
        assert_eq!(agent.online.forward(&x).unwrap(), agent.target.forward(&x).unwrap());
        assert_eq!(agent.steps_since_sync, 0);
        let once = agent.clone();
        sync_target(&mut agent);
        assert_eq!(agent, once);

        let mut buffer = ReplayBuffer::new(10, seeded(0, Stream::Replay)).unwrap();
        let mut rng = seeded(3, Stream::Exploration);
        for _ in 0..4 {
            buffer.push(random_transition(&mut rng, 3));
        }
        dqn_train_step(&mut agent, &mut buffer, 4, 0.9, 0.1).unwrap();
        assert_eq!(agent.target, once.target);
        assert_ne!(agent.online, once.online);
    }

    #[test]
    fn single_agent_vdn_matches_dqn() {
        let mut rng = seeded(8, Stream::Exploration);
        let data: Vec<Transition> = (0..40).map(|_| random_transition(&mut rng, 4)).collect();
        let net = init_network(&[4, 8, 5], 6).unwrap();

        let mut solo = DqnAgent::new(net.clone());
        let mut solo_buf = ReplayBuffer::new(64, seeded(1, Stream::Replay)).unwrap();
        let mut team = DqnAgent::new(net);
        let mut team_buf = ReplayBuffer::new(64, seeded(1, Stream::Replay)).unwrap();
        for t in &data {
            solo_buf.push(t.clone());
            team_buf.push(JointTransition {
                obs: vec![Some(t.obs.clone())],
                actions: vec![t.action],
                team_reward: t.reward,
                next_obs: vec![Some(t.next_obs.clone())],
                done: t.done,
            });
        }
        for step in 0..25 {
            let a = dqn_train_step(&mut solo, &mut solo_buf, 8, 0.9, 0.05).unwrap();
            let b = vdn_train_step(&mut team, &mut team_buf, 8, 0.9, 0.05).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            if step % 10 == 9 {
                sync_target(&mut solo);
                sync_target(&mut team);
            }
        }
        assert!(solo.online.params().zip(team.online.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn idql_agents_are_independent() {
        let mut rng = seeded(12, Stream::Exploration);
        let data: Vec<Vec<Transition>> = (0..3)
            .map(|_| (0..20).map(|_| random_transition(&mut rng, 3)).collect())
            .collect();
        let make = |order: [usize; 3]| {
            let agents: Vec<DqnAgent> = order
                .iter()
                .map(|&i| DqnAgent::new(init_network(&[3, 4, 5], i as u64).unwrap()))
                .collect();
            let buffers: Vec<ReplayBuffer<Transition>> = order
                .iter()
                .map(|&i| {
                    let mut b = ReplayBuffer::new(32, seeded_sub(0, Stream::Replay, i as u64)).unwrap();
                    data[i].iter().for_each(|t| b.push(t.clone()));
                    b
                })
                .collect();
            (agents, buffers)
        };
        let (mut a, mut ab) = make([0, 1, 2]);
        let (mut b, mut bb) = make([0, 2, 1]);
        idql_train_step(&mut a, &mut ab, 5, 0.9, 0.1).unwrap();
        idql_train_step(&mut b, &mut bb, 5, 0.9, 0.1).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[2]);

        let (mut one, mut one_buf) = make([1, 1, 1]);
        idql_train_step(&mut one, &mut one_buf, 5, 0.9, 0.1).unwrap();
        assert_eq!(one[0], one[1]);
        assert_eq!(one[1], one[2]);
        assert!(idql_train_step(&mut one[..2], &mut one_buf, 5, 0.9, 0.1).is_err());
    }

    #[test]
    fn insufficient_buffer_is_rejected() {
        let mut agent = DqnAgent::new(DenseNet::zeros(&[2, 5]).unwrap());
        let mut buffer: ReplayBuffer<JointTransition> = ReplayBuffer::new(8, seeded(0, Stream::Replay)).unwrap();
        assert!(matches!(
            vdn_train_step(&mut agent, &mut buffer, 4, 0.9, 0.1),
            Err(Error::Contract(_))
        ));
    }
}
