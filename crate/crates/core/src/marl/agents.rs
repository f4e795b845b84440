//! Learners: deep Q agents, tabular agents and the factored global agent.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{td_loss_and_gradient, Momentum, QNetwork, ReplayBuffer, Transition};

use super::actions::greedy;
use super::{Hyperparams, WeightInit};

fn build_net<R: Rng>(sizes: &[usize], init: WeightInit, rng: &mut R) -> Result<QNetwork> {
    match init {
        WeightInit::He => QNetwork::new(sizes, rng),
        WeightInit::Zero => QNetwork::zeros(sizes),
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Local deep Q agent with replay and a periodically refreshed target.
#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    optimizer: Momentum,
    replay: ReplayBuffer<Transition>,
    batch_size: usize,
    target_sync: usize,
    gamma: f64,
}

impl DqnAgent {
    pub fn new<R: Rng>(state_len: usize, actions: usize, hyper: &Hyperparams, rng: &mut R) -> Result<Self> {
        let online = build_net(&layer_sizes(state_len, &hyper.hidden, actions), hyper.weight_init, rng)?;
        Ok(Self {
            target: online.snapshot_target(),
            online,
            optimizer: Momentum::new(hyper.step_size, hyper.momentum, hyper.grad_clip),
            replay: ReplayBuffer::new(hyper.replay_capacity),
            batch_size: hyper.batch_size,
            target_sync: hyper.target_sync,
            gamma: hyper.gamma,
        })
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// One minibatch step; `None` while the buffer is short of a batch.
    pub fn train<R: Rng>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let Some(batch) = self.replay.sample(self.batch_size, rng) else {
            return Ok(None);
        };
        let (loss, grad) = td_loss_and_gradient(&self.online, &self.target, &batch, self.gamma)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("local loss {loss} after {} steps", self.online.steps)));
        }
        self.optimizer.step(&mut self.online, &grad)?;
        if self.online.steps.is_multiple_of(self.target_sync as u64) {
            self.target = self.online.snapshot_target();
        }
        Ok(Some(loss))
    }
}

/// Q-values keyed by exact lattice coordinates; unseen entries are zero.
pub type QTable = HashMap<Vec<i64>, Vec<f64>>;

/// `Q(s,a) <- (1 - lambda) Q(s,a) + lambda (r + gamma max Q(s', .))`.
#[allow(clippy::too_many_arguments)]
pub fn tabular_update(
    table: &mut QTable,
    actions: usize,
    state: &[i64],
    action: usize,
    reward: f64,
    next_state: &[i64],
    lambda: f64,
    gamma: f64,
) {
    let best_next = table
        .get(next_state)
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(0.0);
    let row = table.entry(state.to_vec()).or_insert_with(|| vec![0.0; actions]);
    row[action] = (1.0 - lambda) * row[action] + lambda * (reward + gamma * best_next);
}

/// Tabular Q-learning agent.
#[derive(Clone, Debug, Default)]
pub struct TabularAgent {
    pub table: QTable,
    pub actions: usize,
}

impl TabularAgent {
    pub fn new(actions: usize) -> Self {
        Self { table: QTable::new(), actions }
    }

    pub fn q_values(&self, key: &[i64]) -> Vec<f64> {
        self.table.get(key).cloned().unwrap_or_else(|| vec![0.0; self.actions])
    }
}

/// Value-decomposition target: global reward plus the discounted sum of the
/// per-agent maxima at the next state.
pub fn global_target(reward: f64, per_agent_max: &[f64], gamma: f64) -> f64 {
    reward + gamma * per_agent_max.iter().sum::<f64>()
}

/// Experience of the global agent: one action per head.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTransition {
    pub state: Vec<f64>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Shared trunk with one output head per local agent.
#[derive(Clone, Debug)]
pub struct GlobalAgent {
    pub online: QNetwork,
    pub target: QNetwork,
    heads: Vec<Range<usize>>,
    optimizer: Momentum,
    replay: ReplayBuffer<GlobalTransition>,
    batch_size: usize,
    target_sync: usize,
    gamma: f64,
}

impl GlobalAgent {
    pub fn new<R: Rng>(state_len: usize, head_sizes: &[usize], hyper: &Hyperparams, rng: &mut R) -> Result<Self> {
        if head_sizes.is_empty() || head_sizes.contains(&0) {
            return Err(Error::InvalidArgument("global agent needs non-empty heads".into()));
        }
        let mut heads = Vec::with_capacity(head_sizes.len());
        let mut start = 0;
        for &h in head_sizes {
            heads.push(start..start + h);
            start += h;
        }
        let online = build_net(&layer_sizes(state_len, &hyper.hidden, start), hyper.weight_init, rng)?;
        Ok(Self {
            target: online.snapshot_target(),
            online,
            heads,
            optimizer: Momentum::new(hyper.step_size, hyper.momentum, hyper.grad_clip),
            replay: ReplayBuffer::new(hyper.replay_capacity),
            batch_size: hyper.batch_size,
            target_sync: hyper.target_sync,
            gamma: hyper.gamma,
        })
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.len()).collect()
    }

    /// Joint action: the greedy choice of every head.
    pub fn joint_action(&self, state: &[f64]) -> Result<Vec<usize>> {
        let q = self.online.forward(state)?;
        Ok(self.heads.iter().map(|h| greedy(&q[h.clone()])).collect())
    }

    /// Target for one transition from the frozen network's heads.
    pub fn target_value(&self, reward: f64, next_state: &[f64]) -> Result<f64> {
        let q = self.target.forward(next_state)?;
        let maxes: Vec<f64> = self
            .heads
            .iter()
            .map(|h| q[h.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(global_target(reward, &maxes, self.gamma))
    }

    /// Mean squared error between the summed chosen-head values and the
    /// value-decomposition target, with its gradient.
    pub fn loss_and_gradient(&self, batch: &[&GlobalTransition]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let next_q = self.target.forward_batch(&next)?;
        let trace = self.online.forward_batch(&states)?;
        let outs = self.online.output_size();
        let scale = 1.0 / batch.len() as f64;
        let mut d_out = vec![0.0; batch.len() * outs];
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            if t.actions.len() != self.heads.len() {
                return Err(Error::Dimension(format!("{} actions for {} heads", t.actions.len(), self.heads.len())));
            }
            let maxes: Vec<f64> = self
                .heads
                .iter()
                .map(|h| next_q.output(i)[h.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let psi = global_target(t.reward, &maxes, self.gamma);
            let mut total = 0.0;
            for (h, &a) in self.heads.iter().zip(&t.actions) {
                if a >= h.len() {
                    return Err(Error::Dimension(format!("action {a} outside head of {}", h.len())));
                }
                total += trace.output(i)[h.start + a];
            }
            let err = psi - total;
            loss += err * err * scale;
            for (h, &a) in self.heads.iter().zip(&t.actions) {
                d_out[i * outs + h.start + a] = -2.0 * err * scale;
            }
        }
        let mut grad = vec![0.0; self.online.param_count()];
        self.online.backward_batch(&trace, &d_out, &mut grad);
        Ok((loss, grad))
    }

    pub fn remember(&mut self, t: GlobalTransition) {
        self.replay.push(t);
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn train<R: Rng>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let Some(batch) = self.replay.sample(self.batch_size, rng) else {
            return Ok(None);
        };
        let (loss, grad) = self.loss_and_gradient(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("global loss {loss} after {} steps", self.online.steps)));
        }
        self.optimizer.step(&mut self.online, &grad)?;
        if self.online.steps.is_multiple_of(self.target_sync as u64) {
            self.target = self.online.snapshot_target();
        }
        Ok(Some(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tabular_update_examples() {
        let mut t = QTable::new();
        tabular_update(&mut t, 2, &[0], 1, 10.0, &[1], 0.1, 0.0);
        assert_eq!(t[&vec![0]][1], 1.0);

        let mut t = QTable::new();
        t.insert(vec![1], vec![4.0, 2.0]);
        t.insert(vec![0], vec![7.0, 7.0]);
        tabular_update(&mut t, 2, &[0], 0, 1.0, &[1], 1.0, 0.5);
        assert_eq!(t[&vec![0]], vec![3.0, 7.0]);
    }

    #[test]
    fn global_target_examples() {
        assert_eq!(global_target(2.5, &[1.0, 7.0], 0.0), 2.5);
        assert!((global_target(1.0, &[1.0, 2.0], 0.9) - 3.7).abs() < 1e-15);
        assert_eq!(global_target(1.0, &[4.0], 0.5), 3.0);
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams { hidden: vec![6], batch_size: 4, replay_capacity: 16, ..Default::default() }
    }

    #[test]
    fn global_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hyper = small_hyper();
        let mut agent = GlobalAgent::new(3, &[2, 3], &hyper, &mut rng).unwrap();
        agent.target = QNetwork::new(&[3, 6, 5], &mut rng).unwrap();
        let batch: Vec<GlobalTransition> = (0..3)
            .map(|i| GlobalTransition {
                state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                actions: vec![i % 2, i % 3],
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let refs: Vec<&GlobalTransition> = batch.iter().collect();
        let (_, grad) = agent.loss_and_gradient(&refs).unwrap();
        let h = 1e-6;
        for i in 0..agent.online.param_count() {
            let mut plus = agent.clone();
            plus.online.params_mut()[i] += h;
            let mut minus = agent.clone();
            minus.online.params_mut()[i] -= h;
            let fd = (plus.loss_and_gradient(&refs).unwrap().0 - minus.loss_and_gradient(&refs).unwrap().0) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn single_head_reduces_to_dqn_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hyper = small_hyper();
        let agent = GlobalAgent::new(2, &[3], &hyper, &mut rng).unwrap();
        let next = [0.3, -0.2];
        let q = agent.target.forward(&next).unwrap();
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((agent.target_value(1.5, &next).unwrap() - (1.5 + 0.9 * best)).abs() < 1e-12);
    }

    #[test]
    fn zero_networks_choose_index_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hyper = Hyperparams { weight_init: WeightInit::Zero, ..small_hyper() };
        let agent = GlobalAgent::new(4, &[3, 5, 2], &hyper, &mut rng).unwrap();
        assert_eq!(agent.joint_action(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0, 0, 0]);
        assert_eq!(agent.head_sizes(), vec![3, 5, 2]);
    }

    #[test]
    fn dqn_agent_waits_for_a_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = DqnAgent::new(2, 3, &small_hyper(), &mut rng).unwrap();
        let t = Transition { state: vec![0.1, 0.2], action: 1, reward: 1.0, next_state: vec![0.2, 0.1] };
        for _ in 0..3 {
            agent.remember(t.clone());
            assert!(agent.train(&mut rng).unwrap().is_none());
        }
        agent.remember(t);
        assert!(agent.train(&mut rng).unwrap().is_some());
        assert_eq!(agent.online.steps, 1);
    }
}
