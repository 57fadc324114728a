//! Q-learning agent: epsilon-greedy control, TD targets against a
//! periodically synchronized target network, and the single learning update
//! applied by the training loop.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{self, GradientBuffer, Matrix, Network, NetworkSpec, RMSPropState};
use crate::replay::{ReplayBuffer, Transition};
use crate::{Error, Result};

/// Linear exploration-rate anneal, constant after `anneal_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    pub anneal_steps: usize,
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.final_value)
            || !(0.0..=1.0).contains(&self.initial)
            || self.initial < self.final_value
        {
            return Err(Error::InvalidConfig(
                "epsilon schedule needs 1 >= initial >= final >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Exploration rate at a given environment step.
pub fn epsilon_at(schedule: &EpsilonSchedule, env_step: usize) -> f64 {
    if env_step >= schedule.anneal_steps || schedule.anneal_steps == 0 {
        return schedule.final_value;
    }
    let frac = env_step as f64 / schedule.anneal_steps as f64;
    schedule.initial + (schedule.final_value - schedule.initial) * frac
}

/// Loss applied to the TD error of taken actions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    /// Quadratic near zero, linear beyond a unit error.
    Huber,
}

const HUBER_DELTA: f64 = 1.0;

/// One learner: online and target networks plus optimizer state and the
/// sync/discount bookkeeping the TD update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub online: Network,
    pub target: Network,
    pub optimizer: RMSPropState,
    /// Learning updates applied so far; drives target synchronization.
    pub learn_steps_done: u64,
    /// Copy online into target every this many learning updates.
    pub target_sync_period: u64,
    pub discount: f64,
    pub loss: LossKind,
}

impl AgentState {
    /// Fresh agent with target initialized to a copy of the online network.
    pub fn new(
        spec: &NetworkSpec,
        seed: u64,
        target_sync_period: u64,
        discount: f64,
        loss: LossKind,
        rmsprop_smoothing: f64,
        rmsprop_epsilon: f64,
    ) -> Result<AgentState> {
        if target_sync_period == 0 {
            return Err(Error::InvalidConfig(
                "target_sync_period must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidConfig("discount must be in [0, 1]".into()));
        }
        let online = Network::init(spec, seed)?;
        let target = online.clone();
        let optimizer = RMSPropState::new(&online, rmsprop_smoothing, rmsprop_epsilon);
        Ok(AgentState {
            online,
            target,
            optimizer,
            learn_steps_done: 0,
            target_sync_period,
            discount,
            loss,
        })
    }
}

/// Greedy action: argmax of the online Q-values, ties broken by the lowest
/// action index. Consumes no randomness.
pub fn greedy_action(net: &Network, obs: &[f64]) -> Result<usize> {
    let q = net.forward_one(obs)?;
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Epsilon-greedy action selection.
pub fn select_action<R: Rng>(
    agent: &AgentState,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let n = agent.online.spec().output_dim;
    if rng.gen::<f64>() < epsilon {
        Ok(rng.gen_range(0..n))
    } else {
        greedy_action(&agent.online, obs)
    }
}

/// TD targets `y = r + discount * max_a' Q_target(s', a')`, with the
/// bootstrap term dropped on terminal transitions.
pub fn compute_td_targets(
    batch: &[&Transition],
    target_net: &Network,
    discount: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    let next_rows: Vec<&[f64]> = batch.iter().map(|t| t.next_obs.as_slice()).collect();
    let next_q = target_net.forward(&Matrix::from_rows(&next_rows))?;
    let mut targets = Vec::with_capacity(batch.len());
    for (i, t) in batch.iter().enumerate() {
        let y = if t.terminal {
            t.reward
        } else {
            let row = next_q.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.reward + discount * max
        };
        if !y.is_finite() {
            return Err(Error::NonFinite {
                context: "td target",
            });
        }
        targets.push(y);
    }
    Ok(targets)
}

/// Mean loss over TD errors plus the matching upstream gradient for the
/// taken actions; all other action outputs get exactly zero gradient.
fn loss_and_upstream(
    preds: &Matrix,
    batch: &[&Transition],
    targets: &[f64],
    kind: LossKind,
) -> (f64, Matrix) {
    let n = batch.len() as f64;
    let mut upstream = Matrix::zeros(preds.rows(), preds.cols());
    let mut loss = 0.0;
    for (i, (t, &y)) in batch.iter().zip(targets).enumerate() {
        let d = preds.get(i, t.action) - y;
        let (l, g) = match kind {
            LossKind::Mse => (d * d, 2.0 * d),
            LossKind::Huber => {
                if d.abs() <= HUBER_DELTA {
                    (0.5 * d * d, d)
                } else {
                    (
                        HUBER_DELTA * (d.abs() - 0.5 * HUBER_DELTA),
                        HUBER_DELTA * d.signum(),
                    )
                }
            }
        };
        loss += l / n;
        upstream.set(i, t.action, g / n);
    }
    (loss, upstream)
}

/// One learning update: sample a minibatch, regress the online network's
/// Q-values for the taken actions toward their TD targets, then synchronize
/// the target network when the update counter hits the sync period.
pub fn learn_step<R: Rng>(
    agent: &mut AgentState,
    buffer: &ReplayBuffer,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch = buffer.sample(rng, batch_size)?;
    let targets = compute_td_targets(&batch, &agent.target, agent.discount)?;
    let obs_rows: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
    let obs = Matrix::from_rows(&obs_rows);
    let preds = agent.online.forward(&obs)?;
    let (loss, upstream) = loss_and_upstream(&preds, &batch, &targets, agent.loss);
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "td loss" });
    }
    let grads: GradientBuffer = agent.online.backward(&obs, &upstream)?;
    nn::rmsprop_step(&mut agent.online, &grads, &mut agent.optimizer, lr)?;
    agent.learn_steps_done += 1;
    if agent
        .learn_steps_done
        .is_multiple_of(agent.target_sync_period)
    {
        sync_target(agent);
    }
    Ok(loss)
}

/// Copies the online parameters into the target network.
pub fn sync_target(agent: &mut AgentState) {
    agent.target = agent.online.clone();
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schedule(anneal: usize) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: 1.0,
            final_value: 0.1,
            anneal_steps: anneal,
        }
    }

    /// Network with zero weights and hand-set output biases, so Q-values are
    /// constant across observations.
    fn bias_net(biases: &[f64]) -> Network {
        let spec = NetworkSpec::with_relu_hidden(1, &[], biases.len());
        let mut net = Network::init(&spec, 0).unwrap();
        let mut params = vec![0.0; biases.len()];
        params.extend_from_slice(biases);
        net.set_flat_params(&params).unwrap();
        net
    }

    fn bias_agent(online: &[f64], target: &[f64], sync: u64) -> AgentState {
        let spec = NetworkSpec::with_relu_hidden(1, &[], online.len());
        let mut agent = AgentState::new(&spec, 0, sync, 1.0, LossKind::Mse, 0.95, 1e-6).unwrap();
        agent.online = bias_net(online);
        agent.target = bias_net(target);
        agent
    }

    fn transition(action: usize, reward: f64, terminal: bool) -> Transition {
        Transition {
            obs: vec![1.0],
            action,
            reward,
            next_obs: vec![1.0],
            terminal,
        }
    }

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let s = schedule(1000);
        assert_eq!(epsilon_at(&s, 0), 1.0);
        assert_eq!(epsilon_at(&s, 1000), 0.1);
        assert_eq!(epsilon_at(&s, 5000), 0.1);
        assert!((epsilon_at(&s, 500) - 0.55).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn epsilon_is_monotone_non_increasing(anneal in 1usize..5000, a in 0usize..10_000, b in 0usize..10_000) {
            let s = schedule(anneal);
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(epsilon_at(&s, lo) >= epsilon_at(&s, hi));
        }
    }

    #[test]
    fn greedy_action_argmax_and_tie_break() {
        let net = bias_net(&[1.0, 3.0, 2.0]);
        assert_eq!(greedy_action(&net, &[0.0]).unwrap(), 1);
        let net = bias_net(&[2.0, 2.0]);
        assert_eq!(greedy_action(&net, &[0.0]).unwrap(), 0);
    }

    #[test]
    fn select_action_greedy_at_zero_epsilon() {
        let agent = bias_agent(&[1.0, 3.0, 2.0], &[0.0; 3], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(select_action(&agent, &[0.0], 0.0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn select_action_uniform_at_full_epsilon() {
        let agent = bias_agent(&[9.0, 0.0, 0.0, 0.0], &[0.0; 4], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_action(&agent, &[0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        for &c in &counts {
            assert!((2200..=2800).contains(&c), "count {c} far from uniform");
        }
    }

    #[test]
    fn td_target_terminal_ignores_next_state() {
        let target = bias_net(&[1e6, 1e6]);
        let t = transition(0, -130.0, true);
        let y = compute_td_targets(&[&t], &target, 1.0).unwrap();
        assert_eq!(y, vec![-130.0]);
    }

    #[test]
    fn td_target_zero_discount_is_reward() {
        let target = bias_net(&[5.0, 7.0]);
        let a = transition(0, 2.5, false);
        let b = transition(1, -1.0, false);
        let y = compute_td_targets(&[&a, &b], &target, 0.0).unwrap();
        assert_eq!(y, vec![2.5, -1.0]);
    }

    #[test]
    fn td_target_bootstraps_max_next_q() {
        // Target net yields max next-Q 10; r = 125 at discount 1 -> 135.
        let target = bias_net(&[10.0, 3.0]);
        let t = transition(1, 125.0, false);
        let y = compute_td_targets(&[&t], &target, 1.0).unwrap();
        assert_eq!(y, vec![135.0]);
    }

    #[test]
    fn learn_step_zero_error_is_fixed_point() {
        // Terminal transition whose reward equals the online prediction:
        // loss 0 and parameters untouched.
        let mut agent = bias_agent(&[0.7, -0.2], &[0.7, -0.2], 100);
        let mut buffer = ReplayBuffer::new(8);
        buffer.push(transition(0, 0.7, true));
        let before = agent.online.flat_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = learn_step(&mut agent, &buffer, 1, 0.1, &mut rng).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(agent.online.flat_params(), before);
        assert_eq!(agent.learn_steps_done, 1);
    }

    #[test]
    fn learn_step_loss_matches_hand_mse() {
        // Online Q(s) = [0.2, -0.3], target Q(s') = [0.1, 0.4], discount 1.
        // Transition (action 1, r 0.5, non-terminal): y = 0.5 + 0.4 = 0.9,
        // d = -0.3 - 0.9 = -1.2, MSE over the singleton batch = 1.44.
        let mut agent = bias_agent(&[0.2, -0.3], &[0.1, 0.4], 100);
        let mut buffer = ReplayBuffer::new(1);
        buffer.push(transition(1, 0.5, false));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = learn_step(&mut agent, &buffer, 4, 1e-3, &mut rng).unwrap();
        assert!((loss - 1.44).abs() < 1e-12);
    }

    #[test]
    fn learn_step_huber_linear_branch() {
        // Same setup as the MSE oracle: |d| = 1.2 > 1, so the Huber loss is
        // 1.2 - 0.5 = 0.7.
        let mut agent = bias_agent(&[0.2, -0.3], &[0.1, 0.4], 100);
        agent.loss = LossKind::Huber;
        let mut buffer = ReplayBuffer::new(1);
        buffer.push(transition(1, 0.5, false));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = learn_step(&mut agent, &buffer, 4, 1e-3, &mut rng).unwrap();
        assert!((loss - 0.7).abs() < 1e-12);
    }

    #[test]
    fn learn_step_moves_only_taken_action_outputs() {
        // Zero-weight network: each output's parameters are its bias and its
        // input weight. Learning on action 1 must leave outputs 0 and 2
        // untouched.
        let mut agent = bias_agent(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 100);
        let mut buffer = ReplayBuffer::new(1);
        buffer.push(transition(1, 1.0, true));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        learn_step(&mut agent, &buffer, 4, 0.1, &mut rng).unwrap();
        let p = agent.online.flat_params();
        // Layout: weights [w0, w1, w2] then biases [b0, b1, b2].
        assert_eq!(p[0], 0.0);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[3], 0.0);
        assert_eq!(p[5], 0.0);
        assert!(p[1] != 0.0 && p[4] != 0.0);
    }

    #[test]
    fn target_constant_between_syncs_then_copied() {
        let spec = NetworkSpec::with_relu_hidden(1, &[4], 2);
        let mut agent = AgentState::new(&spec, 3, 3, 1.0, LossKind::Mse, 0.95, 1e-6).unwrap();
        let snapshot = agent.target.flat_params();
        let mut buffer = ReplayBuffer::new(1);
        buffer.push(transition(0, 5.0, true));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        learn_step(&mut agent, &buffer, 2, 0.01, &mut rng).unwrap();
        learn_step(&mut agent, &buffer, 2, 0.01, &mut rng).unwrap();
        assert_eq!(agent.target.flat_params(), snapshot);
        assert_ne!(agent.online.flat_params(), snapshot);
        learn_step(&mut agent, &buffer, 2, 0.01, &mut rng).unwrap();
        assert_eq!(agent.target.flat_params(), agent.online.flat_params());
    }

    #[test]
    fn sync_target_is_idempotent_snapshot() {
        let spec = NetworkSpec::with_relu_hidden(2, &[3], 2);
        let mut agent = AgentState::new(&spec, 9, 10, 1.0, LossKind::Mse, 0.95, 1e-6).unwrap();
        let mut buffer = ReplayBuffer::new(1);
        buffer.push(Transition {
            obs: vec![0.3, -0.4],
            action: 1,
            reward: 2.0,
            next_obs: vec![0.1, 0.2],
            terminal: true,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        learn_step(&mut agent, &buffer, 2, 0.05, &mut rng).unwrap();
        sync_target(&mut agent);
        let after_first = agent.target.flat_params();
        sync_target(&mut agent);
        assert_eq!(agent.target.flat_params(), after_first);
        // Probe agreement after sync.
        for probe in [[0.0, 0.0], [1.0, -1.0], [0.5, 0.25]] {
            assert_eq!(
                agent.online.forward_one(&probe).unwrap(),
                agent.target.forward_one(&probe).unwrap()
            );
        }
        // Further online updates leave the snapshot alone.
        learn_step(&mut agent, &buffer, 2, 0.05, &mut rng).unwrap();
        assert_eq!(agent.target.flat_params(), after_first);
    }
}
