//! Deterministic chain MDP used as a correctness oracle: walk right along a
//! line of states to collect a single terminal reward. Small enough that
//! optimal Q-values come from value iteration exactly.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Environment, StepInfo, StepResult};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// States 0..n_states-1; the rightmost state is terminal.
    pub n_states: usize,
    /// Reward for entering the rightmost state.
    pub goal_reward: f64,
    /// Episode ends after this many steps even without reaching the goal.
    pub step_cap: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_states: 5,
            goal_reward: 1.0,
            step_cap: 50,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::InvalidConfig("chain needs >= 2 states".into()));
        }
        if self.step_cap == 0 {
            return Err(Error::InvalidConfig("step_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Actions: 0 = left (clamped at the leftmost state), 1 = right. Episodes
/// always start at the leftmost state; the reset seed is unused because the
/// dynamics are deterministic.
pub struct ChainMdp {
    cfg: ChainConfig,
    state: usize,
    tick: usize,
    terminal: bool,
}

impl ChainMdp {
    pub fn new(cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ChainMdp {
            cfg,
            state: 0,
            tick: 0,
            terminal: true,
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut obs = vec![0.0; self.cfg.n_states];
        obs[state] = 1.0;
        obs
    }
}

impl Environment for ChainMdp {
    fn obs_dim(&self) -> usize {
        self.cfg.n_states
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn nominal_episode_len(&self) -> usize {
        self.cfg.step_cap
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = 0;
        self.tick = 0;
        self.terminal = false;
        self.one_hot(0)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::EpisodeOver);
        }
        if action >= 2 {
            return Err(Error::InvalidConfig("action out of range".into()));
        }
        if action == 0 {
            self.state = self.state.saturating_sub(1);
        } else {
            self.state += 1;
        }
        self.tick += 1;
        let reached_goal = self.state == self.cfg.n_states - 1;
        let reward = if reached_goal {
            self.cfg.goal_reward
        } else {
            0.0
        };
        self.terminal = reached_goal || self.tick == self.cfg.step_cap;
        Ok(StepResult {
            obs: self.one_hot(self.state),
            reward,
            health_after: 0.0,
            terminal: self.terminal,
            info: StepInfo::default(),
        })
    }

    /// The chain has no health signal; episodes score zero by definition.
    fn health_trace(&self) -> &[f64] {
        &[]
    }
}

/// Optimal Q-table by value iteration over the episodic (uncapped) chain.
/// Row `s` holds `[Q*(s, left), Q*(s, right)]`; the terminal row is zero.
pub fn value_iteration(cfg: &ChainConfig, discount: f64, tolerance: f64) -> Vec<[f64; 2]> {
    let n = cfg.n_states;
    let goal = n - 1;
    let mut q = vec![[0.0f64; 2]; n];
    loop {
        let mut max_delta = 0.0f64;
        for s in 0..goal {
            for a in 0..2 {
                let next = if a == 0 { s.saturating_sub(1) } else { s + 1 };
                let reward = if next == goal { cfg.goal_reward } else { 0.0 };
                let next_value = if next == goal {
                    0.0
                } else {
                    q[next][0].max(q[next][1])
                };
                let updated = reward + discount * next_value;
                let delta = (updated - q[s][a]).abs();
                if delta > max_delta {
                    max_delta = delta;
                }
                q[s][a] = updated;
            }
        }
        if max_delta <= tolerance {
            return q;
        }
    }
}
