//! Environment abstraction and the two concrete tasks: a health-gathering
//! gridworld and an exactly solvable chain MDP used as a correctness oracle.
//!
//! Environments are deterministic given (config, reset seed, action
//! sequence). Each environment keeps the health trace of the current episode
//! so scoring can stay exact under frame skipping.

mod chain;
mod health_grid;

pub use chain::{value_iteration, ChainConfig, ChainMdp};
pub use health_grid::{shaped_reward, HealthGrid, HealthGridConfig};

use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Result;

/// Per-step pickup counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub kits_taken: u32,
    pub poisons_taken: u32,
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    /// Shaped reward for this step.
    pub reward: f64,
    /// Health after the step, in [0, 100].
    pub health_after: f64,
    /// Set when the agent died or the episode hit its step cap.
    pub terminal: bool,
    pub info: StepInfo,
}

/// A fully deterministic episodic task. Every episode terminates on its own
/// (death or step cap); stepping past termination is a contract violation.
pub trait Environment {
    /// Observation vector length; constant across steps.
    fn obs_dim(&self) -> usize;
    /// Number of discrete actions.
    fn num_actions(&self) -> usize;
    /// Episode length used as the scoring denominator.
    fn nominal_episode_len(&self) -> usize;
    /// Starts a new episode; all in-episode randomness derives from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult>;
    /// Health at the start of each step executed so far this episode.
    /// Truncated at death; missing entries count as zero when scoring.
    fn health_trace(&self) -> &[f64];
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn nominal_episode_len(&self) -> usize {
        (**self).nominal_episode_len()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: usize) -> Result<StepResult> {
        (**self).step(action)
    }
    fn health_trace(&self) -> &[f64] {
        (**self).health_trace()
    }
}

/// Mean per-step health over a nominal episode length. Steps after death are
/// worth zero, so a short trace is padded implicitly.
pub fn episode_score(health_trace: &[f64], nominal_len: usize) -> f64 {
    if nominal_len == 0 {
        return 0.0;
    }
    let sum: f64 = health_trace.iter().take(nominal_len).sum();
    sum / nominal_len as f64
}

/// Repeats each chosen action `k` times (or until the episode ends), summing
/// rewards; the observation and health come from the last inner frame.
pub struct FrameSkip<E> {
    inner: E,
    k: usize,
}

impl<E: Environment> FrameSkip<E> {
    /// Panics if `k` is zero.
    pub fn new(inner: E, k: usize) -> Self {
        assert!(k >= 1, "frame skip must be >= 1");
        FrameSkip { inner, k }
    }
}

impl<E: Environment> Environment for FrameSkip<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }
    fn nominal_episode_len(&self) -> usize {
        self.inner.nominal_episode_len()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }
    fn step(&mut self, action: usize) -> Result<StepResult> {
        let mut result = self.inner.step(action)?;
        for _ in 1..self.k {
            if result.terminal {
                break;
            }
            let next = self.inner.step(action)?;
            result = StepResult {
                reward: result.reward + next.reward,
                info: StepInfo {
                    kits_taken: result.info.kits_taken + next.info.kits_taken,
                    poisons_taken: result.info.poisons_taken + next.info.poisons_taken,
                },
                ..next
            };
        }
        Ok(result)
    }
    fn health_trace(&self) -> &[f64] {
        self.inner.health_trace()
    }
}

/// Which task a run trains on, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvKind {
    HealthGrid(HealthGridConfig),
    Chain(ChainConfig),
}

impl Default for EnvKind {
    fn default() -> Self {
        EnvKind::HealthGrid(HealthGridConfig::default())
    }
}

impl EnvKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvKind::HealthGrid(cfg) => cfg.validate(),
            EnvKind::Chain(cfg) => cfg.validate(),
        }
    }

    /// Fresh environment, wrapped in frame skipping when `frame_skip > 1`.
    pub fn build(&self, frame_skip: usize) -> Result<Box<dyn Environment + Send>> {
        self.validate()?;
        let raw: Box<dyn Environment + Send> = match self {
            EnvKind::HealthGrid(cfg) => Box::new(HealthGrid::new(cfg.clone())?),
            EnvKind::Chain(cfg) => Box::new(ChainMdp::new(cfg.clone())?),
        };
        Ok(if frame_skip > 1 {
            Box::new(FrameSkip::new(raw, frame_skip))
        } else {
            raw
        })
    }
}
