//! Training loop scheduling: the exact rational learning-step ratio, the
//! coupled learning-rate grid, single deterministic runs, and the
//! ratio-by-learning-rate sweep.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{epsilon_at, select_action, AgentState, EpsilonSchedule, LossKind};
use crate::envs::{EnvKind, Environment};
use crate::eval::{self, run_eval, EvalCurve, SeedOutcome};
use crate::math::pow2;
use crate::nn::{NetworkSpec, RMSPROP_EPSILON, RMSPROP_SMOOTHING};
use crate::replay::{ReplayBuffer, Transition};
use crate::{splitmix64, Error, Result};

/// Learning updates per environment steps, as an exact rational `u:s`
/// stored coprime. `4:1` runs four updates every step; `1:4` runs one update
/// every fourth step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LearnRatio {
    updates: u32,
    per_steps: u32,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl LearnRatio {
    pub fn new(updates: u32, per_steps: u32) -> Result<Self> {
        if updates == 0 || per_steps == 0 {
            return Err(Error::InvalidConfig(
                "learn ratio needs positive updates and steps".into(),
            ));
        }
        let g = gcd(updates, per_steps);
        Ok(LearnRatio {
            updates: updates / g,
            per_steps: per_steps / g,
        })
    }

    pub fn updates(&self) -> u32 {
        self.updates
    }

    pub fn per_steps(&self) -> u32 {
        self.per_steps
    }

    /// Updates per environment step as a real number.
    pub fn value(&self) -> f64 {
        self.updates as f64 / self.per_steps as f64
    }
}

impl core::fmt::Display for LearnRatio {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}:{}", self.updates, self.per_steps)
    }
}

impl core::str::FromStr for LearnRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (u, p) = s.split_once(':').ok_or_else(|| {
            Error::InvalidConfig(alloc::format!("ratio '{s}' is not of the form u:s"))
        })?;
        let parse = |part: &str| {
            part.trim().parse::<u32>().map_err(|_| {
                Error::InvalidConfig(alloc::format!("ratio '{s}' has a non-integer part"))
            })
        };
        LearnRatio::new(parse(u)?, parse(p)?)
    }
}

impl Serialize for LearnRatio {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LearnRatio {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Integer accumulator for the update schedule: over any `s` consecutive
/// environment steps a `u:s` ratio yields exactly `u` updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatioScheduler {
    ratio: LearnRatio,
    acc: u32,
}

impl RatioScheduler {
    pub fn new(ratio: LearnRatio) -> Self {
        RatioScheduler { ratio, acc: 0 }
    }

    /// Number of learning updates owed for the next environment step.
    pub fn updates_for_step(&mut self) -> u32 {
        let (count, acc) = updates_for_step(self.ratio, self.acc);
        self.acc = acc;
        count
    }
}

/// Pure form of the schedule: add `u` to the accumulator, pay out whole
/// multiples of `s`. The accumulator stays in `[0, s)`.
pub fn updates_for_step(ratio: LearnRatio, accumulator: u32) -> (u32, u32) {
    let acc = accumulator + ratio.updates;
    (acc / ratio.per_steps, acc % ratio.per_steps)
}

/// Center of the learning-rate grid for a 1:1 ratio.
pub const LR_GRID_BASE: f64 = 5e-5;

/// Grid center for a ratio: the base rate scaled inversely with updates per
/// step, so heavier updating gets a proportionally smaller rate.
pub fn lr_center(ratio: LearnRatio) -> f64 {
    LR_GRID_BASE * ratio.per_steps as f64 / ratio.updates as f64
}

/// Grid point `center * 2^k`.
pub fn lr_for_k(ratio: LearnRatio, k: i32) -> f64 {
    lr_center(ratio) * pow2(k)
}

/// The five-point grid `{center * 2^k | k in -2..=2}`, ascending.
pub fn lr_grid(ratio: LearnRatio) -> Vec<f64> {
    (-2..=2).map(|k| lr_for_k(ratio, k)).collect()
}

/// Full specification of one training run. Every field is overridable; the
/// defaults are the reference hyperparameters at desk scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvKind,
    /// Inner env frames per agent decision; 1 leaves the env untouched.
    pub frame_skip: usize,
    pub total_env_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Learning updates between target-network synchronizations.
    pub target_sync: u64,
    pub discount: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
    /// Environment steps to anneal epsilon over; omitted means the first
    /// 10% of total_env_steps.
    pub epsilon_anneal_steps: Option<u64>,
    pub learn_ratio: LearnRatio,
    pub learning_rate: f64,
    /// Transitions collected before the first learning update.
    pub warmup_transitions: usize,
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub hidden_layers: Vec<usize>,
    pub loss: LossKind,
    pub rmsprop_smoothing: f64,
    pub rmsprop_epsilon: f64,
    /// Seed identifiers for repeated runs; sweep helpers expand these.
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvKind::default(),
            frame_skip: 1,
            total_env_steps: 50_000,
            batch_size: 32,
            buffer_capacity: 10_000,
            target_sync: 1_000,
            discount: 1.0,
            epsilon_initial: 1.0,
            epsilon_final: 0.1,
            epsilon_anneal_steps: None,
            learn_ratio: LearnRatio {
                updates: 1,
                per_steps: 1,
            },
            learning_rate: LR_GRID_BASE,
            warmup_transitions: 1_000,
            eval_period: 5_000,
            eval_episodes: 25,
            hidden_layers: alloc::vec![128, 128],
            loss: LossKind::Mse,
            rmsprop_smoothing: RMSPROP_SMOOTHING,
            rmsprop_epsilon: RMSPROP_EPSILON,
            seeds: alloc::vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.epsilon_schedule().validate()?;
        if self.frame_skip == 0 {
            return Err(Error::InvalidConfig("frame_skip must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::InvalidConfig("buffer_capacity must be >= 1".into()));
        }
        if self.warmup_transitions < self.batch_size.min(self.buffer_capacity) {
            return Err(Error::InvalidConfig(
                "warmup_transitions must cover at least one batch".into(),
            ));
        }
        if self.target_sync == 0 {
            return Err(Error::InvalidConfig("target_sync must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig("discount must be in [0, 1]".into()));
        }
        // The finiteness check also rejects NaN, which fails neither
        // ordering comparison.
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if self.eval_period == 0 {
            return Err(Error::InvalidConfig("eval_period must be >= 1".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            initial: self.epsilon_initial,
            final_value: self.epsilon_final,
            anneal_steps: self
                .epsilon_anneal_steps
                .unwrap_or(self.total_env_steps / 10) as usize,
        }
    }

    fn network_spec(&self, env: &dyn Environment) -> NetworkSpec {
        NetworkSpec::with_relu_hidden(env.obs_dim(), &self.hidden_layers, env.num_actions())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub eval_curve: EvalCurve,
    pub final_score: f64,
    pub final_reward: f64,
    pub diverged: bool,
    pub config: TrainConfig,
    /// The run seed every random stream was derived from.
    pub seed: u64,
}

/// A training run driven step by step, so callers can pause, checkpoint, or
/// inspect state mid-run. All randomness is derived from the run seed.
pub struct Trainer {
    config: TrainConfig,
    seed: u64,
    agent: AgentState,
    buffer: ReplayBuffer,
    env: Box<dyn Environment + Send>,
    eval_env: Box<dyn Environment + Send>,
    scheduler: RatioScheduler,
    action_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    episode_rng: ChaCha8Rng,
    eval_base_seed: u64,
    obs: Vec<f64>,
    steps_done: u64,
    curve: EvalCurve,
    diverged: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = config.env.build(config.frame_skip)?;
        let eval_env = config.env.build(config.frame_skip)?;
        let spec = config.network_spec(env.as_ref());
        let agent = AgentState::new(
            &spec,
            splitmix64(seed, 0),
            config.target_sync,
            config.discount,
            config.loss,
            config.rmsprop_smoothing,
            config.rmsprop_epsilon,
        )?;
        let action_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, 1));
        let sample_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, 2));
        let mut episode_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, 3));
        let eval_base_seed = splitmix64(seed, 4);
        let obs = env.reset(episode_rng.gen());
        Ok(Trainer {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            scheduler: RatioScheduler::new(config.learn_ratio),
            config,
            seed,
            agent,
            env,
            eval_env,
            action_rng,
            sample_rng,
            episode_rng,
            eval_base_seed,
            obs,
            steps_done: 0,
            curve: EvalCurve::new(),
            diverged: false,
        })
    }

    pub fn agent(&self) -> &AgentState {
        &self.agent
    }

    /// Replaces the agent wholesale (checkpoint restore). The replacement
    /// must be shape-congruent with the run's network spec.
    pub fn set_agent(&mut self, agent: AgentState) -> Result<()> {
        if agent.online.spec() != self.agent.online.spec() {
            return Err(Error::InvalidConfig(
                "restored agent does not match the run's network spec".into(),
            ));
        }
        self.agent = agent;
        Ok(())
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn updates_done(&self) -> u64 {
        self.agent.learn_steps_done
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn curve(&self) -> &EvalCurve {
        &self.curve
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done >= self.config.total_env_steps || self.diverged
    }

    /// Runs one environment step with its owed learning updates and, on
    /// eval-period boundaries, an evaluation pass. No-op once finished.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let schedule = self.config.epsilon_schedule();
        let epsilon = epsilon_at(&schedule, self.steps_done as usize);
        let action = select_action(&self.agent, &self.obs, epsilon, &mut self.action_rng)?;
        let result = self.env.step(action)?;
        // The warm-up gate reads the buffer before this step's push; updates
        // run after it, so the newest transition is sampleable.
        let warmed = self.buffer.len() >= self.config.warmup_transitions;
        self.buffer.push(Transition {
            obs: core::mem::take(&mut self.obs),
            action,
            reward: result.reward,
            next_obs: result.obs.clone(),
            terminal: result.terminal,
        });
        self.obs = if result.terminal {
            let seed = self.episode_rng.gen();
            self.env.reset(seed)
        } else {
            result.obs
        };
        self.steps_done += 1;

        // The accumulator advances through warm-up; unpaid updates are
        // dropped, not deferred.
        let owed = self.scheduler.updates_for_step();
        if warmed {
            for _ in 0..owed {
                match crate::dqn::learn_step(
                    &mut self.agent,
                    &self.buffer,
                    self.config.batch_size,
                    self.config.learning_rate,
                    &mut self.sample_rng,
                ) {
                    Ok(_) => {}
                    Err(Error::NonFinite { .. }) => {
                        self.diverged = true;
                        return Ok(());
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        if self.steps_done.is_multiple_of(self.config.eval_period) {
            let point = run_eval(
                &self.agent.online,
                self.eval_env.as_mut(),
                self.config.eval_episodes,
                self.eval_base_seed,
                self.steps_done,
            )?;
            self.curve.push(point);
        }
        Ok(())
    }

    pub fn run_to_completion(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Reduces the collected curve to the run's final outcome. A diverged
    /// run keeps its partial curve but scores zero.
    pub fn finish(self) -> RunResult {
        let (final_score, final_reward) = if self.diverged {
            (0.0, 0.0)
        } else {
            let scores: Vec<f64> = self.curve.iter().map(|p| p.mean_score).collect();
            let rewards: Vec<f64> = self.curve.iter().map(|p| p.mean_reward).collect();
            (
                eval::final_score(&eval::ema_smooth(&scores, EMA_EPSILON)),
                eval::final_score(&eval::ema_smooth(&rewards, EMA_EPSILON)),
            )
        };
        RunResult {
            eval_curve: self.curve,
            final_score,
            final_reward,
            diverged: self.diverged,
            config: self.config,
            seed: self.seed,
        }
    }
}

/// Smoothing weight applied to evaluation curves before the final-score
/// reduction.
pub const EMA_EPSILON: f64 = 0.8;

/// One deterministic training run.
pub fn train_run(config: &TrainConfig, seed: u64) -> Result<RunResult> {
    let mut trainer = Trainer::new(config.clone(), seed)?;
    trainer.run_to_completion()?;
    Ok(trainer.finish())
}

/// Coordinates of one run inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunSpec {
    pub ratio: LearnRatio,
    pub k: i32,
    pub seed_id: u64,
}

/// Completed-run record, one per sweep cell and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ratio: LearnRatio,
    pub k: i32,
    pub lr: f64,
    pub seed_id: u64,
    pub run_seed: u64,
    pub final_score: f64,
    pub final_reward: f64,
    pub diverged: bool,
}

/// Seed-averaged scores per (ratio, k) cell plus the per-ratio best grid
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub ratios: Vec<LearnRatio>,
    pub k_values: Vec<i32>,
    /// `scores[ratio_index][k_index]`, mean over seeds.
    pub scores: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    /// Index into `k_values` of each ratio's best cell; score ties resolve
    /// to the smaller learning rate.
    pub best_k_index: Vec<usize>,
}

/// Stable digest mixing sweep coordinates into the base seed, so extending
/// the ratio or seed lists never reshuffles existing runs.
pub fn stable_run_seed(base_seed: u64, ratio: LearnRatio, k: i32, seed_id: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&ratio.updates().to_le_bytes());
    eat(&ratio.per_steps().to_le_bytes());
    eat(&k.to_le_bytes());
    eat(&seed_id.to_le_bytes());
    base_seed.wrapping_add(h)
}

/// Every (ratio, k, seed) combination in deterministic order: ratios outer,
/// then k, then seed.
pub fn plan_sweep(ratios: &[LearnRatio], k_values: &[i32], seeds: &[u64]) -> Vec<RunSpec> {
    let mut plan = Vec::with_capacity(ratios.len() * k_values.len() * seeds.len());
    for &ratio in ratios {
        for &k in k_values {
            for &seed_id in seeds {
                plan.push(RunSpec { ratio, k, seed_id });
            }
        }
    }
    plan
}

/// Concrete config and derived run seed for one sweep cell.
pub fn configure_run(base: &TrainConfig, base_seed: u64, spec: RunSpec) -> (TrainConfig, u64) {
    let mut config = base.clone();
    config.learn_ratio = spec.ratio;
    config.learning_rate = lr_for_k(spec.ratio, spec.k);
    let run_seed = stable_run_seed(base_seed, spec.ratio, spec.k, spec.seed_id);
    (config, run_seed)
}

/// Runs one sweep cell, keeping the full run alongside the summary row so
/// callers can persist evaluation curves. A run that fails with a numeric
/// error is recorded as diverged with score zero rather than aborting the
/// sweep.
pub fn run_sweep_cell(
    base: &TrainConfig,
    base_seed: u64,
    spec: RunSpec,
) -> Result<(SweepRow, RunResult)> {
    let (config, run_seed) = configure_run(base, base_seed, spec);
    let lr = config.learning_rate;
    let result = match train_run(&config, run_seed) {
        Ok(r) => r,
        Err(e @ Error::InvalidConfig(_)) => return Err(e),
        Err(_) => RunResult {
            eval_curve: EvalCurve::new(),
            final_score: 0.0,
            final_reward: 0.0,
            diverged: true,
            config,
            seed: run_seed,
        },
    };
    let row = SweepRow {
        ratio: spec.ratio,
        k: spec.k,
        lr,
        seed_id: spec.seed_id,
        run_seed,
        final_score: result.final_score,
        final_reward: result.final_reward,
        diverged: result.diverged,
    };
    Ok((row, result))
}

/// Folds completed rows into the (ratio, k) grid. Rows may arrive in any
/// order; cells aggregate their seeds in seed order.
pub fn assemble_grid(
    ratios: &[LearnRatio],
    k_values: &[i32],
    rows: &[SweepRow],
) -> Result<SweepGrid> {
    let mut scores = Vec::with_capacity(ratios.len());
    let mut rewards = Vec::with_capacity(ratios.len());
    let mut best = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut score_row = Vec::with_capacity(k_values.len());
        let mut reward_row = Vec::with_capacity(k_values.len());
        for &k in k_values {
            let outcomes: Vec<SeedOutcome> = rows
                .iter()
                .filter(|r| r.ratio == ratio && r.k == k)
                .map(|r| SeedOutcome {
                    seed: r.seed_id,
                    score: r.final_score,
                    reward: r.final_reward,
                })
                .collect();
            if outcomes.is_empty() {
                return Err(Error::InsufficientData { have: 0, need: 1 });
            }
            let agg = eval::aggregate_seeds(&outcomes);
            score_row.push(agg.score);
            reward_row.push(agg.reward);
        }
        // Ascending k means ascending lr, so a strict comparison leaves
        // ties at the smaller learning rate.
        let mut best_idx = 0;
        for (i, &s) in score_row.iter().enumerate() {
            if s > score_row[best_idx] {
                best_idx = i;
            }
        }
        scores.push(score_row);
        rewards.push(reward_row);
        best.push(best_idx);
    }
    Ok(SweepGrid {
        ratios: ratios.to_vec(),
        k_values: k_values.to_vec(),
        scores,
        rewards,
        best_k_index: best,
    })
}

/// Serial sweep over every (ratio, k, seed) cell; the harness parallelizes
/// by running `run_sweep_cell` over `plan_sweep` itself.
pub fn sweep(
    base: &TrainConfig,
    base_seed: u64,
    ratios: &[LearnRatio],
    k_values: &[i32],
) -> Result<(Vec<SweepRow>, SweepGrid)> {
    if ratios.is_empty() || k_values.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one ratio and one k".into(),
        ));
    }
    let mut rows = Vec::new();
    for spec in plan_sweep(ratios, k_values, &base.seeds) {
        rows.push(run_sweep_cell(base, base_seed, spec)?.0);
    }
    let grid = assemble_grid(ratios, k_values, &rows)?;
    Ok((rows, grid))
}
