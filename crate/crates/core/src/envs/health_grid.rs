//! Gridworld health-gathering task: the agent's health decays every step, so
//! it must keep collecting health kits while avoiding poison.
//!
//! The arena is an open `grid_size x grid_size` board surrounded by walls.
//! Consumed items respawn at a uniformly random empty cell, keeping item
//! counts constant for the whole episode.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, StepInfo, StepResult};
use crate::{Error, Result};

pub const MAX_HEALTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HealthGridConfig {
    pub grid_size: usize,
    pub n_kits: usize,
    pub n_poisons: usize,
    /// Health restored by a kit.
    pub kit_heal: f64,
    /// Health lost to a poison bottle.
    pub poison_damage: f64,
    /// Health lost every step regardless of movement.
    pub decay_per_step: f64,
    pub episode_len: usize,
    /// Side length of the egocentric observation window; must be odd.
    pub obs_window: usize,
    /// Reward bonus per kit collected.
    pub aux_kit_reward: f64,
    /// Reward penalty per poison consumed (stored signed).
    pub aux_poison_reward: f64,
}

impl Default for HealthGridConfig {
    fn default() -> Self {
        HealthGridConfig {
            grid_size: 9,
            n_kits: 4,
            n_poisons: 3,
            kit_heal: 25.0,
            poison_damage: 30.0,
            decay_per_step: 1.0,
            episode_len: 200,
            obs_window: 5,
            aux_kit_reward: 100.0,
            aux_poison_reward: -100.0,
        }
    }
}

impl HealthGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::InvalidConfig("grid_size must be >= 1".into()));
        }
        // Agent plus all items need distinct cells.
        if self.n_kits + self.n_poisons + 1 > self.grid_size * self.grid_size {
            return Err(Error::InvalidConfig("too many items for the grid".into()));
        }
        if self.obs_window.is_multiple_of(2) || self.obs_window == 0 {
            return Err(Error::InvalidConfig("obs_window must be odd".into()));
        }
        if self.kit_heal <= 0.0 || self.poison_damage <= 0.0 || self.decay_per_step <= 0.0 {
            return Err(Error::InvalidConfig(
                "kit_heal, poison_damage, decay_per_step must be > 0".into(),
            ));
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidConfig("episode_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.obs_window * self.obs_window + 1
    }
}

/// Reward for one step: change in (clamped) health plus the per-item
/// bonuses.
pub fn shaped_reward(health_delta: f64, kits: u32, poisons: u32, cfg: &HealthGridConfig) -> f64 {
    health_delta + cfg.aux_kit_reward * kits as f64 + cfg.aux_poison_reward * poisons as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Empty,
    Kit,
    Poison,
}

/// Actions: 0 = up, 1 = down, 2 = left, 3 = right.
pub struct HealthGrid {
    cfg: HealthGridConfig,
    rng: ChaCha8Rng,
    cells: Vec<Cell>,
    agent: usize,
    health: f64,
    tick: usize,
    terminal: bool,
    trace: Vec<f64>,
}

impl HealthGrid {
    pub fn new(cfg: HealthGridConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid_size * cfg.grid_size;
        Ok(HealthGrid {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(0),
            cells: vec![Cell::Empty; n],
            agent: 0,
            health: MAX_HEALTH,
            tick: 0,
            // A fresh environment starts terminal; reset() begins an episode.
            terminal: true,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &HealthGridConfig {
        &self.cfg
    }

    pub fn health(&self) -> f64 {
        self.health
    }

    pub fn agent_cell(&self) -> usize {
        self.agent
    }

    fn index(&self, x: usize, y: usize) -> usize {
        y * self.cfg.grid_size + x
    }

    /// Uniformly random cell that holds no item and is not under the agent.
    fn respawn_cell(&mut self) -> usize {
        let candidates: Vec<usize> = (0..self.cells.len())
            .filter(|&i| self.cells[i] == Cell::Empty && i != self.agent)
            .collect();
        candidates[self.rng.gen_range(0..candidates.len())]
    }

    fn observation(&self) -> Vec<f64> {
        let size = self.cfg.grid_size as isize;
        let w = self.cfg.obs_window as isize;
        let half = w / 2;
        let ax = (self.agent % self.cfg.grid_size) as isize;
        let ay = (self.agent / self.cfg.grid_size) as isize;
        let mut obs = vec![0.0; self.cfg.obs_dim()];
        let plane = (w * w) as usize;
        // Channel-major planes: walls, kits, poisons; cells row-major within
        // a plane. Anything outside the board reads as wall.
        let mut cell_idx = 0;
        for dy in -half..=half {
            for dx in -half..=half {
                let x = ax + dx;
                let y = ay + dy;
                if x < 0 || y < 0 || x >= size || y >= size {
                    obs[cell_idx] = 1.0;
                } else {
                    match self.cells[self.index(x as usize, y as usize)] {
                        Cell::Empty => {}
                        Cell::Kit => obs[plane + cell_idx] = 1.0,
                        Cell::Poison => obs[2 * plane + cell_idx] = 1.0,
                    }
                }
                cell_idx += 1;
            }
        }
        obs[3 * plane] = self.health / MAX_HEALTH;
        obs
    }

    pub fn kit_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Kit).count()
    }

    pub fn poison_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Poison).count()
    }
}

impl Environment for HealthGrid {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn nominal_episode_len(&self) -> usize {
        self.cfg.episode_len
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.cells.fill(Cell::Empty);
        self.health = MAX_HEALTH;
        self.tick = 0;
        self.terminal = false;
        self.trace.clear();

        // Draw the agent cell and item cells without replacement so all
        // placements are distinct.
        let mut free: Vec<usize> = (0..self.cells.len()).collect();
        self.agent = free.swap_remove(self.rng.gen_range(0..free.len()));
        for _ in 0..self.cfg.n_kits {
            let cell = free.swap_remove(self.rng.gen_range(0..free.len()));
            self.cells[cell] = Cell::Kit;
        }
        for _ in 0..self.cfg.n_poisons {
            let cell = free.swap_remove(self.rng.gen_range(0..free.len()));
            self.cells[cell] = Cell::Poison;
        }
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::EpisodeOver);
        }
        if action >= 4 {
            return Err(Error::InvalidConfig("action out of range".into()));
        }
        self.trace.push(self.health);

        let size = self.cfg.grid_size as isize;
        let (mut x, mut y) = (
            (self.agent % self.cfg.grid_size) as isize,
            (self.agent / self.cfg.grid_size) as isize,
        );
        let (dx, dy) = match action {
            0 => (0, -1),
            1 => (0, 1),
            2 => (-1, 0),
            _ => (1, 0),
        };
        // Walls block movement; the agent stays put.
        if (0..size).contains(&(x + dx)) && (0..size).contains(&(y + dy)) {
            x += dx;
            y += dy;
        }
        self.agent = self.index(x as usize, y as usize);

        let mut info = StepInfo::default();
        let mut effect = -self.cfg.decay_per_step;
        match self.cells[self.agent] {
            Cell::Kit => {
                info.kits_taken = 1;
                effect += self.cfg.kit_heal;
                self.cells[self.agent] = Cell::Empty;
                let cell = self.respawn_cell();
                self.cells[cell] = Cell::Kit;
            }
            Cell::Poison => {
                info.poisons_taken = 1;
                effect -= self.cfg.poison_damage;
                self.cells[self.agent] = Cell::Empty;
                let cell = self.respawn_cell();
                self.cells[cell] = Cell::Poison;
            }
            Cell::Empty => {}
        }

        let before = self.health;
        self.health = (before + effect).clamp(0.0, MAX_HEALTH);
        self.tick += 1;
        let died = self.health == 0.0;
        self.terminal = died || self.tick == self.cfg.episode_len;

        Ok(StepResult {
            obs: self.observation(),
            reward: shaped_reward(
                self.health - before,
                info.kits_taken,
                info.poisons_taken,
                &self.cfg,
            ),
            health_after: self.health,
            terminal: self.terminal,
            info,
        })
    }

    fn health_trace(&self) -> &[f64] {
        &self.trace
    }
}
