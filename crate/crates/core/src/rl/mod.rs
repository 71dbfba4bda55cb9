//! DQN green-split allocator over approach-level volumes.
//!
//! The state is the four approach volumes (WB, NB, EB, SB) of one minute,
//! scaled to `[0, 1]`; an action is a green split on a 0.1 grid with every
//! approach getting at least 0.1; the reward is the negative delay
//! `sum(volume / green)` of that minute.

mod agent;
mod network;

pub use agent::{
    rl_plan, rl_program, train, DqnPolicy, EpisodeLog, EpsilonSchedule, Hyperparams, Trained,
};
pub use network::{Adam, QNetwork};

use crate::error::{Error, Result};
use crate::model::TmcTable;
use crate::signals::Timing;
use crate::trafficgen::MinuteTmc;

/// Grid resolution of the action simplex: shares are multiples of 1/10.
pub const SHARE_STEPS: u8 = 10;

/// A green split in tenths, e.g. `[4, 3, 2, 1]` for (0.4, 0.3, 0.2, 0.1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(pub [u8; 4]);

impl Action {
    pub fn shares(&self) -> [f64; 4] {
        self.0.map(|k| k as f64 / SHARE_STEPS as f64)
    }

    /// Real-valued greens `share * usable_green`.
    pub fn greens(&self, usable_green: f64) -> [f64; 4] {
        self.0.map(|k| k as f64 * usable_green / SHARE_STEPS as f64)
    }
}

/// Every composition of 10 into four positive parts, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

impl ActionSet {
    pub fn new() -> ActionSet {
        let n = SHARE_STEPS;
        let mut actions = Vec::new();
        for a in 1..n {
            for b in 1..n - a {
                for c in 1..n - a - b {
                    actions.push(Action([a, b, c, n - a - b - c]));
                }
            }
        }
        ActionSet { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, i: usize) -> Action {
        self.actions[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        self.actions.iter().copied()
    }
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet::new()
    }
}

/// Total delay `sum(volume_d / green_d)`.
pub fn delay(volumes: [f64; 4], greens: [f64; 4]) -> Result<f64> {
    if let Some(d) = greens.iter().position(|g| !(*g > 0.0)) {
        return Err(Error::ZeroGreen(d));
    }
    Ok(volumes.iter().zip(greens).map(|(v, g)| v / g).sum())
}

/// Normalized approach volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlState(pub [f64; 4]);

impl RlState {
    pub fn from_tmc(tmc: &TmcTable, norm: f64) -> RlState {
        RlState(
            tmc.direction_volumes()
                .map(|v| (v as f64 / norm).clamp(0.0, 1.0)),
        )
    }
}

/// Largest single-minute approach volume, or 1 when there is no traffic.
pub fn normalization(minute_tmc: &MinuteTmc) -> f64 {
    let max = minute_tmc
        .tables
        .iter()
        .flat_map(|t| t.direction_volumes())
        .max()
        .unwrap_or(0);
    if max == 0 {
        1.0
    } else {
        max as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    /// `None` once the stream is exhausted.
    pub next: Option<RlState>,
}

/// Replays a per-minute TMC stream as an episodic environment.
#[derive(Debug, Clone)]
pub struct RlEnv<'a> {
    tables: &'a [TmcTable],
    norm: f64,
    usable_green: f64,
    cursor: usize,
}

impl<'a> RlEnv<'a> {
    pub fn new(minute_tmc: &'a MinuteTmc, timing: &Timing) -> RlEnv<'a> {
        RlEnv {
            tables: &minute_tmc.tables,
            norm: normalization(minute_tmc),
            usable_green: timing.usable_green() as f64,
            cursor: 0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn usable_green(&self) -> f64 {
        self.usable_green
    }

    /// Rewind to the first minute; `None` for an empty stream.
    pub fn reset(&mut self) -> Option<RlState> {
        self.cursor = 0;
        self.tables.first().map(|t| RlState::from_tmc(t, self.norm))
    }

    /// Apply `action` to the current minute and advance.
    pub fn step(&mut self, action: Action) -> Result<Step> {
        let tmc = self.tables.get(self.cursor).ok_or(Error::EpisodeOver)?;
        let volumes = tmc.direction_volumes().map(|v| v as f64);
        let reward = -delay(volumes, action.greens(self.usable_green))?;
        self.cursor += 1;
        Ok(Step {
            reward,
            next: self
                .tables
                .get(self.cursor)
                .map(|t| RlState::from_tmc(t, self.norm)),
        })
    }
}
