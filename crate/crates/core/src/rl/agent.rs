//! Epsilon-greedy DQN training and greedy plan emission.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Adam, QNetwork};
use super::{normalization, Action, ActionSet, RlEnv, RlState, SHARE_STEPS};
use crate::error::{Error, Result};
use crate::model::TmcTable;
use crate::signals::{allocate_greens, PhaseLayout, PhasePlan, SignalProgram, Timing};
use crate::trafficgen::MinuteTmc;

/// `epsilon(k) = max(end, start * decay^k)` for episode `k` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            decay: 0.9,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize) -> f64 {
        let e = self.start * self.decay.powi(episode.min(i32::MAX as usize) as i32);
        e.max(self.end).min(self.start)
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.end)
            && self.end <= self.start
            && self.start <= 1.0
            && (0.0..=1.0).contains(&self.decay);
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "bad epsilon schedule {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub epsilon: EpsilonSchedule,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            episodes: 30,
            gamma: 0.9,
            learning_rate: 1e-3,
            replay_capacity: 1000,
            batch_size: 32,
            hidden: 32,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidParameter(
                "at least one training episode is needed".into(),
            ));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.hidden == 0 {
            return Err(Error::InvalidParameter(
                "batch size, hidden width and replay capacity must be positive with capacity >= batch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(
                "gamma must be in [0, 1] and learning rate positive".into(),
            ));
        }
        self.epsilon.validate()
    }
}

/// A trained Q-network plus the volume scale it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnPolicy {
    pub net: QNetwork,
    pub norm: f64,
    pub seed: u64,
    pub episodes: usize,
}

impl DqnPolicy {
    pub fn q_values(&self, state: RlState) -> Vec<f64> {
        self.net.forward(&state.0)
    }

    /// Highest-valued action; ties go to the earliest action.
    pub fn greedy(&self, tmc: &TmcTable) -> Action {
        let actions = ActionSet::new();
        actions.get(argmax(&self.q_values(RlState::from_tmc(tmc, self.norm))))
    }

    /// Text snapshot: a small `key value` header, then one parameter per line.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<snapshot>", e);
        let sizes: Vec<String> = self.net.sizes().iter().map(|s| s.to_string()).collect();
        let params = self.net.flat_parameters();
        writeln!(w, "layers {}", sizes.join(" ")).map_err(io)?;
        writeln!(w, "seed {}", self.seed).map_err(io)?;
        writeln!(w, "episodes {}", self.episodes).map_err(io)?;
        writeln!(w, "norm {}", self.norm).map_err(io)?;
        writeln!(w, "parameters {}", params.len()).map_err(io)?;
        for p in params {
            writeln!(w, "{p}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: R) -> Result<DqnPolicy> {
        let mut lines = BufReader::new(r).lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Malformed(format!("snapshot ends before '{key}'")))?
                .map_err(|e| Error::io("<snapshot>", e))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Malformed(format!("expected '{key}' line, got '{line}'")))
        };
        let bad = |what: &str| Error::Malformed(format!("bad {what} in snapshot"));
        let sizes: Vec<usize> = field("layers")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("layer size")))
            .collect::<Result<_>>()?;
        let seed = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let episodes = field("episodes")?
            .parse()
            .map_err(|_| bad("episode count"))?;
        let norm: f64 = field("norm")?.parse().map_err(|_| bad("norm"))?;
        let count: usize = field("parameters")?
            .parse()
            .map_err(|_| bad("parameter count"))?;
        let mut params = Vec::with_capacity(count);
        for line in lines {
            let line = line.map_err(|e| Error::io("<snapshot>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            params.push(line.trim().parse::<f64>().map_err(|_| bad("parameter"))?);
        }
        if params.len() != count {
            return Err(Error::Malformed(format!(
                "snapshot declares {count} parameters but holds {}",
                params.len()
            )));
        }
        let net = QNetwork::from_flat(&sizes, &params)
            .ok_or_else(|| Error::Malformed("parameter count does not match layer sizes".into()))?;
        Ok(DqnPolicy {
            net,
            norm,
            seed,
            episodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_snapshot(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<DqnPolicy> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        DqnPolicy::read_snapshot(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    /// Mean per-minute reward (negative delay) over the episode.
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub policy: DqnPolicy,
    pub log: Vec<EpisodeLog>,
}

impl Trained {
    /// `episode,epsilon,mean_reward`
    pub fn write_log<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["episode", "epsilon", "mean_reward"])?;
        for e in &self.log {
            wtr.write_record([
                e.episode.to_string(),
                e.epsilon.to_string(),
                e.mean_reward.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

struct Transition {
    state: [f64; 4],
    action: usize,
    reward: f64,
    next: Option<[f64; 4]>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Train a Q-network on the minute stream, one pass over the stream per
/// episode.
///
/// The network learns on the reward rescaled by `usable_green / (norm * 10)`,
/// i.e. `-sum(state_d / tenths_d)`, which keeps targets of order one for any
/// volume level; the log reports the unscaled reward.
pub fn train(
    minute_tmc: &MinuteTmc,
    timing: &Timing,
    seed: u64,
    hp: &Hyperparams,
) -> Result<Trained> {
    hp.validate()?;
    timing.validate()?;
    if minute_tmc.tables.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot train on an empty demand stream".into(),
        ));
    }
    let actions = ActionSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = QNetwork::new(&[4, hp.hidden, hp.hidden, actions.len()], &mut rng);
    let mut opt = Adam::new(net.parameter_count(), hp.learning_rate);
    let mut env = RlEnv::new(minute_tmc, timing);
    let scale = env.usable_green() / (env.norm() * SHARE_STEPS as f64);
    let mut replay: Vec<Transition> = Vec::with_capacity(hp.replay_capacity);
    let mut write_at = 0;
    let mut log = Vec::with_capacity(hp.episodes);

    for episode in 0..hp.episodes {
        let epsilon = hp.epsilon.at(episode);
        let mut state = env.reset();
        let mut total = 0.0;
        let mut steps = 0usize;
        while let Some(s) = state {
            let a = if rng.random::<f64>() < epsilon {
                rng.random_range(0..actions.len())
            } else {
                argmax(&net.forward(&s.0))
            };
            let step = env.step(actions.get(a))?;
            total += step.reward;
            steps += 1;
            let t = Transition {
                state: s.0,
                action: a,
                reward: step.reward * scale,
                next: step.next.map(|n| n.0),
            };
            if replay.len() < hp.replay_capacity {
                replay.push(t);
            } else {
                replay[write_at] = t;
            }
            write_at = (write_at + 1) % hp.replay_capacity;

            if replay.len() >= hp.batch_size {
                let picks: Vec<&Transition> =
                    replay.choose_multiple(&mut rng, hp.batch_size).collect();
                let targets: Vec<f64> = picks
                    .iter()
                    .map(|t| {
                        let future = t.next.map_or(0.0, |n| {
                            net.forward(&n)
                                .into_iter()
                                .fold(f64::NEG_INFINITY, f64::max)
                        });
                        t.reward + hp.gamma * future
                    })
                    .collect();
                let batch: Vec<(&[f64], usize, f64)> = picks
                    .iter()
                    .zip(&targets)
                    .map(|(t, &y)| (&t.state[..], t.action, y))
                    .collect();
                net.train_batch(&batch, &mut opt);
            }
            state = step.next;
        }
        log.push(EpisodeLog {
            episode,
            epsilon,
            mean_reward: total / steps.max(1) as f64,
        });
    }
    log::debug!(
        "trained {} episodes over {} minutes, final mean reward {:.3}",
        hp.episodes,
        minute_tmc.minutes(),
        log.last().map_or(0.0, |e| e.mean_reward)
    );
    Ok(Trained {
        policy: DqnPolicy {
            net,
            norm: normalization(minute_tmc),
            seed,
            episodes: hp.episodes,
        },
        log,
    })
}

/// Split-phasing plan (WB, NB, EB, SB) from the greedy action for `tmc`.
/// The shares of the usable green are rounded to whole seconds with the
/// minimum-green floor, so the plan sums to the cycle exactly.
pub fn rl_plan(policy: &DqnPolicy, tmc: &TmcTable, timing: &Timing) -> Result<PhasePlan> {
    let action = policy.greedy(tmc);
    let greens = allocate_greens(action.greens(timing.usable_green() as f64), timing)?;
    Ok(PhasePlan::new(PhaseLayout::Split, greens, timing.yellow))
}

pub fn rl_program(
    policy: &DqnPolicy,
    minute_tmc: &MinuteTmc,
    timing: &Timing,
) -> Result<SignalProgram> {
    let plans = minute_tmc
        .tables
        .iter()
        .map(|t| rl_plan(policy, t, timing))
        .collect::<Result<Vec<_>>>()?;
    SignalProgram::per_minute(plans)
}
