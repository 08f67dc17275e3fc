//! Bounded 2D point world with velocity actions.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Trajectory;
use crate::policy::PolicySkillSet;

pub const OBS_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub bounds_min: [f64; 2],
    pub bounds_max: [f64; 2],
    pub start_state: [f64; 2],
    /// Actions are rescaled to at most this Euclidean norm.
    pub max_action_norm: f64,
    /// Steps per episode (`T`); a rollout has `T + 1` observations.
    pub episode_len: usize,
    /// Std of isotropic Gaussian action noise; the noise vector is truncated at 3 std.
    pub action_noise_std: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            bounds_min: [0.0, 0.0],
            bounds_max: [1.0, 1.0],
            start_state: [0.5, 0.5],
            max_action_norm: 0.05,
            episode_len: 64,
            action_noise_std: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        for d in 0..2 {
            if !(self.bounds_min[d] < self.bounds_max[d]) {
                return Err(Error::Parameter(format!("empty bounds on axis {d}")));
            }
            let s = self.start_state[d];
            if !(self.bounds_min[d] <= s && s <= self.bounds_max[d]) {
                return Err(Error::Parameter("start_state lies outside bounds".into()));
            }
        }
        if self.episode_len == 0 {
            return Err(Error::Parameter("episode_len must be >= 1".into()));
        }
        if !(self.max_action_norm > 0.0 && self.max_action_norm.is_finite()) {
            return Err(Error::Parameter("max_action_norm must be positive".into()));
        }
        if !(self.action_noise_std >= 0.0 && self.action_noise_std.is_finite()) {
            return Err(Error::Parameter("action_noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..2).all(|d| self.bounds_min[d] <= p[d] && p[d] <= self.bounds_max[d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub step_index: usize,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        self.position.to_vec()
    }
}

pub fn reset(cfg: &EnvConfig) -> EnvState {
    EnvState {
        position: cfg.start_state,
        step_index: 0,
    }
}

fn clip_norm(v: [f64; 2], max: f64) -> [f64; 2] {
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if norm > max {
        let s = max / norm;
        [v[0] * s, v[1] * s]
    } else {
        v
    }
}

/// Clip the action, add noise, move, and clamp to the box.
pub fn step<R: Rng + ?Sized>(
    state: &EnvState,
    action: &[f64],
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<EnvState> {
    if state.step_index >= cfg.episode_len {
        return Err(Error::EpisodeOver {
            step: state.step_index,
            len: cfg.episode_len,
        });
    }
    if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidInput(format!("bad action {action:?}")));
    }
    let mut delta = clip_norm([action[0], action[1]], cfg.max_action_norm);
    if cfg.action_noise_std > 0.0 {
        let noise = [
            cfg.action_noise_std * Distribution::<f64>::sample(&StandardNormal, rng),
            cfg.action_noise_std * Distribution::<f64>::sample(&StandardNormal, rng),
        ];
        let noise = clip_norm(noise, 3.0 * cfg.action_noise_std);
        delta[0] += noise[0];
        delta[1] += noise[1];
    }
    let mut position = state.position;
    for d in 0..2 {
        position[d] = (position[d] + delta[d]).clamp(cfg.bounds_min[d], cfg.bounds_max[d]);
    }
    Ok(EnvState {
        position,
        step_index: state.step_index + 1,
    })
}

/// One full episode of skill `goal`: `T + 1` observations including the start.
pub fn rollout<R: Rng + ?Sized>(
    policy: &PolicySkillSet,
    goal: usize,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    if goal >= policy.n_skills() {
        return Err(Error::Index {
            what: "goal",
            index: goal,
            limit: policy.n_skills(),
        });
    }
    let mut state = reset(cfg);
    let mut trajectory = Vec::with_capacity(cfg.episode_len + 1);
    trajectory.push(state.observation());
    for _ in 0..cfg.episode_len {
        let sample = policy.act(&state.observation(), goal, rng)?;
        state = step(&state, &sample.action, cfg, rng)?;
        trajectory.push(state.observation());
    }
    Ok(trajectory)
}
