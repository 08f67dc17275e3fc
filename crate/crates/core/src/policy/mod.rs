//! Goal-conditioned Gaussian policy shared by all skills, and its learner.

mod checkpoint;
mod mlp;
mod reinforce;

pub use checkpoint::{load_policy, read_policy, save_policy, write_policy, CHECKPOINT_HEADER};
pub use mlp::{param_count, Activations, Mlp};
pub use reinforce::{
    discounted_returns, reinforce_update, subtract_time_baseline, whiten, Baseline, Episode, EpisodeBatch, Optimizer, Learner,
    OptimizerState, Transition, UpdateStats,
};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    /// Output-layer bias for the log-std heads at initialization.
    pub init_log_std: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub learning_rate: f64,
    pub discount: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub optimizer: Optimizer,
    pub baseline: Baseline,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            init_log_std: -3.0,
            log_std_min: -5.0,
            log_std_max: 1.0,
            learning_rate: 3e-4,
            discount: 0.99,
            grad_clip: 5.0,
            optimizer: Optimizer::Adam,
            baseline: Baseline::TimeIndexed,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Parameter("hidden layer widths must be >= 1".into()));
        }
        if !(self.log_std_min < self.log_std_max) {
            return Err(Error::Parameter("log_std_min must be below log_std_max".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning_rate must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Parameter("discount must lie in [0, 1]".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Parameter("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian over actions for one (observation, goal) input.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl ActionDistribution {
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((m, ls), a)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - LOG_SQRT_2PI
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Sampled action before the environment clips it.
    pub action: Vec<f64>,
    /// Gaussian log-density of `action`.
    pub log_prob: f64,
}

/// One network `π(a | s, g)` whose input is the observation concatenated
/// with a one-hot goal; it outputs per-dimension mean and log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySkillSet {
    n_skills: usize,
    obs_dim: usize,
    action_dim: usize,
    log_std_bounds: (f64, f64),
    net: Mlp,
}

impl PolicySkillSet {
    pub fn new<R: Rng + ?Sized>(
        n_skills: usize,
        obs_dim: usize,
        action_dim: usize,
        cfg: &PolicyConfig,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim + n_skills];
        sizes.extend(&cfg.hidden);
        sizes.push(2 * action_dim);
        let mut net = Mlp::new(&sizes, rng);
        let bias = net.output_bias_offset();
        for b in &mut net.params_mut()[bias + action_dim..] {
            *b = cfg.init_log_std;
        }
        Self {
            n_skills,
            obs_dim,
            action_dim,
            log_std_bounds: (cfg.log_std_min, cfg.log_std_max),
            net,
        }
    }

    pub fn from_parts(
        n_skills: usize,
        obs_dim: usize,
        action_dim: usize,
        log_std_bounds: (f64, f64),
        net: Mlp,
    ) -> Result<Self> {
        if net.input_dim() != obs_dim + n_skills || net.output_dim() != 2 * action_dim {
            return Err(Error::Shape(format!(
                "network {:?} does not match {n_skills} skills, obs dim {obs_dim}, action dim {action_dim}",
                net.sizes()
            )));
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite policy parameter".into()));
        }
        Ok(Self {
            n_skills,
            obs_dim,
            action_dim,
            log_std_bounds,
            net,
        })
    }

    pub fn n_skills(&self) -> usize {
        self.n_skills
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        self.log_std_bounds
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn input(&self, obs: &[f64], goal: usize) -> Result<Vec<f64>> {
        if goal >= self.n_skills {
            return Err(Error::Index {
                what: "goal",
                index: goal,
                limit: self.n_skills,
            });
        }
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} dims, policy expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.n_skills);
        x.extend_from_slice(obs);
        x.extend((0..self.n_skills).map(|g| if g == goal { 1.0 } else { 0.0 }));
        Ok(x)
    }

    fn split_output(&self, out: &[f64]) -> Result<ActionDistribution> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite policy output".into()));
        }
        let (lo, hi) = self.log_std_bounds;
        Ok(ActionDistribution {
            mean: out[..self.action_dim].to_vec(),
            log_std: out[self.action_dim..].iter().map(|v| v.clamp(lo, hi)).collect(),
        })
    }

    pub fn distribution(&self, obs: &[f64], goal: usize) -> Result<ActionDistribution> {
        let acts = self.net.forward(&self.input(obs, goal)?);
        self.split_output(acts.output())
    }

    /// Sample `a ~ π(· | obs, goal)`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], goal: usize, rng: &mut R) -> Result<ActionSample> {
        let dist = self.distribution(obs, goal)?;
        let action: Vec<f64> = dist
            .mean
            .iter()
            .zip(&dist.log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect();
        let log_prob = dist.log_prob(&action);
        Ok(ActionSample { action, log_prob })
    }

    /// Most likely action (the mean).
    pub fn mean_action(&self, obs: &[f64], goal: usize) -> Result<Vec<f64>> {
        Ok(self.distribution(obs, goal)?.mean)
    }

    pub fn log_prob(&self, obs: &[f64], goal: usize, action: &[f64]) -> Result<f64> {
        Ok(self.distribution(obs, goal)?.log_prob(action))
    }

    /// Adds `scale · ∇_θ log π(action | obs, goal)` to `grads`; returns the log-prob.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        goal: usize,
        action: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        let acts = self.net.forward(&self.input(obs, goal)?);
        let raw = acts.output();
        let dist = self.split_output(raw)?;
        let (lo, hi) = self.log_std_bounds;
        let mut grad_out = vec![0.0; 2 * self.action_dim];
        for d in 0..self.action_dim {
            let inv_var = (-2.0 * dist.log_std[d]).exp();
            let diff = action[d] - dist.mean[d];
            grad_out[d] = scale * diff * inv_var;
            let raw_ls = raw[self.action_dim + d];
            if raw_ls > lo && raw_ls < hi {
                grad_out[self.action_dim + d] = scale * (diff * diff * inv_var - 1.0);
            }
        }
        self.net.backward(&acts, &grad_out, grads);
        Ok(dist.log_prob(action))
    }
}
