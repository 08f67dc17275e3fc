use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicySkillSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub goal: usize,
    /// Pre-clip sampled action.
    pub action: Vec<f64>,
    pub reward: f64,
    pub log_prob: f64,
}

/// Consecutive transitions of one scene; returns do not cross episode borders.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }
}

pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *o = acc;
    }
    out
}

/// In-place `(x - mean) / (std + 1e-8)` with the population std.
pub fn whiten(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = var.sqrt() + 1e-8;
    values.iter_mut().for_each(|v| *v = (*v - mean) / scale);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient ascent with a fixed step.
    #[default]
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

/// What is subtracted from the discounted returns before whitening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Whitening only.
    #[default]
    None,
    /// Mean return at the same time index across the batch's episodes.
    TimeIndexed,
}

/// Returns minus the per-time-index mean over all episodes long enough to have that index.
pub fn subtract_time_baseline(returns: &mut [Vec<f64>]) {
    let longest = returns.iter().map(Vec::len).max().unwrap_or(0);
    for t in 0..longest {
        let (sum, count) = returns
            .iter()
            .filter_map(|g| g.get(t))
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        let mean = sum / count as f64;
        for g in returns.iter_mut() {
            if let Some(v) = g.get_mut(t) {
                *v -= mean;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub transitions: usize,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Optimizer step rule plus its running moments.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(optimizer: Optimizer, learning_rate: f64, n_params: usize) -> Self {
        let moments = if optimizer == Optimizer::Adam { n_params } else { 0 };
        Self {
            optimizer,
            learning_rate,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            steps: 0,
        }
    }

    /// Ascent step on `params` along `grads`.
    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p += self.learning_rate * g;
                }
            }
            Optimizer::Adam => {
                if self.first_moment.len() != params.len() {
                    self.first_moment = vec![0.0; params.len()];
                    self.second_moment = vec![0.0; params.len()];
                }
                self.steps += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first_moment[i] = ADAM_BETA1 * self.first_moment[i] + (1.0 - ADAM_BETA1) * g;
                    self.second_moment[i] =
                        ADAM_BETA2 * self.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m = self.first_moment[i] / c1;
                    let v = self.second_moment[i] / c2;
                    params[i] += self.learning_rate * m / (v.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// REINFORCE with whitened discounted returns and global-norm gradient clipping.
/// Holds the optimizer state between updates.
#[derive(Debug, Clone)]
pub struct Learner {
    state: OptimizerState,
    discount: f64,
    grad_clip: f64,
    baseline: Baseline,
}

impl Learner {
    pub fn new(cfg: &PolicyConfig, n_params: usize) -> Self {
        Self {
            state: OptimizerState::new(cfg.optimizer, cfg.learning_rate, n_params),
            discount: cfg.discount,
            grad_clip: cfg.grad_clip,
            baseline: cfg.baseline,
        }
    }

    /// Whitened returns in batch order.
    pub fn advantages(&self, batch: &EpisodeBatch) -> Vec<f64> {
        let mut returns: Vec<Vec<f64>> = batch
            .episodes
            .iter()
            .map(|e| {
                let rewards: Vec<f64> = e.transitions.iter().map(|t| t.reward).collect();
                discounted_returns(&rewards, self.discount)
            })
            .collect();
        if self.baseline == Baseline::TimeIndexed {
            subtract_time_baseline(&mut returns);
        }
        let mut adv: Vec<f64> = returns.into_iter().flatten().collect();
        whiten(&mut adv);
        adv
    }

    /// `∇ Σ_t Ã_t log π(a_t | s_t, g_t)` before clipping.
    pub fn gradient(&self, policy: &PolicySkillSet, batch: &EpisodeBatch) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("episode batch"));
        }
        if let Some(t) = batch.transitions().find(|t| !t.reward.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite reward {}", t.reward)));
        }
        let adv = self.advantages(batch);
        let mut grads = vec![0.0; policy.params().len()];
        for (t, a) in batch.transitions().zip(&adv) {
            if *a != 0.0 {
                policy.accumulate_log_prob_grad(&t.obs, t.goal, &t.action, *a, &mut grads)?;
            }
        }
        Ok(grads)
    }

    /// Objective whose gradient [`Learner::gradient`] returns.
    pub fn surrogate(&self, policy: &PolicySkillSet, batch: &EpisodeBatch) -> Result<f64> {
        let adv = self.advantages(batch);
        batch
            .transitions()
            .zip(&adv)
            .map(|(t, a)| Ok(a * policy.log_prob(&t.obs, t.goal, &t.action)?))
            .sum()
    }

    /// One ascent step. On a non-finite gradient the policy is left untouched.
    pub fn update(&mut self, policy: &mut PolicySkillSet, batch: &EpisodeBatch) -> Result<UpdateStats> {
        let mut grads = self.gradient(policy, batch)?;
        let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NumericalFailure("non-finite policy gradient".into()));
        }
        let clipped = grad_norm > self.grad_clip;
        if clipped {
            let s = self.grad_clip / grad_norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        self.apply(policy.params_mut(), &grads);
        Ok(UpdateStats {
            transitions: batch.len(),
            grad_norm,
            clipped,
        })
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        self.state.ascend(params, grads);
    }
}

/// Stateless single update with a fresh learner.
pub fn reinforce_update(
    policy: &PolicySkillSet,
    batch: &EpisodeBatch,
    cfg: &PolicyConfig,
) -> Result<PolicySkillSet> {
    let mut next = policy.clone();
    Learner::new(cfg, policy.params().len()).update(&mut next, batch)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch_from(policy: &PolicySkillSet, rng: &mut ChaCha8Rng, rewards: impl Fn(&[f64]) -> f64) -> EpisodeBatch {
        let episodes = (0..4)
            .map(|e| Episode {
                transitions: (0..6)
                    .map(|t| {
                        let obs = vec![t as f64 * 0.1, 0.5];
                        let goal = e % policy.n_skills();
                        let s = policy.act(&obs, goal, rng).unwrap();
                        Transition {
                            reward: rewards(&s.action),
                            obs,
                            goal,
                            action: s.action,
                            log_prob: s.log_prob,
                        }
                    })
                    .collect(),
            })
            .collect();
        EpisodeBatch { episodes }
    }

    #[test]
    fn returns_and_whitening() {
        let g = discounted_returns(&[1.0, 0.0, 2.0], 0.5);
        assert_eq!(g, vec![1.5, 1.0, 2.0]);
        let mut v = vec![3.0, 3.0, 3.0];
        whiten(&mut v);
        assert_eq!(v, vec![0.0, 0.0, 0.0]);
        let mut v = vec![1.0, 3.0];
        whiten(&mut v);
        assert!((v[0] + 1.0).abs() < 1e-7 && (v[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn time_baseline_centres_each_index() {
        let mut r = vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0], vec![2.0]];
        subtract_time_baseline(&mut r);
        assert_eq!(r, vec![vec![-1.0, -1.0, 0.0], vec![1.0, 1.0], vec![0.0]]);
    }

    #[test]
    fn zero_rewards_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = PolicyConfig::default();
        let policy = PolicySkillSet::new(2, 2, 2, &cfg, &mut rng);
        let batch = batch_from(&policy, &mut rng, |_| 0.0);
        let next = reinforce_update(&policy, &batch, &cfg).unwrap();
        assert_eq!(next.params(), policy.params());
    }

    #[test]
    fn update_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PolicyConfig::default();
        let policy = PolicySkillSet::new(2, 2, 2, &cfg, &mut rng);
        let batch = batch_from(&policy, &mut rng, |a| a[0]);
        let a = reinforce_update(&policy, &batch, &cfg).unwrap();
        let b = reinforce_update(&policy, &batch, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), policy.params());
    }

    #[test]
    fn nan_reward_aborts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = PolicyConfig::default();
        let mut policy = PolicySkillSet::new(2, 2, 2, &cfg, &mut rng);
        let before = policy.clone();
        let mut batch = batch_from(&policy, &mut rng, |a| a[1]);
        batch.episodes[0].transitions[0].reward = f64::NAN;
        let mut learner = Learner::new(&cfg, policy.params().len());
        assert!(matches!(
            learner.update(&mut policy, &batch),
            Err(Error::NumericalFailure(_))
        ));
        assert_eq!(policy, before);
        assert!(learner.update(&mut policy, &EpisodeBatch::default()).is_err());
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = PolicyConfig {
            hidden: vec![5],
            init_log_std: -0.5,
            ..PolicyConfig::default()
        };
        let mut policy = PolicySkillSet::new(2, 2, 2, &cfg, &mut rng);
        for p in policy.params_mut() {
            *p += rng.random_range(-0.2..0.2);
        }
        let batch = batch_from(&policy, &mut rng, |a| a[0] - a[1] * a[1]);
        let learner = Learner::new(&cfg, policy.params().len());
        let grads = learner.gradient(&policy, &batch).unwrap();
        let eps = 1e-5;
        for i in 0..grads.len() {
            let mut plus = policy.clone();
            plus.params_mut()[i] += eps;
            let mut minus = policy.clone();
            minus.params_mut()[i] -= eps;
            let fd = (learner.surrogate(&plus, &batch).unwrap() - learner.surrogate(&minus, &batch).unwrap())
                / (2.0 * eps);
            assert!((fd - grads[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "param {i}: {fd} vs {}", grads[i]);
        }
    }

    /// One-step bandit: reward is the first action component, so the mean
    /// of that component should drift upward.
    #[test]
    fn bandit_mean_drifts_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = PolicyConfig {
            hidden: vec![8],
            init_log_std: -1.0,
            learning_rate: 3e-3,
            ..PolicyConfig::default()
        };
        let mut policy = PolicySkillSet::new(1, 2, 2, &cfg, &mut rng);
        let mut learner = Learner::new(&cfg, policy.params().len());
        let obs = vec![0.5, 0.5];
        for _ in 0..200 {
            let episodes = (0..16)
                .map(|_| {
                    let s = policy.act(&obs, 0, &mut rng).unwrap();
                    Episode {
                        transitions: vec![Transition {
                            obs: obs.clone(),
                            goal: 0,
                            reward: s.action[0],
                            action: s.action,
                            log_prob: s.log_prob,
                        }],
                    }
                })
                .collect();
            learner.update(&mut policy, &EpisodeBatch { episodes }).unwrap();
        }
        assert!(policy.mean_action(&obs, 0).unwrap()[0] > 0.0);
    }
}
