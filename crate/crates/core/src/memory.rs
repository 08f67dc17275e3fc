//! Per-scene skill memory: the latest trajectory of every skill, overwritten
//! by time index as new episodes run.

use rand::Rng;

use crate::env2d::{rollout, EnvConfig};
use crate::error::{Error, Result};
use crate::kernels::SkillSample;
use crate::policy::PolicySkillSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SkillMemory {
    capacity: usize,
    obs_dim: usize,
    slots: Vec<Vec<Vec<f64>>>,
    filled: Vec<Vec<bool>>,
}

impl SkillMemory {
    /// Empty memory for `n_skills` slots of `capacity` observations (`T + 1`).
    pub fn new(n_skills: usize, capacity: usize, obs_dim: usize) -> Self {
        Self {
            capacity,
            obs_dim,
            slots: vec![vec![vec![0.0; obs_dim]; capacity]; n_skills],
            filled: vec![vec![false; capacity]; n_skills],
        }
    }

    pub fn for_env(n_skills: usize, cfg: &EnvConfig, obs_dim: usize) -> Self {
        Self::new(n_skills, cfg.episode_len + 1, obs_dim)
    }

    pub fn n_skills(&self) -> usize {
        self.slots.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn check_skill(&self, skill: usize) -> Result<()> {
        if skill >= self.slots.len() {
            return Err(Error::Index {
                what: "skill",
                index: skill,
                limit: self.slots.len(),
            });
        }
        Ok(())
    }

    pub fn store(&mut self, skill: usize, t: usize, obs: &[f64]) -> Result<()> {
        self.check_skill(skill)?;
        if t >= self.capacity {
            return Err(Error::Index {
                what: "time index",
                index: t,
                limit: self.capacity,
            });
        }
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} dims, memory holds {}",
                obs.len(),
                self.obs_dim
            )));
        }
        self.slots[skill][t].copy_from_slice(obs);
        self.filled[skill][t] = true;
        Ok(())
    }

    pub fn get(&self, skill: usize, t: usize) -> Option<&[f64]> {
        let filled = *self.filled.get(skill)?.get(t)?;
        filled.then(|| self.slots[skill][t].as_slice())
    }

    pub fn is_complete(&self, skill: usize) -> bool {
        self.filled.get(skill).is_some_and(|f| f.iter().all(|&b| b))
    }

    /// Replace every slot with a fresh rollout of its skill.
    pub fn refill<R: Rng + ?Sized>(
        &mut self,
        policy: &PolicySkillSet,
        cfg: &EnvConfig,
        rng: &mut R,
    ) -> Result<()> {
        if cfg.episode_len + 1 != self.capacity {
            return Err(Error::Shape(format!(
                "memory capacity {} does not match episode length {}",
                self.capacity, cfg.episode_len
            )));
        }
        for skill in 0..self.n_skills() {
            let trajectory = rollout(policy, skill, cfg, rng)?;
            for (t, obs) in trajectory.iter().enumerate() {
                self.store(skill, t, obs)?;
            }
        }
        Ok(())
    }

    /// Owned copy of every slot as a one-trajectory sample.
    pub fn snapshot_samples(&self) -> Result<Vec<SkillSample>> {
        (0..self.n_skills())
            .map(|skill| {
                if !self.is_complete(skill) {
                    return Err(Error::UnfilledMemory { skill });
                }
                SkillSample::single(self.slots[skill].clone())
            })
            .collect()
    }
}
