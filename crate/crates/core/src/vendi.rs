//! Vendi Score of a skill-similarity kernel and the per-step rewards built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{shannon_entropy, sym_eigenvalues, SymMatrix, PSD_TOL};

/// `n x n` matrix of pairwise skill similarities with an exact unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    sim: SymMatrix,
}

impl KernelMatrix {
    pub fn new(sim: SymMatrix) -> Result<Self> {
        for i in 0..sim.dim() {
            if sim.get(i, i) != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "kernel diagonal entry {i} is {}, expected 1",
                    sim.get(i, i)
                )));
            }
        }
        Ok(Self { sim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            sim: SymMatrix::identity(n),
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            sim: SymMatrix::filled(n, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.sim.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.sim.get(i, j)
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.sim
    }

    /// Sets the off-diagonal pair `(i, j)`/`(j, i)`. The diagonal stays at 1.
    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i == j {
            return Err(Error::InvalidInput("kernel diagonal is fixed at 1".into()));
        }
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite similarity {value}")));
        }
        self.sim.set_sym(i, j, value);
        Ok(())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            sim: self.sim.permuted(perm),
        }
    }
}

/// What to do with eigenvalues of `K/n` below `-1e-9`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsdPolicy {
    /// Fail with [`Error::NotPsd`].
    #[default]
    Strict,
    /// Drop negative eigenvalues and renormalize the rest to sum to one.
    ClampRenormalize,
}

/// Vendi Score: `exp(H(λ))` for the eigenvalues `λ` of `K/n`, clamped into `[1, n]`.
pub fn vendi_score(km: &KernelMatrix) -> Result<f64> {
    vendi_score_with(km, PsdPolicy::Strict)
}

pub fn vendi_score_with(km: &KernelMatrix, policy: PsdPolicy) -> Result<f64> {
    let n = km.n();
    let eig = sym_eigenvalues(&km.sim.scaled(1.0 / n as f64))?;
    let mut lambdas = eig.eigenvalues;
    let smallest = lambdas.last().copied().unwrap_or(0.0);
    if smallest < -PSD_TOL {
        match policy {
            PsdPolicy::Strict => return Err(Error::NotPsd { eigenvalue: smallest }),
            PsdPolicy::ClampRenormalize => {
                lambdas.iter_mut().for_each(|l| *l = l.max(0.0));
                let total: f64 = lambdas.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::NumericalFailure(
                        "kernel has no positive eigenvalues".into(),
                    ));
                }
                lambdas.iter_mut().for_each(|l| *l /= total);
            }
        }
    }
    let entropy = shannon_entropy(&lambdas)?;
    Ok(entropy.exp().clamp(1.0, n as f64))
}

/// Post-processing applied to the Vendi Score to form the per-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTransform {
    /// The score itself, in `[1, n]`.
    Raw,
    /// Change in score caused by the step.
    TimeDerivative,
    /// `VS - n`, in `[1 - n, 0]`.
    Penalty,
    /// `log(VS / n)`, in `[log(1/n), 0]`.
    #[default]
    LogFraction,
}

impl RewardTransform {
    pub fn apply(self, vs_after: f64, vs_before: f64, n: usize) -> f64 {
        let n = n as f64;
        match self {
            RewardTransform::Raw => vs_after,
            RewardTransform::TimeDerivative => vs_after - vs_before,
            RewardTransform::Penalty => vs_after - n,
            // clamp keeps the exact upper bound despite ln rounding
            RewardTransform::LogFraction => (vs_after / n).ln().min(0.0),
        }
    }
}

/// Reward for a transition given the kernel after the step and the score before it.
pub fn vendirl_reward(
    km_after_step: &KernelMatrix,
    vs_before_step: f64,
    transform: RewardTransform,
) -> Result<f64> {
    let vs = vendi_score(km_after_step)?;
    Ok(transform.apply(vs, vs_before_step, km_after_step.n()))
}
