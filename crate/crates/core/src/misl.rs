//! Discriminator-based skill learning baseline: the reward is how well a
//! classifier recovers the active skill from the visited observation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Mlp, Optimizer, OptimizerState};
use crate::trainer::{self, Method, TrainConfig, TrainOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MislConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Cross-entropy steps on each epoch's batch.
    pub updates_per_epoch: usize,
    /// Lower clamp on `log q(g | s')`.
    pub log_prob_floor: f64,
}

impl Default for MislConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            updates_per_epoch: 10,
            log_prob_floor: -20.0,
        }
    }
}

impl MislConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Parameter("discriminator layer widths must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("discriminator learning_rate must be >= 0".into()));
        }
        if !(self.log_prob_floor < 0.0 && self.log_prob_floor.is_finite()) {
            return Err(Error::Parameter("log_prob_floor must be negative".into()));
        }
        Ok(())
    }
}

/// Skill classifier `q(g | s)`: observation in, one logit per skill out.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    n_skills: usize,
    net: Mlp,
}

fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NumericalFailure(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|l| l - lse).collect())
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(n_skills: usize, obs_dim: usize, cfg: &MislConfig, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(n_skills);
        Self {
            n_skills,
            net: Mlp::new(&sizes, rng),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        Self {
            n_skills: net.output_dim(),
            net,
        }
    }

    pub fn n_skills(&self) -> usize {
        self.n_skills
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
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

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(Error::Shape(format!(
                "observation has {} dims, discriminator expects {}",
                obs.len(),
                self.obs_dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        Ok(self.net.forward(obs).output().to_vec())
    }

    pub fn log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        log_softmax(&self.logits(obs)?)
    }

    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_probs(obs)?.into_iter().map(f64::exp).collect())
    }

    /// Most likely skill; ties go to the lowest index.
    pub fn predict(&self, obs: &[f64]) -> Result<usize> {
        let lp = self.log_probs(obs)?;
        let mut best = 0;
        for (i, v) in lp.iter().enumerate() {
            if *v > lp[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Mean cross-entropy `-log q(g | s)` over the batch.
    pub fn loss(&self, batch: &[(Vec<f64>, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("discriminator batch"));
        }
        let mut total = 0.0;
        for (obs, goal) in batch {
            self.check_goal(*goal)?;
            total -= self.log_probs(obs)?[*goal];
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`Discriminator::loss`] with respect to the parameters.
    pub fn loss_gradient(&self, batch: &[(Vec<f64>, usize)]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("discriminator batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; self.params().len()];
        for (obs, goal) in batch {
            self.check_goal(*goal)?;
            self.check_obs(obs)?;
            let acts = self.net.forward(obs);
            let lp = log_softmax(acts.output())?;
            let grad_logits: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(i, l)| scale * (l.exp() - if i == *goal { 1.0 } else { 0.0 }))
                .collect();
            self.net.backward(&acts, &grad_logits, &mut grads);
        }
        Ok(grads)
    }

    fn check_goal(&self, goal: usize) -> Result<()> {
        if goal >= self.n_skills {
            return Err(Error::Index {
                what: "goal",
                index: goal,
                limit: self.n_skills,
            });
        }
        Ok(())
    }
}

/// `max(log q(g | s'), floor) + log n`.
pub fn misl_reward(disc: &Discriminator, obs: &[f64], goal: usize, n: usize, floor: f64) -> Result<f64> {
    if n != disc.n_skills() {
        return Err(Error::Shape(format!(
            "{n} skills requested, discriminator has {}",
            disc.n_skills()
        )));
    }
    disc.check_goal(goal)?;
    let lp = disc.log_probs(obs)?[goal];
    Ok(lp.max(floor) + (n as f64).ln())
}

/// Optimizer state for repeated cross-entropy steps.
#[derive(Debug, Clone)]
pub struct DiscriminatorLearner {
    state: OptimizerState,
}

impl DiscriminatorLearner {
    pub fn new(cfg: &MislConfig, disc: &Discriminator) -> Self {
        Self {
            state: OptimizerState::new(cfg.optimizer, cfg.learning_rate, disc.params().len()),
        }
    }

    /// One descent step; returns the loss before the step. On a non-finite
    /// gradient the discriminator is left untouched.
    pub fn update(&mut self, disc: &mut Discriminator, batch: &[(Vec<f64>, usize)]) -> Result<f64> {
        let loss = disc.loss(batch)?;
        let grads = disc.loss_gradient(batch)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure("non-finite discriminator gradient".into()));
        }
        let descent: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.state.ascend(disc.params_mut(), &descent);
        Ok(loss)
    }
}

/// Stateless single cross-entropy step with a fresh optimizer.
pub fn discriminator_update(
    disc: &Discriminator,
    batch: &[(Vec<f64>, usize)],
    cfg: &MislConfig,
) -> Result<Discriminator> {
    let mut next = disc.clone();
    DiscriminatorLearner::new(cfg, disc).update(&mut next, batch)?;
    Ok(next)
}

/// Share of observations whose most likely skill is the labelled one.
pub fn classification_accuracy(disc: &Discriminator, batch: &[(Vec<f64>, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("labelled observations"));
    }
    let mut hits = 0usize;
    for (obs, goal) in batch {
        if disc.predict(obs)? == *goal {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}

/// Trains with the discriminator reward; the output carries the final discriminator.
pub fn train_misl(cfg: &TrainConfig) -> Result<TrainOutput> {
    trainer::train_with(cfg, Method::Misl, &mut |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(n: usize, rng: &mut ChaCha8Rng) -> Discriminator {
        let cfg = MislConfig {
            hidden: vec![6, 5],
            ..MislConfig::default()
        };
        let mut d = Discriminator::new(n, 2, &cfg, rng);
        for p in d.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        d
    }

    #[test]
    fn reward_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let uniform = Discriminator::new(4, 2, &MislConfig::default(), &mut rng);
        for g in 0..4 {
            assert!(misl_reward(&uniform, &[0.3, 0.8], g, 4, -20.0).unwrap().abs() < 1e-12);
        }
        // a single linear layer whose bias alone sets the logits
        let confident = |bias: [f64; 2]| {
            let mut net = Mlp::from_params(&[2, 2], vec![0.0; 6]).unwrap();
            let off = net.output_bias_offset();
            net.params_mut()[off..].copy_from_slice(&bias);
            Discriminator::from_net(net)
        };
        let right = confident([60.0, -60.0]);
        assert!((misl_reward(&right, &[0.5, 0.5], 0, 2, -20.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        let wrong = confident([10.0, -10.0]);
        let r = misl_reward(&wrong, &[0.5, 0.5], 1, 2, -20.0).unwrap();
        assert_eq!(r, -20.0 + 2f64.ln());
        assert!(misl_reward(&wrong, &[0.5, 0.5], 2, 2, -20.0).is_err());
    }

    #[test]
    fn non_finite_logits_fail() {
        let mut net = Mlp::from_params(&[2, 2], vec![0.0; 6]).unwrap();
        net.params_mut()[0] = f64::NAN;
        let d = Discriminator::from_net(net);
        assert!(matches!(
            misl_reward(&d, &[0.5, 0.5], 0, 2, -20.0),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed as usize % 4);
            let d = small(n, &mut rng);
            let batch: Vec<(Vec<f64>, usize)> = (0..7)
                .map(|i| (vec![rng.random::<f64>(), rng.random::<f64>()], i % n))
                .collect();
            let grads = d.loss_gradient(&batch).unwrap();
            let eps = 1e-6;
            for i in 0..grads.len() {
                let mut plus = d.clone();
                plus.params_mut()[i] += eps;
                let mut minus = d.clone();
                minus.params_mut()[i] -= eps;
                let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * eps);
                let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6);
                assert!(err <= 1e-4, "seed {seed} param {i}: {fd} vs {}", grads[i]);
            }
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = MislConfig::default();
        let mut d = Discriminator::new(2, 2, &cfg, &mut rng);
        let batch: Vec<(Vec<f64>, usize)> = (0..40)
            .map(|i| {
                let x = rng.random::<f64>();
                let y = rng.random::<f64>();
                if i % 2 == 0 {
                    (vec![0.1 + 0.3 * x, y], 0)
                } else {
                    (vec![0.6 + 0.3 * x, y], 1)
                }
            })
            .collect();
        let mut learner = DiscriminatorLearner::new(&cfg, &d);
        for _ in 0..500 {
            learner.update(&mut d, &batch).unwrap();
        }
        assert_eq!(classification_accuracy(&d, &batch).unwrap(), 1.0);
    }

    #[test]
    fn irreducible_confusion_keeps_loss_at_log_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = MislConfig {
            optimizer: Optimizer::Sgd,
            ..MislConfig::default()
        };
        let mut d = Discriminator::new(3, 2, &cfg, &mut rng);
        let batch: Vec<(Vec<f64>, usize)> = (0..6).map(|i| (vec![0.4, 0.4], i % 3)).collect();
        let before = d.clone();
        let loss = DiscriminatorLearner::new(&cfg, &d).update(&mut d, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(d.loss_gradient(&batch).unwrap().iter().all(|g| g.abs() < 1e-15));
        let moved = d.params().iter().zip(before.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved < 1e-15);
        assert!((d.loss(&batch).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nan_batch_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = MislConfig::default();
        let mut d = small(2, &mut rng);
        let before = d.clone();
        let batch = vec![(vec![f64::NAN, 0.0], 0)];
        assert!(DiscriminatorLearner::new(&cfg, &d).update(&mut d, &batch).is_err());
        assert_eq!(d, before);
        assert!(discriminator_update(&d, &[], &cfg).is_err());
    }

    /// With uniform predictions every goal earns exactly zero, so the sample
    /// mean over random observations and goals is zero too.
    #[test]
    fn uniform_discriminator_expected_reward_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Discriminator::new(8, 2, &MislConfig::default(), &mut rng);
        let mean = (0..1000)
            .map(|_| {
                let obs = [rng.random::<f64>(), rng.random::<f64>()];
                misl_reward(&d, &obs, rng.random_range(0..8), 8, -20.0).unwrap()
            })
            .sum::<f64>()
            / 1000.0;
        assert!(mean.abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn reward_bounds_and_valid_distribution(
            seed in 0u64..1000,
            x in -5.0..5.0f64,
            y in -5.0..5.0f64,
            scale in 0.0..50.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2 + (seed as usize % 7);
            let mut d = small(n, &mut rng);
            d.params_mut().iter_mut().for_each(|p| *p *= scale);
            let probs = d.probabilities(&[x, y]).unwrap();
            proptest::prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            proptest::prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
            for g in 0..n {
                let r = misl_reward(&d, &[x, y], g, n, -20.0).unwrap();
                proptest::prop_assert!(r >= -20.0 && r <= (n as f64).ln() + 1e-12);
            }
        }
    }
}
