//! Epoch loop: per-scene memories and kernels, stepwise diversity rewards,
//! and one shared policy update per epoch.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env2d::{self, rollout, EnvConfig, EnvState, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::kernels::{build_kernel_matrix, refresh_kernel_row, SimilaritySpec, SkillSample};
use crate::memory::SkillMemory;
use crate::misl::{misl_reward, Discriminator, DiscriminatorLearner, MislConfig};
use crate::policy::{Episode, EpisodeBatch, Learner, PolicyConfig, PolicySkillSet, Transition};
use crate::vendi::{vendi_score_with, KernelMatrix, RewardTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Vendirl,
    Misl,
    /// Rollouts and logging only; the policy is never updated.
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Vendirl => "vendirl",
            Method::Misl => "misl",
            Method::Random => "random",
        }
    }
}

/// How scenes are scheduled within an epoch. Both give identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_skills: usize,
    pub epochs: usize,
    /// Environment steps per scene per epoch; at most one episode.
    pub steps_per_epoch: usize,
    pub scenes: usize,
    pub transform: RewardTransform,
    pub spec: SimilaritySpec,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub env: EnvConfig,
    /// Evaluate every this many epochs (and after the last); 0 evaluates only at the end.
    pub eval_every: usize,
    pub eval_spec: SimilaritySpec,
    pub misl: MislConfig,
    pub exec: ExecMode,
    /// Fill the wall-time column of the metric log. Off by default so logs
    /// are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            n_skills: 8,
            epochs: 500,
            steps_per_epoch: env.episode_len,
            scenes: 8,
            transform: RewardTransform::LogFraction,
            spec: SimilaritySpec::default(),
            seed: 0,
            policy: PolicyConfig::default(),
            env,
            eval_every: 50,
            eval_spec: SimilaritySpec::evaluation_default(),
            misl: MislConfig::default(),
            exec: ExecMode::Parallel,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_skills < 2 {
            return Err(Error::Parameter("n_skills must be >= 2".into()));
        }
        if self.scenes == 0 {
            return Err(Error::Parameter("scenes must be >= 1".into()));
        }
        if self.steps_per_epoch == 0 || self.steps_per_epoch > self.env.episode_len {
            return Err(Error::Parameter(format!(
                "steps_per_epoch must be in 1..={}",
                self.env.episode_len
            )));
        }
        self.env.validate()?;
        self.policy.validate()?;
        self.spec.validate_for_reward()?;
        self.eval_spec.validate()?;
        self.misl.validate()?;
        Ok(())
    }

    fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch + 1 == self.epochs || (self.eval_every > 0 && (epoch + 1).is_multiple_of(self.eval_every))
    }
}

/// One row of the metric log: one scene in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub scene: usize,
    pub method: Method,
    /// Mean training-kernel score over the scene's steps this epoch.
    pub train_vs_mean: f64,
    /// Evaluation score of the policy after this epoch's update, on evaluation epochs.
    pub eval_vs: Option<f64>,
    /// Seconds since training started, when enabled.
    pub wall_time: Option<f64>,
}

/// Independent random stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const POLICY_STREAM: u64 = 0;
const DISCRIMINATOR_STREAM: u64 = 1;
const SCENE_STREAM_BASE: u64 = 1 << 16;
const EVAL_STREAM_BASE: u64 = 1 << 40;

/// Untrained policy for `cfg`, as used at epoch 0.
pub fn initial_policy(cfg: &TrainConfig) -> PolicySkillSet {
    let mut rng = stream_rng(cfg.seed, POLICY_STREAM);
    PolicySkillSet::new(cfg.n_skills, OBS_DIM, ACTION_DIM, &cfg.policy, &mut rng)
}

/// Per-skill samples of `rollouts` i.i.d. episodes each.
pub fn sample_skills<R: Rng + ?Sized>(
    policy: &PolicySkillSet,
    env: &EnvConfig,
    rollouts: usize,
    rng: &mut R,
) -> Result<Vec<SkillSample>> {
    (0..policy.n_skills())
        .map(|skill| {
            let trajectories = (0..rollouts)
                .map(|_| rollout(policy, skill, env, rng))
                .collect::<Result<Vec<_>>>()?;
            SkillSample::new(trajectories)
        })
        .collect()
}

/// Vendi Score of already sampled skills under `spec`.
pub fn score_samples(samples: &[SkillSample], spec: &SimilaritySpec) -> Result<f64> {
    let km = build_kernel_matrix(samples, spec)?;
    vendi_score_with(&km, spec.psd_policy())
}

/// Effective number of unique skills: `spec.rollouts_per_skill` rollouts
/// per skill, scored under `spec`.
pub fn effective_unique_skills<R: Rng + ?Sized>(
    policy: &PolicySkillSet,
    env: &EnvConfig,
    spec: &SimilaritySpec,
    rng: &mut R,
) -> Result<f64> {
    spec.validate()?;
    let samples = sample_skills(policy, env, spec.rollouts_per_skill, rng)?;
    score_samples(&samples, spec)
}

/// Evaluation score after `epoch`, on the evaluation stream of `cfg.seed`.
pub fn evaluate(policy: &PolicySkillSet, cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let mut rng = stream_rng(cfg.seed, EVAL_STREAM_BASE + epoch as u64);
    effective_unique_skills(policy, &cfg.env, &cfg.eval_spec, &mut rng)
}

/// Independent state of one parallel environment instance.
#[derive(Debug, Clone)]
pub struct SceneState {
    pub index: usize,
    pub env: EnvState,
    pub memory: SkillMemory,
    pub kernel: KernelMatrix,
    pub goal: usize,
    /// Score of `kernel` as of the last update.
    pub vs: f64,
    pub rng: ChaCha8Rng,
}

impl SceneState {
    pub fn new(index: usize, cfg: &TrainConfig) -> Self {
        Self {
            index,
            env: env2d::reset(&cfg.env),
            memory: SkillMemory::for_env(cfg.n_skills, &cfg.env, OBS_DIM),
            kernel: KernelMatrix::identity(cfg.n_skills),
            goal: 0,
            vs: cfg.n_skills as f64,
            rng: stream_rng(cfg.seed, SCENE_STREAM_BASE + index as u64),
        }
    }

    fn rescore(&mut self, spec: &SimilaritySpec) -> Result<f64> {
        self.vs = vendi_score_with(&self.kernel, spec.psd_policy())?;
        Ok(self.vs)
    }

    /// Refill memory from `policy`, rebuild the kernel, refresh the cached score.
    pub fn sync(&mut self, policy: &PolicySkillSet, cfg: &TrainConfig) -> Result<()> {
        self.memory.refill(policy, &cfg.env, &mut self.rng)?;
        self.kernel = build_kernel_matrix(&self.memory.snapshot_samples()?, &cfg.spec)?;
        self.rescore(&cfg.spec)?;
        Ok(())
    }

    /// Recompute row and column `skill` from the current memory and rescore.
    pub fn update_kernel_row(&mut self, skill: usize, spec: &SimilaritySpec) -> Result<f64> {
        let samples = self.memory.snapshot_samples()?;
        refresh_kernel_row(&mut self.kernel, &samples, skill, spec)?;
        self.rescore(spec)
    }

    /// Largest deviation between the maintained kernel and a rebuild from memory.
    pub fn kernel_drift(&self, spec: &SimilaritySpec) -> Result<f64> {
        let fresh = build_kernel_matrix(&self.memory.snapshot_samples()?, spec)?;
        let n = self.kernel.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((fresh.get(i, j) - self.kernel.get(i, j)).abs());
            }
        }
        Ok(worst)
    }
}

/// Refill every scene from the shared policy using each scene's own stream.
pub fn sync_scenes(scenes: &mut [SceneState], policy: &PolicySkillSet, cfg: &TrainConfig) -> Result<()> {
    let run = |s: &mut SceneState| s.sync(policy, cfg).map_err(|e| e.at(0, s.index, None));
    match cfg.exec {
        ExecMode::Parallel => scenes.par_iter_mut().try_for_each(run),
        ExecMode::Sequential => scenes.iter_mut().try_for_each(run),
    }
}

enum RewardSource<'a> {
    Vendi(RewardTransform),
    Misl(&'a Discriminator, f64),
}

struct SceneEpoch {
    episode: Episode,
    vs_mean: f64,
}

fn run_scene_epoch(
    scene: &mut SceneState,
    policy: &PolicySkillSet,
    cfg: &TrainConfig,
    reward: &RewardSource<'_>,
    check_kernel: bool,
) -> Result<SceneEpoch> {
    let n = cfg.n_skills;
    scene.sync(policy, cfg)?;
    scene.goal = scene.rng.random_range(0..n);
    let goal = scene.goal;
    scene.env = env2d::reset(&cfg.env);
    scene.memory.store(goal, 0, &scene.env.observation())?;
    let mut transitions = Vec::with_capacity(cfg.steps_per_epoch);
    let mut vs_sum = 0.0;
    let index = scene.index;
    for t in 0..cfg.steps_per_epoch {
        let at = |e: Error| e.at(0, index, Some(t));
        let obs = scene.env.observation();
        let sample = policy.act(&obs, goal, &mut scene.rng).map_err(at)?;
        scene.env = env2d::step(&scene.env, &sample.action, &cfg.env, &mut scene.rng).map_err(at)?;
        let next = scene.env.observation();
        scene.memory.store(goal, t + 1, &next).map_err(at)?;
        let vs_before = scene.vs;
        let vs = scene.update_kernel_row(goal, &cfg.spec).map_err(at)?;
        vs_sum += vs;
        let r = match reward {
            RewardSource::Vendi(transform) => transform.apply(vs, vs_before, n),
            RewardSource::Misl(disc, floor) => misl_reward(disc, &next, goal, n, *floor).map_err(at)?,
        };
        transitions.push(Transition {
            obs,
            goal,
            action: sample.action,
            reward: r,
            log_prob: sample.log_prob,
        });
    }
    if check_kernel {
        let drift = scene.kernel_drift(&cfg.spec)?;
        if drift > 1e-9 {
            return Err(Error::NumericalFailure(format!(
                "maintained kernel drifted {drift:e} from a rebuild"
            )));
        }
    }
    Ok(SceneEpoch {
        episode: Episode { transitions },
        vs_mean: vs_sum / cfg.steps_per_epoch as f64,
    })
}

/// Snapshot handed to observers after every epoch.
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub method: Method,
    /// Policy after this epoch's update.
    pub policy: &'a PolicySkillSet,
    /// Episodes collected this epoch, in scene order.
    pub batch: &'a EpisodeBatch,
    pub rows: &'a [MetricRow],
    pub eval_vs: Option<f64>,
    pub discriminator: Option<&'a Discriminator>,
}

pub struct TrainOutput {
    pub policy: PolicySkillSet,
    pub log: Vec<MetricRow>,
    /// Final discriminator of a discriminator-rewarded run.
    pub discriminator: Option<Discriminator>,
}

/// Diversity-rewarded training with the configured kernel and transform.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(cfg, Method::Vendirl, &mut |_| Ok(()))
}

/// Runs `method` and calls `observer` once per epoch, in epoch order.
pub fn train_with(
    cfg: &TrainConfig,
    method: Method,
    observer: &mut dyn FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let mut policy = initial_policy(cfg);
    let mut learner = Learner::new(&cfg.policy, policy.params().len());
    let mut discriminator = (method == Method::Misl).then(|| {
        let mut rng = stream_rng(cfg.seed, DISCRIMINATOR_STREAM);
        Discriminator::new(cfg.n_skills, OBS_DIM, &cfg.misl, &mut rng)
    });
    let mut disc_learner = discriminator
        .as_ref()
        .map(|d| DiscriminatorLearner::new(&cfg.misl, d));
    let mut scenes: Vec<SceneState> = (0..cfg.scenes).map(|i| SceneState::new(i, cfg)).collect();
    let mut log = Vec::with_capacity(cfg.epochs * cfg.scenes);

    for epoch in 0..cfg.epochs {
        let evaluating = cfg.is_eval_epoch(epoch);
        let reward = match &discriminator {
            Some(d) => RewardSource::Misl(d, cfg.misl.log_prob_floor),
            None => RewardSource::Vendi(cfg.transform),
        };
        let run = |s: &mut SceneState| {
            run_scene_epoch(s, &policy, cfg, &reward, evaluating).map_err(|e| relabel(e, epoch, s.index))
        };
        let results: Vec<SceneEpoch> = match cfg.exec {
            ExecMode::Parallel => scenes.par_iter_mut().map(run).collect::<Result<_>>()?,
            ExecMode::Sequential => scenes.iter_mut().map(run).collect::<Result<_>>()?,
        };
        let vs_means: Vec<f64> = results.iter().map(|r| r.vs_mean).collect();
        let batch = EpisodeBatch {
            episodes: results.into_iter().map(|r| r.episode).collect(),
        };

        if method != Method::Random {
            learner
                .update(&mut policy, &batch)
                .map_err(|e| e.at(epoch, 0, None))?;
        }
        if let (Some(disc), Some(dl)) = (discriminator.as_mut(), disc_learner.as_mut()) {
            let labelled: Vec<(Vec<f64>, usize)> = batch
                .episodes
                .iter()
                .zip(&scenes)
                .flat_map(|(e, s)| {
                    (1..=e.transitions.len()).filter_map(move |t| s.memory.get(s.goal, t).map(|o| (o.to_vec(), s.goal)))
                })
                .collect();
            for _ in 0..cfg.misl.updates_per_epoch {
                dl.update(disc, &labelled).map_err(|e| e.at(epoch, 0, None))?;
            }
        }

        let eval_vs = if evaluating {
            Some(evaluate(&policy, cfg, epoch).map_err(|e| e.at(epoch, 0, None))?)
        } else {
            None
        };
        let wall_time = cfg.record_wall_time.then(|| started.elapsed().as_secs_f64());
        let first = log.len();
        log.extend(vs_means.iter().enumerate().map(|(scene, &train_vs_mean)| MetricRow {
            epoch,
            scene,
            method,
            train_vs_mean,
            eval_vs,
            wall_time,
        }));
        observer(&EpochReport {
            epoch,
            method,
            policy: &policy,
            batch: &batch,
            rows: &log[first..],
            eval_vs,
            discriminator: discriminator.as_ref(),
        })?;
    }
    Ok(TrainOutput {
        policy,
        log,
        discriminator,
    })
}

/// Replace the placeholder epoch of a scene-level error.
fn relabel(e: Error, epoch: usize, scene: usize) -> Error {
    match e {
        Error::Training { step, source, .. } => Error::Training {
            epoch,
            scene,
            step,
            source,
        },
        other => other.at(epoch, scene, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            n_skills: 3,
            epochs: 2,
            scenes: 2,
            env: EnvConfig {
                episode_len: 8,
                ..EnvConfig::default()
            },
            steps_per_epoch: 8,
            eval_every: 1,
            eval_spec: SimilaritySpec::evaluation_default().with_rollouts(2),
            policy: PolicyConfig {
                hidden: vec![8],
                ..PolicyConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny()
        };
        let out = train(&cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.policy, initial_policy(&cfg));
    }

    #[test]
    fn validation() {
        assert!(TrainConfig { n_skills: 1, ..tiny() }.validate().is_err());
        assert!(TrainConfig { scenes: 0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { steps_per_epoch: 0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { steps_per_epoch: 9, ..tiny() }.validate().is_err());
        let knn_unclamped = SimilaritySpec::single(crate::kernels::KernelKind::KnnF1Overlap);
        assert!(TrainConfig { spec: knn_unclamped, ..tiny() }.validate().is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn log_shape_and_eval_cadence() {
        let cfg = TrainConfig {
            epochs: 5,
            eval_every: 2,
            ..tiny()
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.log.len(), 10);
        for (i, row) in out.log.iter().enumerate() {
            assert_eq!((row.epoch, row.scene), (i / 2, i % 2));
            assert!((1.0..=3.0).contains(&row.train_vs_mean));
            assert_eq!(row.eval_vs.is_some(), matches!(row.epoch, 1 | 3 | 4));
            assert!(row.wall_time.is_none());
        }
    }

    #[test]
    fn update_kernel_row_locality_and_idempotence() {
        let cfg = tiny();
        let policy = initial_policy(&cfg);
        let mut scene = SceneState::new(0, &cfg);
        scene.sync(&policy, &cfg).unwrap();
        let before = scene.kernel.clone();
        scene.update_kernel_row(1, &cfg.spec).unwrap();
        assert_eq!(scene.kernel, before);

        scene.memory.store(1, 3, &[0.9, 0.1]).unwrap();
        scene.update_kernel_row(1, &cfg.spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let touched = i != j && (i == 1 || j == 1);
                assert_eq!(scene.kernel.get(i, j) != before.get(i, j), touched, "({i},{j})");
            }
        }
        assert_eq!(scene.kernel_drift(&cfg.spec).unwrap(), 0.0);
    }

    #[test]
    fn sync_with_deterministic_policy_equalizes_scenes() {
        let cfg = TrainConfig {
            policy: PolicyConfig {
                hidden: vec![8],
                log_std_min: -30.0,
                init_log_std: -30.0,
                ..PolicyConfig::default()
            },
            scenes: 3,
            ..tiny()
        };
        let mut policy = initial_policy(&cfg);
        // constant drift shared by every skill
        let off = policy.net().output_bias_offset();
        policy.params_mut()[off] = 0.03;
        policy.params_mut()[off + 1] = -0.01;
        let mut scenes: Vec<SceneState> = (0..3).map(|i| SceneState::new(i, &cfg)).collect();
        sync_scenes(&mut scenes, &policy, &cfg).unwrap();
        for s in &scenes[1..] {
            // an exp(-30) std leaves differences far below 1e-9
            for i in 0..3 {
                for j in 0..3 {
                    assert!((s.kernel.get(i, j) - scenes[0].kernel.get(i, j)).abs() < 1e-9);
                }
            }
            assert!((s.vs - scenes[0].vs).abs() < 1e-9);
        }
    }
}
