//! Experiment configuration files.
//!
//! A config is TOML with one table per concern: `[train]`, `[env]`,
//! `[kernel]`, `[eval_kernel]`, `[policy]`, `[misl]` and `[output]`. Every
//! key is optional; missing keys take the defaults shown by
//! [`ExperimentConfig::default`]. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vendirl::env2d::EnvConfig;
use vendirl::kernels::SimilaritySpec;
use vendirl::misl::MislConfig;
use vendirl::policy::PolicyConfig;
use vendirl::trainer::{ExecMode, Method, TrainConfig};
use vendirl::vendi::RewardTransform;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub n_skills: usize,
    pub epochs: usize,
    /// Defaults to one full episode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_epoch: Option<usize>,
    pub scenes: usize,
    pub transform: RewardTransform,
    pub seed: u64,
    pub eval_every: usize,
    pub exec: ExecMode,
    pub record_wall_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            method: Method::Vendirl,
            n_skills: t.n_skills,
            epochs: t.epochs,
            steps_per_epoch: None,
            scenes: t.scenes,
            transform: t.transform,
            seed: t.seed,
            eval_every: t.eval_every,
            exec: t.exec,
            record_wall_time: t.record_wall_time,
        }
    }
}

pub const DEFAULT_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Rollouts per skill written by `eval` for plotting.
    pub plot_rollouts: usize,
    /// Stroke colors by skill index, reused cyclically.
    pub colors: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            plot_rollouts: 5,
            colors: DEFAULT_COLORS.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainSection,
    pub env: EnvConfig,
    pub kernel: SimilaritySpec,
    pub eval_kernel: SimilaritySpec,
    pub policy: PolicyConfig,
    pub misl: MislConfig,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train: TrainSection::default(),
            env: t.env,
            kernel: t.spec,
            eval_kernel: t.eval_spec,
            policy: t.policy,
            misl: t.misl,
            output: OutputSection::default(),
        }
    }
}

/// Recursively overlay `user` onto `base`; tables merge, everything else replaces.
fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// When a kernel table lists `kinds` but omits `weights` or `clamp_non_psd`,
/// derive them from the kinds (equal weights; clamp iff a kNN term is present)
/// instead of inheriting values that belong to the default kinds.
fn fill_kind_dependent(table: &mut toml::Table) {
    let Some(toml::Value::Array(kinds)) = table.get("kinds") else {
        return;
    };
    let count = kinds.len();
    let has_knn = kinds.iter().any(|k| k.as_str() == Some("knn_f1_overlap"));
    if count > 0 && !table.contains_key("weights") {
        let w = toml::Value::Float(1.0 / count as f64);
        table.insert("weights".into(), toml::Value::Array(vec![w; count]));
    }
    if !table.contains_key("clamp_non_psd") {
        table.insert("clamp_non_psd".into(), toml::Value::Boolean(has_knn));
    }
}

impl ExperimentConfig {
    /// Parse config text; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Config {
            origin: origin.to_string(),
            message: msg,
        };
        // Strict pass over the user's own text so diagnostics carry its
        // line and column.
        toml::from_str::<PartialConfig>(text).map_err(|e| bad(e.to_string()))?;
        let mut user: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        for section in ["kernel", "eval_kernel"] {
            if let Some(toml::Value::Table(t)) = user.get_mut(section) {
                fill_kind_dependent(t);
            }
        }
        let mut merged = toml::Table::try_from(ExperimentConfig::default()).map_err(|e| bad(e.to_string()))?;
        overlay(&mut merged, user);
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.train_config().validate().map_err(|e| bad(e.to_string()))?;
        if cfg.output.plot_rollouts == 0 {
            return Err(bad("output.plot_rollouts must be >= 1".into()));
        }
        if cfg.output.colors.is_empty() {
            return Err(bad("output.colors must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            origin: path.display().to_string(),
            message: format!("cannot read config file: {e}"),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.steps_per_epoch.unwrap_or(self.env.episode_len)
    }

    /// Copy with every default written out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.train.steps_per_epoch = Some(self.steps_per_epoch());
        r
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_skills: self.train.n_skills,
            epochs: self.train.epochs,
            steps_per_epoch: self.steps_per_epoch(),
            scenes: self.train.scenes,
            transform: self.train.transform,
            spec: self.kernel.clone(),
            seed: self.train.seed,
            policy: self.policy.clone(),
            env: self.env.clone(),
            eval_every: self.train.eval_every,
            eval_spec: self.eval_kernel.clone(),
            misl: self.misl.clone(),
            exec: self.train.exec,
            record_wall_time: self.train.record_wall_time,
        }
    }
}

/// Every section optional and strictly typed.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct PartialConfig {
    train: Option<TrainSection>,
    env: Option<EnvConfig>,
    kernel: Option<SimilaritySpec>,
    eval_kernel: Option<SimilaritySpec>,
    policy: Option<PolicyConfig>,
    misl: Option<MislConfig>,
    output: Option<OutputSection>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use vendirl::kernels::KernelKind;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("", "t").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let cfg = ExperimentConfig::parse("[train]\nepochs = 7\n[env]\nepisode_len = 20\n", "t").unwrap();
        assert_eq!(cfg.steps_per_epoch(), 20);
        let resolved = cfg.resolved();
        let text = resolved.to_toml();
        assert!(text.contains("steps_per_epoch = 20"));
        let back = ExperimentConfig::parse(&text, "snapshot").unwrap();
        assert_eq!(back, resolved);
        assert_eq!(back.train_config(), cfg.train_config());
    }

    #[test]
    fn partial_sections_keep_their_own_defaults() {
        let cfg = ExperimentConfig::parse("[eval_kernel]\nrollouts_per_skill = 3\n", "t").unwrap();
        assert_eq!(cfg.eval_kernel.kinds, vec![KernelKind::KnnF1Overlap]);
        assert!(cfg.eval_kernel.clamp_non_psd);
        assert_eq!(cfg.eval_kernel.rollouts_per_skill, 3);
    }

    #[test]
    fn kinds_without_weights_get_equal_weights() {
        let text = "[kernel]\nkinds = [\"cosine_of_means\", \"covariance_structure\"]\n";
        let cfg = ExperimentConfig::parse(text, "t").unwrap();
        assert_eq!(cfg.kernel.weights, vec![0.5, 0.5]);
        assert!(!cfg.kernel.clamp_non_psd);
        let text = "[eval_kernel]\nkinds = [\"mmd_linear\"]\n";
        assert!(!ExperimentConfig::parse(text, "t").unwrap().eval_kernel.clamp_non_psd);
    }

    #[test]
    fn diagnostics_name_origin_line_and_field() {
        let err = ExperimentConfig::parse("[train]\nepochs = 3\nsceens = 2\n", "exp.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("exp.toml") && msg.contains("line 3") && msg.contains("sceens"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        let msg = ExperimentConfig::parse("[trian]\n", "t").unwrap_err().to_string();
        assert!(msg.contains("trian"), "{msg}");
        let msg = ExperimentConfig::parse("[train]\nepochs = \"ten\"\n", "t").unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn semantic_validation() {
        for text in [
            "[train]\nn_skills = 1\n",
            "[train]\nscenes = 0\n",
            "[train]\nsteps_per_epoch = 65\n",
            "[kernel]\nkinds = [\"mmd_linear\"]\nweights = [0.7]\n",
            "[kernel]\nkinds = [\"knn_f1_overlap\"]\nclamp_non_psd = false\n",
            "[output]\nplot_rollouts = 0\n",
            "[env]\nmax_action_norm = -1.0\n",
        ] {
            assert!(ExperimentConfig::parse(text, "t").is_err(), "{text}");
        }
    }
}
