//! Skill-similarity functions and kernel-matrix construction.
//!
//! Skills are compared through the observation trajectories they induce. A
//! [`SkillSample`] holds `N` rollouts of one skill; all statistics are taken
//! over the concatenation of those rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky_logdet, trajectory_covariance, trajectory_mean};
use crate::vendi::{KernelMatrix, PsdPolicy};

/// `T x D` observations from one rollout.
pub type Trajectory = Vec<Vec<f64>>;

/// `N` trajectories drawn from one skill.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSample {
    trajectories: Vec<Trajectory>,
}

impl SkillSample {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() || trajectories.iter().any(|t| t.is_empty()) {
            return Err(Error::EmptyInput("skill sample"));
        }
        let dim = trajectories[0][0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional observations".into()));
        }
        if trajectories.iter().flatten().any(|obs| obs.len() != dim) {
            return Err(Error::Shape("trajectories differ in observation dimension".into()));
        }
        Ok(Self { trajectories })
    }

    pub fn single(trajectory: Trajectory) -> Result<Self> {
        Self::new(vec![trajectory])
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0][0].len()
    }

    /// Total number of observations `N·T`.
    pub fn len(&self) -> usize {
        self.trajectories.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `N·T x D` concatenation of all trajectories.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().flatten().cloned().collect()
    }

    /// Pooled mean with each observation taken relative to its trajectory's first state.
    pub fn mean_relative_to_start(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for t in &self.trajectories {
            let start = &t[0];
            for obs in t {
                for ((m, x), s) in mean.iter_mut().zip(obs).zip(start) {
                    *m += x - s;
                }
            }
        }
        let count = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    CosineOfMeans,
    MmdLinear,
    CovarianceStructure,
    KnnF1Overlap,
}

/// Reference point for the trajectory means used by the cosine kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanReference {
    Raw,
    #[default]
    RelativeToStart,
}

/// Declarative description of a (possibly combined) similarity function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySpec {
    pub kinds: Vec<KernelKind>,
    /// Convex weights, one per entry of `kinds`.
    pub weights: Vec<f64>,
    pub knn_k: usize,
    /// Rollouts per skill when the sample is generated from a policy.
    pub rollouts_per_skill: usize,
    pub mean_reference: MeanReference,
    /// Map cosine similarity from `[-1, 1]` to `[0, 1]` before combining.
    pub rescale_cosine: bool,
    /// Allow kNN-F1 kernels that are not PSD by clamping negative eigenvalues.
    pub clamp_non_psd: bool,
}

pub const DEFAULT_KNN_K: usize = 3;

impl Default for SimilaritySpec {
    fn default() -> Self {
        Self::single(KernelKind::MmdLinear)
    }
}

impl SimilaritySpec {
    pub fn single(kind: KernelKind) -> Self {
        Self {
            kinds: vec![kind],
            weights: vec![1.0],
            knn_k: DEFAULT_KNN_K,
            rollouts_per_skill: 1,
            mean_reference: MeanReference::RelativeToStart,
            rescale_cosine: true,
            clamp_non_psd: false,
        }
    }

    pub fn combined(terms: &[(KernelKind, f64)]) -> Self {
        let mut spec = Self::single(terms[0].0);
        spec.kinds = terms.iter().map(|t| t.0).collect();
        spec.weights = terms.iter().map(|t| t.1).collect();
        spec
    }

    /// Default measurement kernel: kNN-F1 overlap over five rollouts per skill,
    /// tolerating the small negative eigenvalues that overlap kernels can have.
    pub fn evaluation_default() -> Self {
        let mut spec = Self::single(KernelKind::KnnF1Overlap);
        spec.rollouts_per_skill = 5;
        spec.clamp_non_psd = true;
        spec
    }

    pub fn with_rollouts(mut self, n: usize) -> Self {
        self.rollouts_per_skill = n;
        self
    }

    pub fn uses(&self, kind: KernelKind) -> bool {
        self.kinds
            .iter()
            .zip(&self.weights)
            .any(|(&k, &w)| k == kind && w > 0.0)
    }

    pub fn psd_policy(&self) -> PsdPolicy {
        if self.clamp_non_psd {
            PsdPolicy::ClampRenormalize
        } else {
            PsdPolicy::Strict
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Parameter("similarity spec has no kernel terms".into()));
        }
        if self.kinds.len() != self.weights.len() {
            return Err(Error::Parameter(format!(
                "{} kernel kinds but {} weights",
                self.kinds.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("kernel weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "kernel weights sum to {total}, expected 1"
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::Parameter("knn_k must be >= 1".into()));
        }
        if self.rollouts_per_skill == 0 {
            return Err(Error::Parameter("rollouts_per_skill must be >= 1".into()));
        }
        if self.clamp_non_psd && !self.uses(KernelKind::KnnF1Overlap) {
            return Err(Error::Parameter(
                "clamp_non_psd only applies to kernels with a knn_f1_overlap term".into(),
            ));
        }
        Ok(())
    }

    /// Additional check for kernels used to produce training rewards.
    pub fn validate_for_reward(&self) -> Result<()> {
        self.validate()?;
        if self.uses(KernelKind::KnnF1Overlap) && !self.clamp_non_psd {
            return Err(Error::Parameter(
                "knn_f1_overlap as a reward kernel requires clamp_non_psd = true".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine of the angle between two mean vectors.
pub fn cosine_of(mu_a: &[f64], mu_b: &[f64]) -> Result<f64> {
    let na = norm(mu_a);
    let nb = norm(mu_b);
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateMean);
    }
    Ok((dot(mu_a, mu_b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity between pooled trajectory means, in `[-1, 1]`.
pub fn cosine_similarity(a: &SkillSample, b: &SkillSample, reference: MeanReference) -> Result<f64> {
    cosine_of(&reference_mean(a, reference)?, &reference_mean(b, reference)?)
}

/// `exp(-‖μ_a - μ_b‖)`: linear-kernel MMD turned into a similarity.
pub fn mmd_linear_similarity(a: &SkillSample, b: &SkillSample) -> Result<f64> {
    let mu_a = trajectory_mean(&a.pooled())?;
    let mu_b = trajectory_mean(&b.pooled())?;
    Ok(mean_distance_similarity(&mu_a, &mu_b))
}

pub fn mean_distance_similarity(mu_a: &[f64], mu_b: &[f64]) -> f64 {
    let d: f64 = mu_a
        .iter()
        .zip(mu_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    (-d).exp()
}

/// `exp(-|det Σ_a - det Σ_b|)` on pooled sample covariances.
pub fn covariance_similarity(a: &SkillSample, b: &SkillSample) -> Result<f64> {
    Ok(determinant_similarity(
        covariance_determinant(a)?,
        covariance_determinant(b)?,
    ))
}

pub fn determinant_similarity(det_a: f64, det_b: f64) -> f64 {
    (-(det_a - det_b).abs()).exp()
}

/// Determinant of the pooled sample covariance, via the Cholesky log-determinant.
pub fn covariance_determinant(sample: &SkillSample) -> Result<f64> {
    let cov = trajectory_covariance(&sample.pooled())?;
    Ok(cholesky_logdet(&cov)?.exp())
}

fn reference_mean(sample: &SkillSample, reference: MeanReference) -> Result<Vec<f64>> {
    match reference {
        MeanReference::Raw => trajectory_mean(&sample.pooled()),
        MeanReference::RelativeToStart => Ok(sample.mean_relative_to_start()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from each point to its `k`-th nearest other point in the same set.
fn knn_radii(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut scratch = Vec::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            scratch.clear();
            scratch.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| euclidean(p, q)),
            );
            let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `queries` that fall inside the union of hyperspheres around `support`.
fn coverage(queries: &[Vec<f64>], support: &[Vec<f64>], radii: &[f64]) -> f64 {
    let inside = queries
        .iter()
        .filter(|x| {
            support
                .iter()
                .zip(radii)
                .any(|(center, &r)| euclidean(x, center) <= r)
        })
        .count();
    inside as f64 / queries.len() as f64
}

/// Precision and recall of two point sets under kNN manifold estimates.
///
/// Precision is the share of `b` inside `a`'s manifold, recall the share of
/// `a` inside `b`'s.
pub fn knn_precision_recall(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    knn_k: usize,
) -> Result<(f64, f64)> {
    for (name, set) in [("first", a), ("second", b)] {
        if knn_k == 0 || knn_k >= set.len() {
            return Err(Error::Parameter(format!(
                "knn_k = {knn_k} needs 1 <= knn_k < {} (size of the {name} point set)",
                set.len()
            )));
        }
    }
    let radii_a = knn_radii(a, knn_k);
    let radii_b = knn_radii(b, knn_k);
    Ok((coverage(b, a, &radii_a), coverage(a, b, &radii_b)))
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Overlap of two skills' observation supports, in `[0, 1]`.
pub fn knn_f1_similarity(a: &SkillSample, b: &SkillSample, knn_k: usize) -> Result<f64> {
    let (pr, re) = knn_precision_recall(&a.pooled(), &b.pooled(), knn_k)?;
    Ok(f1_score(pr, re))
}

/// Per-skill statistics computed once and reused across all pairs.
struct SkillProfile {
    points: Option<Vec<Vec<f64>>>,
    mean: Option<Vec<f64>>,
    ref_mean: Option<Vec<f64>>,
    det: Option<f64>,
}

impl SkillProfile {
    fn new(sample: &SkillSample, spec: &SimilaritySpec) -> Result<Self> {
        let pooled = sample.pooled();
        let mean = spec
            .uses(KernelKind::MmdLinear)
            .then(|| trajectory_mean(&pooled))
            .transpose()?;
        let ref_mean = spec
            .uses(KernelKind::CosineOfMeans)
            .then(|| reference_mean(sample, spec.mean_reference))
            .transpose()?;
        let det = spec
            .uses(KernelKind::CovarianceStructure)
            .then(|| covariance_determinant(sample))
            .transpose()?;
        let points = spec.uses(KernelKind::KnnF1Overlap).then_some(pooled);
        Ok(Self {
            points,
            mean,
            ref_mean,
            det,
        })
    }
}

fn profile_similarity(spec: &SimilaritySpec, a: &SkillProfile, b: &SkillProfile) -> Result<f64> {
    let mut total = 0.0;
    for (&kind, &weight) in spec.kinds.iter().zip(&spec.weights) {
        if weight == 0.0 {
            continue;
        }
        let k = match kind {
            KernelKind::CosineOfMeans => {
                let c = cosine_of(
                    a.ref_mean.as_deref().expect("profile has cosine mean"),
                    b.ref_mean.as_deref().expect("profile has cosine mean"),
                )?;
                if spec.rescale_cosine {
                    0.5 * (1.0 + c)
                } else {
                    c
                }
            }
            KernelKind::MmdLinear => mean_distance_similarity(
                a.mean.as_deref().expect("profile has mean"),
                b.mean.as_deref().expect("profile has mean"),
            ),
            KernelKind::CovarianceStructure => determinant_similarity(
                a.det.expect("profile has determinant"),
                b.det.expect("profile has determinant"),
            ),
            KernelKind::KnnF1Overlap => {
                let (pr, re) = knn_precision_recall(
                    a.points.as_deref().expect("profile has points"),
                    b.points.as_deref().expect("profile has points"),
                    spec.knn_k,
                )?;
                f1_score(pr, re)
            }
        };
        total += weight * k;
    }
    Ok(total)
}

/// Weighted combination `Σ w_i k_i(a, b)` of the spec's base kernels.
pub fn combined_similarity(spec: &SimilaritySpec, a: &SkillSample, b: &SkillSample) -> Result<f64> {
    spec.validate()?;
    profile_similarity(spec, &SkillProfile::new(a, spec)?, &SkillProfile::new(b, spec)?)
}

/// Full `n x n` kernel matrix; the diagonal is set to 1 without evaluation.
pub fn build_kernel_matrix(samples: &[SkillSample], spec: &SimilaritySpec) -> Result<KernelMatrix> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("skill samples"));
    }
    let profiles = samples
        .iter()
        .map(|s| SkillProfile::new(s, spec))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| profile_similarity(spec, &profiles[i], &profiles[j]))
        .collect::<Result<Vec<f64>>>()?;
    let mut km = KernelMatrix::identity(n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        km.set(i, j, v)?;
    }
    Ok(km)
}

/// Recomputes row and column `skill` of `km`; every other entry is left alone.
pub fn refresh_kernel_row(
    km: &mut KernelMatrix,
    samples: &[SkillSample],
    skill: usize,
    spec: &SimilaritySpec,
) -> Result<()> {
    let n = km.n();
    if samples.len() != n {
        return Err(Error::Shape(format!(
            "{} samples for a {n}x{n} kernel",
            samples.len()
        )));
    }
    if skill >= n {
        return Err(Error::Index {
            what: "skill",
            index: skill,
            limit: n,
        });
    }
    let active = SkillProfile::new(&samples[skill], spec)?;
    for j in (0..n).filter(|&j| j != skill) {
        let other = SkillProfile::new(&samples[j], spec)?;
        km.set(skill, j, profile_similarity(spec, &active, &other)?)?;
    }
    Ok(())
}
