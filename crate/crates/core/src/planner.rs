//! Cross-entropy-method search over the 6-D action space.
//!
//! Each iteration draws `N` candidates from a diagonal Gaussian, scores them
//! with a [`RewardOracle`], keeps the `K` best and refits the Gaussian to them
//! by maximum likelihood. The estimate is the final mean.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::derive_seed;
use crate::geometry::{Action, AlignmentScorer, PointCloud};
use crate::latentmodel::{DynamicModel, LatentState};
use crate::{Error, Exec, Result};

const SAMPLE_STREAM: u64 = 0x4345_4D;
/// Rows per batched latent-oracle call. Fixed so that results do not depend
/// on the execution mode.
const LATENT_CHUNK: usize = 128;

pub const DEFAULT_SIGMA0: [f64; 6] = [0.8, 0.8, 0.8, 0.5, 0.5, 0.5];
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    pub mean: [f64; 6],
    pub variance: [f64; 6],
}

impl SamplingDistribution {
    /// Validates finiteness and clamps every variance to at least `floor`.
    pub fn new(mean: [f64; 6], variance: [f64; 6], floor: f64) -> Result<Self> {
        if mean.iter().chain(&variance).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sampling distribution mean {mean:?}, variance {variance:?}"
            )));
        }
        if variance.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative variance in {variance:?}"
            )));
        }
        Ok(Self {
            mean,
            variance: variance.map(|v| v.max(floor)),
        })
    }

    pub fn std(&self) -> [f64; 6] {
        self.variance.map(f64::sqrt)
    }

    /// The mean as an action (angles wrapped).
    pub fn mean_action(&self) -> Action {
        Action::from_array(self.mean).expect("finite mean")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CemConfig {
    pub iterations: usize,
    pub candidates: usize,
    pub elites: usize,
    pub mu0: [f64; 6],
    pub sigma0: [f64; 6],
    pub variance_floor: f64,
    pub seed: u64,
    /// Replace candidate 0 of every iteration with the current mean.
    pub inject_mean: bool,
    /// Return the best candidate ever evaluated instead of the final mean.
    pub return_best: bool,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            candidates: 1000,
            elites: 25,
            mu0: [0.0; 6],
            sigma0: DEFAULT_SIGMA0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
            inject_mean: true,
            return_best: false,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("cem.iterations must be at least 1".into()));
        }
        if self.elites == 0 || self.elites > self.candidates {
            return Err(Error::Config(format!(
                "cem.elites must satisfy 1 <= K <= N, got K={} N={}",
                self.elites, self.candidates
            )));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::Config(format!(
                "cem.var_floor must be positive, got {}",
                self.variance_floor
            )));
        }
        if self.sigma0.iter().chain(&self.mu0).any(|v| !v.is_finite())
            || self.sigma0.iter().any(|&s| s < 0.0)
        {
            return Err(Error::Config(format!(
                "invalid initial distribution mu0={:?} sigma0={:?}",
                self.mu0, self.sigma0
            )));
        }
        Ok(())
    }

    pub fn initial_distribution(&self) -> Result<SamplingDistribution> {
        SamplingDistribution::new(self.mu0, self.sigma0.map(|s| s * s), self.variance_floor)
    }
}

/// Scores a batch of candidate actions; higher is better. Must return one
/// reward per action, in order, and be deterministic.
pub trait RewardOracle: Sync {
    fn rewards(&self, actions: &[Action]) -> Result<Vec<f64>>;
}

/// `r(a) = -D(apply_action(X, a), Y)` computed exactly.
pub struct ChamferOracle {
    scorer: AlignmentScorer,
    exec: Exec,
}

impl ChamferOracle {
    pub fn new(source: &PointCloud, target: &PointCloud, exec: Exec) -> Self {
        Self {
            scorer: AlignmentScorer::new(source, target),
            exec,
        }
    }
}

impl RewardOracle for ChamferOracle {
    fn rewards(&self, actions: &[Action]) -> Result<Vec<f64>> {
        Ok(self
            .exec
            .map_slice(actions, |a| -self.scorer.chamfer(&a.to_transform())))
    }
}

/// Reward predicted by the learned model: both clouds are encoded once and
/// every candidate is scored in latent space.
pub struct LatentOracle<'m> {
    model: &'m DynamicModel,
    z_source: LatentState,
    z_target: LatentState,
    exec: Exec,
}

impl<'m> LatentOracle<'m> {
    pub fn new(
        model: &'m DynamicModel,
        source: &PointCloud,
        target: &PointCloud,
        exec: Exec,
    ) -> Result<Self> {
        Ok(Self {
            model,
            z_source: model.encode(source)?,
            z_target: model.encode(target)?,
            exec,
        })
    }
}

impl RewardOracle for LatentOracle<'_> {
    fn rewards(&self, actions: &[Action]) -> Result<Vec<f64>> {
        let chunks: Vec<&[Action]> = actions.chunks(LATENT_CHUNK).collect();
        let scored = self.exec.map_slice(&chunks, |c| {
            self.model.rewards_batch(&self.z_source, c, &self.z_target)
        });
        let mut out = Vec::with_capacity(actions.len());
        for s in scored {
            out.extend(s?);
        }
        Ok(out)
    }
}

/// Wraps a per-action reward function.
pub struct FnOracle<F>(pub F);

impl<F> RewardOracle for FnOracle<F>
where
    F: Fn(&Action) -> f64 + Sync,
{
    fn rewards(&self, actions: &[Action]) -> Result<Vec<f64>> {
        Ok(actions.iter().map(&self.0).collect())
    }
}

/// `n` i.i.d. draws from `dist`, angles wrapped into `[-pi, pi]`.
pub fn sample_candidates(dist: &SamplingDistribution, n: usize, seed: u64) -> Vec<Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = dist.std();
    (0..n)
        .map(|_| {
            let mut a = [0.0; 6];
            for j in 0..6 {
                let z: f64 = StandardNormal.sample(&mut rng);
                a[j] = dist.mean[j] + std[j] * z;
            }
            Action::from_array(a).expect("finite sample")
        })
        .collect()
}

/// Indices of the `k` highest rewards, best first; equal rewards are ordered
/// by candidate index.
pub fn select_elites(rewards: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > rewards.len() {
        return Err(Error::Config(format!(
            "cannot select {k} elites from {} candidates",
            rewards.len()
        )));
    }
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Maximum-likelihood diagonal Gaussian of the elites: per-dimension mean and
/// population variance, clamped to `floor`.
pub fn update_distribution(elites: &[Action], floor: f64) -> Result<SamplingDistribution> {
    if elites.is_empty() {
        return Err(Error::InvalidArgument("no elites to fit".into()));
    }
    let k = elites.len() as f64;
    let mut mean = [0.0; 6];
    for e in elites {
        for (m, v) in mean.iter_mut().zip(e.to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut variance = [0.0; 6];
    for e in elites {
        for ((s, v), m) in variance.iter_mut().zip(e.to_array()).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= k);
    SamplingDistribution::new(mean, variance, floor)
}

/// One row of the planning trace: the distribution that generated the
/// iteration's candidates and how they scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub distribution: SamplingDistribution,
    pub best_reward: f64,
    pub best_action: Action,
    pub elite_mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub action: Action,
    pub final_distribution: SamplingDistribution,
    pub trace: Vec<IterationRecord>,
    pub evaluations: usize,
}

/// Runs CEM against `oracle`.
pub fn plan(oracle: &dyn RewardOracle, config: &CemConfig) -> Result<PlanResult> {
    config.validate()?;
    let mut dist = config.initial_distribution()?;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut evaluations = 0;
    for t in 0..config.iterations {
        let mut candidates = sample_candidates(
            &dist,
            config.candidates,
            derive_seed(config.seed, SAMPLE_STREAM, t as u64),
        );
        if config.inject_mean {
            candidates[0] = dist.mean_action();
        }
        let rewards = oracle.rewards(&candidates)?;
        evaluations += candidates.len();
        if rewards.len() != candidates.len() {
            return Err(Error::Contract(format!(
                "oracle returned {} rewards for {} candidates",
                rewards.len(),
                candidates.len()
            )));
        }
        if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
            return Err(Error::Planning {
                iteration: t,
                message: format!("non-finite reward {} for candidate {i}", rewards[i]),
            });
        }
        let elite_idx = select_elites(&rewards, config.elites)?;
        let elites: Vec<Action> = elite_idx.iter().map(|&i| candidates[i]).collect();
        trace.push(IterationRecord {
            iteration: t,
            distribution: dist,
            best_reward: rewards[elite_idx[0]],
            best_action: candidates[elite_idx[0]],
            elite_mean_reward: elite_idx.iter().map(|&i| rewards[i]).sum::<f64>()
                / elite_idx.len() as f64,
        });
        dist = update_distribution(&elites, config.variance_floor)?;
    }
    let action = if config.return_best {
        refine_best(&trace)?
    } else {
        dist.mean_action()
    };
    Ok(PlanResult {
        action,
        final_distribution: dist,
        trace,
        evaluations,
    })
}

/// The best candidate recorded in `trace` (earliest iteration on ties).
pub fn refine_best(trace: &[IterationRecord]) -> Result<Action> {
    let mut best: Option<&IterationRecord> = None;
    for r in trace {
        if best.is_none_or(|b| r.best_reward > b.best_reward) {
            best = Some(r);
        }
    }
    best.map(|r| r.best_action)
        .ok_or_else(|| Error::InvalidArgument("empty planning trace".into()))
}
