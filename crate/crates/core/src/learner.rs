//! Policy-gradient training with and without online tuning of the discount.
//!
//! Each episode of MGPG:
//!
//! 1. roll out `e` under `theta`;
//! 2. `theta' = theta + alpha * sum_k G_k(eta) * grad log pi(a_k|s_k)`;
//! 3. roll out `e'` under `theta'`;
//! 4. meta-gradient `alpha * (sum_k' A_k' x_k') . (sum_k B_k y_k)` where `A` are
//!    the returns of `e'` under the fixed validation discount, `x` the scores of
//!    `e'` under `theta'`, `B_k = dG_k/deta` on `e` and `y` the scores of `e`
//!    under `theta`;
//! 5. step `eta` by `beta` times the meta-gradient and clamp it to its bounds.
//!
//! The dependence of `theta` itself on earlier values of `eta` is decayed by
//! `meta_decay`; at the default of zero only the last update is considered.
//!
//! Vanilla policy gradient is steps 1 and 2 with `eta` fixed.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{rollout, Experience};
use crate::metrics::{EpisodeRecord, RunMetrics};
use crate::policy::{axpy_update, Architecture, GradientVec, PolicyError, PolicyParams};
use crate::rng::{mix, seeded, Stream};
use crate::scenario::{generate_realization, Geometry, Realization, ScenarioError, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("non-finite {quantity} at episode {episode}")]
    NonFinite { episode: usize, quantity: &'static str },
    #[error("invalid learner config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Direction of the discount update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum MetaSign {
    /// `eta - beta * grad`.
    #[default]
    Descend,
    /// `eta + beta * grad`.
    Ascend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(rename_all = "snake_case"))]
pub enum Algorithm {
    #[default]
    Mgpg,
    VanillaPg,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct LearnerConfig {
    /// Policy step size `alpha`.
    pub policy_step: f64,
    /// Discount step size `beta`.
    pub meta_step: f64,
    pub eta_init: f64,
    /// Discount of the validation objective.
    pub eta_tilde: f64,
    /// Decay of the accumulated `d theta / d eta` trace.
    pub meta_decay: f64,
    pub episodes: usize,
    pub eta_bounds: [f64; 2],
    pub meta_sign: MetaSign,
    /// Use `e'` as the next episode's training experience instead of
    /// discarding it.
    pub reuse_validation: bool,
    pub hidden: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            policy_step: 0.01,
            meta_step: 0.001,
            eta_init: 0.9,
            eta_tilde: 1.0,
            meta_decay: 0.0,
            episodes: 1000,
            eta_bounds: [0.01, 0.999],
            meta_sign: MetaSign::Descend,
            reuse_validation: false,
            hidden: crate::policy::DEFAULT_HIDDEN,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let [lo, hi] = self.eta_bounds;
        let fail = LearnerError::Config;
        if !(self.policy_step > 0.0 && self.policy_step.is_finite()) {
            return Err(fail("policy_step must be positive and finite"));
        }
        if !(self.meta_step >= 0.0 && self.meta_step.is_finite()) {
            return Err(fail("meta_step must be nonnegative and finite"));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(fail("eta_bounds must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(lo <= self.eta_init && self.eta_init <= hi) {
            return Err(fail("eta_init must lie within eta_bounds"));
        }
        if !(0.0..=1.0).contains(&self.eta_tilde) {
            return Err(fail("eta_tilde must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.meta_decay) {
            return Err(fail("meta_decay must lie in [0, 1]"));
        }
        if self.hidden == 0 {
            return Err(fail("hidden width must be positive"));
        }
        Ok(())
    }

    fn clamp_eta(&self, eta: f64) -> f64 {
        eta.clamp(self.eta_bounds[0], self.eta_bounds[1])
    }
}

/// Discounted returns `G_k = r_k + eta * G_{k+1}`.
pub fn returns(rewards: &[f64], eta: f64) -> Vec<f64> {
    let mut out = alloc::vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + eta * acc;
        out[k] = acc;
    }
    out
}

/// `dG_k / d eta = sum_{j > k} (j - k) eta^(j-k-1) r_j`, by the recursion
/// `B_k = G_{k+1} + eta * B_{k+1}`.
pub fn returns_eta_derivative(rewards: &[f64], eta: f64) -> Vec<f64> {
    let k_max = rewards.len();
    let mut out = alloc::vec![0.0; k_max];
    let (mut g_next, mut b_next) = (0.0, 0.0);
    for k in (0..k_max).rev() {
        let b = g_next + eta * b_next;
        out[k] = b;
        g_next = rewards[k] + eta * g_next;
        b_next = b;
    }
    out
}

/// `sum_k w_k * grad log pi(a_k|s_k)` for each weight vector, sharing one
/// forward pass per step.
fn weighted_scores(
    experience: &Experience,
    params: &PolicyParams,
    geometry: &Geometry,
    weights: &[&[f64]],
) -> Result<Vec<GradientVec>, PolicyError> {
    let clusters = geometry.num_clusters();
    let arch = params.arch();
    if arch.outputs != clusters + 1 {
        return Err(PolicyError::ClusterMismatch { outputs: arch.outputs, clusters });
    }
    let mut out: Vec<GradientVec> = weights.iter().map(|_| GradientVec::zeros(params.len())).collect();
    for (k, step) in experience.steps.iter().enumerate() {
        if weights.iter().all(|w| w[k] == 0.0) || step.mask.count() == 1 {
            continue;
        }
        let x = crate::policy::encode_state(&step.state, geometry);
        let fwd = params.forward(&x, step.mask);
        let a = step.action.index(clusters);
        for (acc, w) in out.iter_mut().zip(weights) {
            params.accumulate_grad_log_prob(&fwd, a, w[k], acc);
        }
    }
    Ok(out)
}

/// Policy gradient `sum_k G_k(eta) grad log pi(a_k|s_k)` on one experience.
pub fn policy_objective_grad(
    experience: &Experience,
    params: &PolicyParams,
    geometry: &Geometry,
    eta: f64,
) -> Result<GradientVec, PolicyError> {
    let g = returns(&experience.rewards(), eta);
    Ok(weighted_scores(experience, params, geometry, &[&g])?.remove(0))
}

/// `sum_k B_k(eta) grad log pi(a_k|s_k)`, the derivative of the policy
/// gradient with respect to the discount.
pub fn discount_sensitivity(
    experience: &Experience,
    params: &PolicyParams,
    geometry: &Geometry,
    eta: f64,
) -> Result<GradientVec, PolicyError> {
    let b = returns_eta_derivative(&experience.rewards(), eta);
    Ok(weighted_scores(experience, params, geometry, &[&b])?.remove(0))
}

/// Meta-gradient of the undiscounted validation objective on `e'` (under
/// `params_new`) with respect to the discount used to produce `params_new`
/// from `params_old` on `e`.
pub fn meta_grad(
    experience_e: &Experience,
    params_old: &PolicyParams,
    eta: f64,
    experience_e_prime: &Experience,
    params_new: &PolicyParams,
    policy_step: f64,
    geometry: &Geometry,
) -> Result<f64, PolicyError> {
    let u = policy_objective_grad(experience_e_prime, params_new, geometry, 1.0)?;
    let v = discount_sensitivity(experience_e, params_old, geometry, eta)?;
    Ok(policy_step * u.dot(&v))
}

/// Supplies the realization for each training episode.
pub trait RealizationStream {
    fn realization(&mut self, episode: usize) -> &Realization;
}

impl RealizationStream for Realization {
    fn realization(&mut self, _: usize) -> &Realization {
        self
    }
}

impl RealizationStream for &Realization {
    fn realization(&mut self, _: usize) -> &Realization {
        self
    }
}

/// Cycles through a fixed list.
impl RealizationStream for [Realization] {
    fn realization(&mut self, episode: usize) -> &Realization {
        &self[episode % self.len()]
    }
}

impl RealizationStream for Vec<Realization> {
    fn realization(&mut self, episode: usize) -> &Realization {
        self.as_mut_slice().realization(episode)
    }
}

impl<S: RealizationStream + ?Sized> RealizationStream for &mut S {
    fn realization(&mut self, episode: usize) -> &Realization {
        (**self).realization(episode)
    }
}

/// A fresh realization of `spec` every episode, seeded from `(base_seed, episode)`.
pub struct FreshRealizations {
    spec: ScenarioSpec,
    base_seed: u64,
    current: Option<(usize, Realization)>,
}

impl FreshRealizations {
    pub fn new(spec: ScenarioSpec, base_seed: u64) -> Result<Self, ScenarioError> {
        spec.validate()?;
        Ok(FreshRealizations { spec, base_seed, current: None })
    }
}

impl RealizationStream for FreshRealizations {
    fn realization(&mut self, episode: usize) -> &Realization {
        let stale = !matches!(&self.current, Some((e, _)) if *e == episode);
        if stale {
            let r = generate_realization(&self.spec, mix(self.base_seed, episode as u64))
                .expect("spec validated at construction");
            self.current = Some((episode, r));
        }
        &self.current.as_ref().unwrap().1
    }
}

/// Snapshot of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub eta: f64,
    pub episode: usize,
}

/// Episode-at-a-time trainer for either algorithm.
pub struct Trainer {
    algorithm: Algorithm,
    config: LearnerConfig,
    params: PolicyParams,
    eta: f64,
    episode: usize,
    trace: Option<GradientVec>,
    pending: Option<Experience>,
    train_rng: ChaCha8Rng,
    validate_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(algorithm: Algorithm, config: LearnerConfig, clusters: usize, seed: u64) -> Result<Self, LearnerError> {
        let arch = Architecture::for_clusters(clusters, config.hidden);
        Self::with_params(algorithm, config, PolicyParams::init(arch, seed), seed)
    }

    pub fn with_params(
        algorithm: Algorithm,
        config: LearnerConfig,
        params: PolicyParams,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        Ok(Trainer {
            algorithm,
            eta: config.eta_init,
            config,
            params,
            episode: 0,
            trace: None,
            pending: None,
            train_rng: seeded(seed, Stream::Train),
            validate_rng: seeded(seed, Stream::Validate),
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn snapshot(&self) -> TrainState {
        TrainState { params: self.params.clone(), eta: self.eta, episode: self.episode }
    }

    /// Runs one training episode on `realization`.
    pub fn run_episode(&mut self, realization: &Realization) -> Result<EpisodeRecord, LearnerError> {
        let episode = self.episode;
        let geometry = realization.geometry();
        let nonfinite = |quantity| LearnerError::NonFinite { episode, quantity };
        let alpha = self.config.policy_step;
        let eta = self.eta;

        let e = match self.pending.take() {
            Some(e) => e,
            None => rollout(realization, &self.params, &mut self.train_rng),
        };
        let rewards = e.rewards();
        let g_weights = returns(&rewards, eta);

        let record = match self.algorithm {
            Algorithm::VanillaPg => {
                let grad = weighted_scores(&e, &self.params, geometry, &[&g_weights])?.remove(0);
                if !grad.is_finite() {
                    return Err(nonfinite("policy gradient"));
                }
                self.params = axpy_update(&self.params, &grad, alpha).map_err(|_| nonfinite("policy parameters"))?;
                EpisodeRecord {
                    episode,
                    utility_e: e.total_utility,
                    utility_e_prime: None,
                    eta,
                    grad_norm: grad.norm(),
                    meta_grad: None,
                }
            }
            Algorithm::Mgpg => {
                let b_weights = returns_eta_derivative(&rewards, eta);
                let mut both = weighted_scores(&e, &self.params, geometry, &[&g_weights, &b_weights])?;
                let sensitivity = both.pop().unwrap();
                let grad = both.pop().unwrap();
                if !grad.is_finite() {
                    return Err(nonfinite("policy gradient"));
                }
                if !sensitivity.is_finite() {
                    return Err(nonfinite("discount sensitivity"));
                }
                let updated = axpy_update(&self.params, &grad, alpha).map_err(|_| nonfinite("policy parameters"))?;

                let e_prime = rollout(realization, &updated, &mut self.validate_rng);
                let a_weights = returns(&e_prime.rewards(), self.config.eta_tilde);
                let validation = weighted_scores(&e_prime, &updated, geometry, &[&a_weights])?.remove(0);

                let meta = if self.config.meta_decay == 0.0 {
                    alpha * validation.dot(&sensitivity)
                } else {
                    let mut trace = self.trace.take().unwrap_or_else(|| GradientVec::zeros(self.params.len()));
                    for (z, s) in trace.iter_mut().zip(sensitivity.iter()) {
                        *z = self.config.meta_decay * *z + alpha * s;
                    }
                    let m = validation.dot(&trace);
                    self.trace = Some(trace);
                    m
                };
                if !meta.is_finite() {
                    return Err(nonfinite("meta-gradient"));
                }
                let signed = match self.config.meta_sign {
                    MetaSign::Descend => -meta,
                    MetaSign::Ascend => meta,
                };
                self.eta = self.config.clamp_eta(eta + self.config.meta_step * signed);
                self.params = updated;
                let record = EpisodeRecord {
                    episode,
                    utility_e: e.total_utility,
                    utility_e_prime: Some(e_prime.total_utility),
                    eta,
                    grad_norm: grad.norm(),
                    meta_grad: Some(meta),
                };
                if self.config.reuse_validation {
                    self.pending = Some(e_prime);
                }
                record
            }
        };
        self.episode += 1;
        Ok(record)
    }
}

fn train<S: RealizationStream + ?Sized>(
    algorithm: Algorithm,
    stream: &mut S,
    config: &LearnerConfig,
    seed: u64,
) -> Result<(PolicyParams, RunMetrics), LearnerError> {
    let clusters = stream.realization(0).num_clusters();
    let mut trainer = Trainer::new(algorithm, config.clone(), clusters, seed)?;
    let mut records = Vec::with_capacity(config.episodes);
    for i in 0..config.episodes {
        records.push(trainer.run_episode(stream.realization(i))?);
    }
    Ok((trainer.params, RunMetrics::from_records(records)))
}

/// Meta-gradient policy gradient training.
pub fn mgpg_train<S: RealizationStream + ?Sized>(
    stream: &mut S,
    config: &LearnerConfig,
    seed: u64,
) -> Result<(PolicyParams, RunMetrics), LearnerError> {
    train(Algorithm::Mgpg, stream, config, seed)
}

/// Policy gradient with the discount fixed at `eta_init`.
///
/// Its training rollouts come from the same generator stream MGPG uses for
/// `e`; MGPG's `e'` rollouts use a separate stream, so with `meta_step = 0`
/// both produce the same parameter sequence.
pub fn vanilla_pg_train<S: RealizationStream + ?Sized>(
    stream: &mut S,
    config: &LearnerConfig,
    seed: u64,
) -> Result<(PolicyParams, RunMetrics), LearnerError> {
    train(Algorithm::VanillaPg, stream, config, seed)
}
