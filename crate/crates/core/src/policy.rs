//! Softmax policy network and the exact gradient of its log-probabilities.
//!
//! The network is `x -> tanh(W1 x + b1) -> W2 h + b2 -> masked softmax`. The
//! input `x` is a one-hot of the drone's location over `L + 1` slots (origin
//! last) followed by the remaining budget as a fraction of the horizon.
//! Because `|tanh| <= 1`, each logit is bounded by the L1 norm of its row of
//! `W2` plus its bias.
//!
//! Parameters live in one flat vector laid out as `W1` (row-major,
//! `hidden x inputs`), `b1`, `W2` (row-major, `outputs x hidden`), `b2`.

use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::mdp::{Action, ActionMask, Policy, State};
use crate::rng::{seeded, Stream};
use crate::scenario::{Geometry, Realization};

pub const DEFAULT_HIDDEN: usize = 32;
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("shape mismatch: expected {expected} parameters, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("no feasible action")]
    EmptyMask,
    #[error("action {action:?} is masked out")]
    InfeasibleAction { action: Action },
    #[error("network has {outputs} outputs but the scenario has {clusters} clusters")]
    ClusterMismatch { outputs: usize, clusters: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Architecture {
    pub fn for_clusters(clusters: usize, hidden: usize) -> Self {
        Architecture { inputs: clusters + 2, hidden, outputs: clusters + 1 }
    }

    pub fn clusters(&self) -> usize {
        self.outputs - 1
    }

    pub fn num_params(&self) -> usize {
        (self.inputs + 1) * self.hidden + (self.hidden + 1) * self.outputs
    }

    fn b1(&self) -> usize {
        self.hidden * self.inputs
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    fn b2(&self) -> usize {
        self.w2() + self.outputs * self.hidden
    }
}

/// Flat parameter vector of the policy network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    theta: Vec<f64>,
}

/// A direction in parameter space, same length as the parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradientVec(pub Vec<f64>);

impl GradientVec {
    pub fn zeros(len: usize) -> Self {
        GradientVec(alloc::vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.0)
    }

    pub fn dot(&self, other: &GradientVec) -> f64 {
        math::dot(&self.0, &other.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &GradientVec, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}

impl Deref for GradientVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradientVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Network input for `state`: location one-hot (origin last) and `tau / T`.
pub fn encode_state(state: &State, geometry: &Geometry) -> Vec<f64> {
    let l = geometry.num_clusters();
    let mut x = alloc::vec![0.0; l + 2];
    encode_into(state, geometry, &mut x);
    x
}

fn encode_into(state: &State, geometry: &Geometry, x: &mut [f64]) {
    let l = geometry.num_clusters();
    x.fill(0.0);
    x[state.location.index(l)] = 1.0;
    x[l + 1] = (state.remaining_budget_s / geometry.horizon_s).clamp(0.0, 1.0);
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub mask: ActionMask,
}

impl PolicyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self, PolicyError> {
        if theta.len() != arch.num_params() {
            return Err(PolicyError::ShapeMismatch { expected: arch.num_params(), got: theta.len() });
        }
        if let Some(index) = theta.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite { index });
        }
        Ok(PolicyParams { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Self {
        PolicyParams { arch, theta: alloc::vec![0.0; arch.num_params()] }
    }

    /// Weights uniform in `[-0.05, 0.05]`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = seeded(seed, Stream::Init);
        let mut p = Self::zeros(arch);
        let (b1, w2, b2) = (arch.b1(), arch.w2(), arch.b2());
        for (i, v) in p.theta.iter_mut().enumerate() {
            let is_weight = i < b1 || (w2..b2).contains(&i);
            if is_weight {
                *v = INIT_SCALE * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        p
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.theta
    }

    /// Upper bound on `|logit_j|` over all inputs.
    pub fn logit_bound(&self, output: usize) -> f64 {
        let a = self.arch;
        let row = &self.theta[a.w2() + output * a.hidden..a.w2() + (output + 1) * a.hidden];
        row.iter().map(|w| w.abs()).sum::<f64>() + self.theta[a.b2() + output].abs()
    }

    pub fn forward(&self, input: &[f64], mask: ActionMask) -> Forward {
        let a = self.arch;
        debug_assert_eq!(input.len(), a.inputs);
        let th = &self.theta;
        let mut hidden = alloc::vec![0.0; a.hidden];
        for (k, h) in hidden.iter_mut().enumerate() {
            let row = &th[k * a.inputs..(k + 1) * a.inputs];
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + th[a.b1() + k];
            *h = math::tanh(z);
        }
        let mut logits = alloc::vec![0.0; a.outputs];
        for (j, o) in logits.iter_mut().enumerate() {
            let row = &th[a.w2() + j * a.hidden..a.w2() + (j + 1) * a.hidden];
            *o = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + th[a.b2() + j];
        }
        let probs = masked_softmax(&logits, mask);
        Forward { input: input.to_vec(), hidden, logits, probs, mask }
    }

    /// `out += weight * d log pi(action) / d theta` for the pass in `fwd`.
    pub fn accumulate_grad_log_prob(&self, fwd: &Forward, action: usize, weight: f64, out: &mut [f64]) {
        let a = self.arch;
        debug_assert_eq!(out.len(), a.num_params());
        if weight == 0.0 {
            return;
        }
        let th = &self.theta;
        // d log softmax_a / d logit_j = [j == a] - p_j on the feasible set
        let mut dlogit = alloc::vec![0.0; a.outputs];
        for j in fwd.mask.iter() {
            let indicator = if j == action { 1.0 } else { 0.0 };
            dlogit[j] = weight * (indicator - fwd.probs[j]);
        }
        let mut dhidden = alloc::vec![0.0; a.hidden];
        for j in fwd.mask.iter() {
            let g = dlogit[j];
            out[a.b2() + j] += g;
            let w2 = a.w2() + j * a.hidden;
            for k in 0..a.hidden {
                out[w2 + k] += g * fwd.hidden[k];
                dhidden[k] += g * th[w2 + k];
            }
        }
        for k in 0..a.hidden {
            let h = fwd.hidden[k];
            let dz = dhidden[k] * (1.0 - h * h);
            out[a.b1() + k] += dz;
            let w1 = k * a.inputs;
            for (i, &x) in fwd.input.iter().enumerate() {
                if x != 0.0 {
                    out[w1 + i] += dz * x;
                }
            }
        }
    }

    fn check_clusters(&self, geometry: &Geometry) -> Result<(), PolicyError> {
        let clusters = geometry.num_clusters();
        if self.arch.outputs != clusters + 1 || self.arch.inputs != clusters + 2 {
            return Err(PolicyError::ClusterMismatch { outputs: self.arch.outputs, clusters });
        }
        Ok(())
    }
}

/// Softmax over the entries in `mask`; masked entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: ActionMask) -> Vec<f64> {
    let mut probs = alloc::vec![0.0; logits.len()];
    let max = mask.iter().map(|j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for j in mask.iter() {
        let e = math::exp(logits[j] - max);
        probs[j] = e;
        total += e;
    }
    for j in mask.iter() {
        probs[j] /= total;
    }
    probs
}

/// Action probabilities at `state` with infeasible actions masked out.
pub fn action_probs(
    params: &PolicyParams,
    state: &State,
    geometry: &Geometry,
    mask: ActionMask,
) -> Result<Vec<f64>, PolicyError> {
    params.check_clusters(geometry)?;
    if mask.is_empty() {
        return Err(PolicyError::EmptyMask);
    }
    Ok(params.forward(&encode_state(state, geometry), mask).probs)
}

/// Exact gradient of `ln pi(action | state)` with respect to the parameters.
pub fn grad_log_prob(
    params: &PolicyParams,
    state: &State,
    geometry: &Geometry,
    mask: ActionMask,
    action: Action,
) -> Result<GradientVec, PolicyError> {
    params.check_clusters(geometry)?;
    let a = action.index(geometry.num_clusters());
    if !mask.contains(a) {
        return Err(PolicyError::InfeasibleAction { action });
    }
    let fwd = params.forward(&encode_state(state, geometry), mask);
    let mut g = GradientVec::zeros(params.len());
    params.accumulate_grad_log_prob(&fwd, a, 1.0, &mut g);
    Ok(g)
}

/// `params + step * direction`, as a new value.
pub fn axpy_update(params: &PolicyParams, direction: &GradientVec, step: f64) -> Result<PolicyParams, PolicyError> {
    if direction.len() != params.len() {
        return Err(PolicyError::ShapeMismatch { expected: params.len(), got: direction.len() });
    }
    let theta = params.theta.iter().zip(direction.iter()).map(|(t, d)| t + step * d).collect();
    PolicyParams::new(params.arch, theta)
}

impl Policy for PolicyParams {
    fn probabilities(&self, realization: &Realization, state: &State, mask: ActionMask, out: &mut [f64]) {
        let g = realization.geometry();
        assert!(self.check_clusters(g).is_ok(), "policy architecture does not match the scenario");
        let mut x = alloc::vec![0.0; self.arch.inputs];
        encode_into(state, g, &mut x);
        let fwd = self.forward(&x, mask);
        out.copy_from_slice(&fwd.probs);
    }
}
