//! Finite-difference checks of the analytic gradients, and the enumeration
//! check of trained policies on small instances.

use mgpg_core::learner::{meta_grad, policy_objective_grad, returns};
use mgpg_core::mdp::{enumerate_optimal, rollout, Experience, Greedy};
use mgpg_core::policy::{action_probs, axpy_update, Architecture};
use mgpg_core::rng::{mix, seeded, Stream};
use mgpg_core::scenario::{ClusterLayout, Geometry, Point2, UserRequest};
use mgpg_core::{
    generate_realization, mgpg_train, ChannelParams, LearnerConfig, PolicyParams, Realization, ScenarioSpec,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const META_TOLERANCE: f64 = 1e-4;
pub const GRAD_FD_STEP: f64 = 1e-6;
pub const META_FD_STEP: f64 = 1e-5;
/// Coordinates checked per configuration.
pub const GRAD_COORDS: usize = 64;
/// Relative errors are taken against `max(|a|, |b|, floor)`.
pub const GRAD_FLOOR: f64 = 1e-3;
pub const META_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckResult {
    pub configs: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random instance with up to four clusters and sixteen users requesting in
/// the first half of the horizon.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Realization {
    let l = rng.random_range(1..=4);
    let mut positions: Vec<Point2> = Vec::new();
    while positions.len() < l {
        let p = Point2::new(rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0));
        if positions.iter().all(|q| q.distance(p) > 1.0) {
            positions.push(p);
        }
    }
    let horizon_s = rng.random_range(100.0..300.0);
    let geometry = Geometry {
        cluster_positions: positions,
        origin: Point2::new(0.0, 0.0),
        altitude_m: 100.0,
        service_radius_m: 20.0,
        speed_mps: 30.0,
        horizon_s,
    };
    let users = (0..rng.random_range(1..=16))
        .map(|id| {
            let r = 20.0 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            UserRequest {
                user_id: id,
                cluster_id: rng.random_range(0..l),
                ground_offset: Point2::new(r * phi.cos(), r * phi.sin()),
                bits: 10f64.powf(rng.random_range(8.0..9.7)),
                request_time_s: rng.random_range(0.0..0.5 * horizon_s),
                fading_gain: rng.random_range(0.3..2.0),
            }
        })
        .collect();
    Realization::new(geometry, ChannelParams::default(), users, 0).expect("valid by construction")
}

fn random_params(arch: Architecture, rng: &mut ChaCha8Rng) -> PolicyParams {
    let theta = (0..arch.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    PolicyParams::new(arch, theta).expect("finite")
}

fn log_likelihood(params: &PolicyParams, geometry: &Geometry, e: &Experience, w: &[f64]) -> f64 {
    let l = geometry.num_clusters();
    e.steps
        .iter()
        .zip(w)
        .map(|(s, wk)| {
            let p = action_probs(params, &s.state, geometry, s.mask).expect("shapes match");
            wk * p[s.action.index(l)].ln()
        })
        .sum()
}

fn nudge(params: &PolicyParams, i: usize, delta: f64) -> PolicyParams {
    let mut theta = params.as_slice().to_vec();
    theta[i] += delta;
    PolicyParams::new(params.arch(), theta).expect("finite")
}

/// Configuration `index` of a check seeded by `seed`; configurations whose
/// gradient vanishes identically are redrawn.
fn policy_config(seed: u64, index: u64) -> f64 {
    let mut rng = seeded(mix(seed, index), Stream::Init);
    loop {
        let r = random_instance(&mut rng);
        let g = r.geometry();
        let params = random_params(Architecture::for_clusters(g.num_clusters(), 32), &mut rng);
        let e = rollout(&r, &params, &mut rng);
        let eta = rng.random_range(0.01..0.999);
        let analytic = policy_objective_grad(&e, &params, g, eta).expect("shapes match");
        if analytic.norm() == 0.0 {
            continue;
        }
        let w = returns(&e.rewards(), eta);
        let mut worst = 0.0f64;
        for _ in 0..GRAD_COORDS {
            let i = rng.random_range(0..params.len());
            let up = log_likelihood(&nudge(&params, i, GRAD_FD_STEP), g, &e, &w);
            let down = log_likelihood(&nudge(&params, i, -GRAD_FD_STEP), g, &e, &w);
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * GRAD_FD_STEP), GRAD_FLOOR));
        }
        return worst;
    }
}

fn meta_config(seed: u64, index: u64) -> f64 {
    let mut rng = seeded(mix(seed, index), Stream::Validate);
    loop {
        let r = random_instance(&mut rng);
        let g = r.geometry();
        let params = random_params(Architecture::for_clusters(g.num_clusters(), 32), &mut rng);
        let e = rollout(&r, &params, &mut rng);
        let eta = rng.random_range(0.05..0.95);
        let alpha = rng.random_range(0.05..0.5);
        let updated = |eta: f64| {
            let grad = policy_objective_grad(&e, &params, g, eta).expect("shapes match");
            axpy_update(&params, &grad, alpha).expect("finite")
        };
        let e_prime = rollout(&r, &updated(eta), &mut rng);
        let analytic = meta_grad(&e, &params, eta, &e_prime, &updated(eta), alpha, g).expect("shapes match");
        if analytic == 0.0 {
            continue;
        }
        let a = returns(&e_prime.rewards(), 1.0);
        let j = |eta: f64| log_likelihood(&updated(eta), g, &e_prime, &a);
        let fd = (j(eta + META_FD_STEP) - j(eta - META_FD_STEP)) / (2.0 * META_FD_STEP);
        return rel_err(analytic, fd, META_FLOOR);
    }
}

pub fn check_policy_gradient(seed: u64, configs: usize) -> CheckResult {
    let max_rel_err = (0..configs as u64).into_par_iter().map(|i| policy_config(seed, i)).reduce(|| 0.0, f64::max);
    CheckResult { configs, max_rel_err, tolerance: GRAD_TOLERANCE }
}

pub fn check_meta_gradient(seed: u64, configs: usize) -> CheckResult {
    let max_rel_err = (0..configs as u64).into_par_iter().map(|i| meta_config(seed, i)).reduce(|| 0.0, f64::max);
    CheckResult { configs, max_rel_err, tolerance: META_TOLERANCE }
}

/// The default scenario restricted to `clusters` clusters.
pub fn desk_scenario(clusters: usize) -> ScenarioSpec {
    ScenarioSpec { clusters: ClusterLayout::Random { count: clusters }, ..ScenarioSpec::default() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub seed: u64,
    pub optimal: f64,
    pub learned: f64,
}

impl OracleRow {
    pub fn within(&self, fraction: f64) -> bool {
        self.learned >= (1.0 - fraction) * self.optimal
    }
}

/// Trains MGPG on one realization of `scenario` for each seed and compares
/// the greedy policy's success rate with the enumerated optimum.
pub fn optimality_check(
    scenario: &ScenarioSpec,
    realization_seed: u64,
    seeds: &[u64],
    config: &LearnerConfig,
) -> Result<Vec<OracleRow>> {
    let r = generate_realization(scenario, realization_seed)?;
    let optimal = enumerate_optimal(&r).map_err(|e| crate::HarnessError::Invalid(e.to_string()))?.utility;
    seeds
        .par_iter()
        .map(|&seed| {
            let (params, _) = mgpg_train(&mut r.clone(), config, seed)?;
            let learned = rollout(&r, &Greedy(&params), &mut seeded(seed, Stream::Eval)).total_utility;
            Ok(OracleRow { seed, optimal, learned })
        })
        .collect()
}
