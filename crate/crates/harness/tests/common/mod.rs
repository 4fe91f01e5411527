#![allow(dead_code)]

use std::path::PathBuf;

use mgpg_core::mdp::Experience;
use mgpg_core::policy::{action_probs, Architecture, PolicyParams};
use mgpg_core::scenario::{ChannelParams, Geometry, Point2, Realization, UserRequest};
use rand::Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Random instance with up to `max_clusters` clusters within 600 m of the
/// origin and up to 16 users requesting in the first half of the horizon.
pub fn small_instance<R: Rng>(rng: &mut R, max_clusters: usize) -> Realization {
    let l = rng.random_range(1..=max_clusters);
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
    Realization::new(geometry, ChannelParams::default(), users, 0).unwrap()
}

pub fn random_params<R: Rng>(arch: Architecture, scale: f64, rng: &mut R) -> PolicyParams {
    let theta = (0..arch.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
    PolicyParams::new(arch, theta).unwrap()
}

pub fn shifted(params: &PolicyParams, i: usize, delta: f64) -> PolicyParams {
    let mut theta = params.as_slice().to_vec();
    theta[i] += delta;
    PolicyParams::new(params.arch(), theta).unwrap()
}

/// `sum_k w_k ln pi(a_k | s_k)` from the forward pass alone.
pub fn weighted_log_likelihood(params: &PolicyParams, geometry: &Geometry, exp: &Experience, w: &[f64]) -> f64 {
    let l = geometry.num_clusters();
    exp.steps
        .iter()
        .zip(w)
        .map(|(s, wk)| {
            let p = action_probs(params, &s.state, geometry, s.mask).unwrap();
            wk * p[s.action.index(l)].ln()
        })
        .sum()
}

/// Discounted returns by the explicit double sum.
pub fn double_sum_returns(r: &[f64], eta: f64) -> Vec<f64> {
    (0..r.len()).map(|k| (k..r.len()).map(|j| eta.powi((j - k) as i32) * r[j]).sum()).collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
