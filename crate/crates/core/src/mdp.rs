//! A realization viewed as an episodic decision process.
//!
//! The agent observes its location and remaining time budget and picks the
//! next cluster to fly to, or [`Action::Return`] to head home. Actions that
//! would make it impossible to get back to the origin within the horizon are
//! masked out, so every episode respects the time budget by construction.
//! Flying to the cluster the drone is already over is not an action; revisits
//! after going elsewhere are allowed and simply earn nothing if everyone there
//! has been served.

use alloc::vec::Vec;

use rand::Rng;
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::scenario::Location;
use crate::scenario::{serve_cluster, Realization, ServedSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("action {action:?} is not feasible in the current state")]
    Infeasible { action: Action },
    #[error("episode already terminated")]
    Terminated,
    #[error("exhaustive search needs at most {max} clusters, got {clusters}")]
    TooManyClusters { clusters: usize, max: usize },
    #[error("exhaustive search gave up after {explored} nodes (limit {limit})")]
    TooLarge { explored: u64, limit: u64 },
}

/// What the policy observes.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct State {
    pub location: Location,
    pub remaining_budget_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Action {
    Visit(usize),
    Return,
}

impl Action {
    /// Output slot in a policy over `L + 1` actions, `Return` last.
    pub fn index(self, clusters: usize) -> usize {
        match self {
            Action::Visit(l) => l,
            Action::Return => clusters,
        }
    }

    pub fn from_index(index: usize, clusters: usize) -> Self {
        if index >= clusters {
            Action::Return
        } else {
            Action::Visit(index)
        }
    }
}

/// Bit set over the `L + 1` action slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct ActionMask(pub u64);

impl ActionMask {
    pub fn only(index: usize) -> Self {
        ActionMask(1 << index)
    }

    pub fn all(actions: usize) -> Self {
        if actions >= 64 {
            ActionMask(u64::MAX)
        } else {
            ActionMask((1u64 << actions) - 1)
        }
    }

    pub fn insert(&mut self, index: usize) {
        self.0 |= 1 << index;
    }

    pub fn remove(&mut self, index: usize) {
        self.0 &= !(1 << index);
    }

    pub fn contains(self, index: usize) -> bool {
        index < 64 && self.0 >> index & 1 == 1
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        core::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }
}

/// One decision of an episode.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Step {
    pub state: State,
    pub action: Action,
    /// Feasible actions at `state`; gradients are taken through this mask.
    pub mask: ActionMask,
    pub reward: f64,
    /// `ln pi(action | state)` under the policy that generated the step.
    pub log_prob: f64,
}

/// An episode trace.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Experience {
    pub steps: Vec<Step>,
    /// Sum of rewards, equal to the success rate of the flown trajectory.
    pub total_utility: f64,
}

impl Experience {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Visited clusters in order.
    pub fn trajectory(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter_map(|s| match s.action {
                Action::Visit(l) => Some(l),
                Action::Return => None,
            })
            .collect()
    }
}

/// Full simulator state: the observation plus who has been served.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub location: Location,
    /// Time since take-off. The observation's budget is `T - elapsed_s`.
    pub elapsed_s: f64,
    pub served: ServedSet,
    pub done: bool,
}

impl EnvState {
    pub fn start(realization: &Realization) -> Self {
        EnvState {
            location: Location::Origin,
            elapsed_s: 0.0,
            served: ServedSet::new(realization.users().len()),
            done: false,
        }
    }

    /// Starts at `location` with `remaining_budget_s` left and nobody served.
    pub fn at(realization: &Realization, location: Location, remaining_budget_s: f64) -> Self {
        EnvState {
            location,
            elapsed_s: realization.horizon() - remaining_budget_s,
            served: ServedSet::new(realization.users().len()),
            done: false,
        }
    }

    pub fn observe(&self, realization: &Realization) -> State {
        State { location: self.location, remaining_budget_s: (realization.horizon() - self.elapsed_s).max(0.0) }
    }
}

/// Epoch at which the drone would be back home after serving `cluster` next.
fn home_after(realization: &Realization, env: &EnvState, cluster: usize) -> (f64, f64) {
    let to = Location::Cluster(cluster);
    let arrival = env.elapsed_s + realization.leg_time(env.location, to);
    let hover = serve_cluster(realization, cluster, arrival, &env.served).hover_s;
    let departure = arrival + hover;
    (departure, departure + realization.leg_time(to, Location::Origin))
}

/// Clusters reachable with enough time left to serve them and fly home, plus
/// `Return`, which is always feasible.
pub fn feasible_actions(realization: &Realization, env: &EnvState) -> ActionMask {
    let l = realization.num_clusters();
    let mut mask = ActionMask::only(l);
    if env.done {
        return mask;
    }
    let horizon = realization.horizon();
    for c in 0..l {
        if env.location == Location::Cluster(c) {
            continue;
        }
        if home_after(realization, env, c).1 <= horizon {
            mask.insert(c);
        }
    }
    mask
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: EnvState,
    pub reward: f64,
    pub served: Vec<usize>,
}

/// Applies `action`. Infeasible actions are a caller error.
pub fn step(realization: &Realization, env: &EnvState, action: Action) -> Result<Transition, MdpError> {
    if env.done {
        return Err(MdpError::Terminated);
    }
    let l = realization.num_clusters();
    if !feasible_actions(realization, env).contains(action.index(l)) {
        return Err(MdpError::Infeasible { action });
    }
    let mut next = env.clone();
    match action {
        Action::Return => {
            next.elapsed_s = env.elapsed_s + realization.leg_time(env.location, Location::Origin);
            next.location = Location::Origin;
            next.done = true;
            Ok(Transition { next, reward: 0.0, served: Vec::new() })
        }
        Action::Visit(c) => {
            let to = Location::Cluster(c);
            let arrival = env.elapsed_s + realization.leg_time(env.location, to);
            let service = serve_cluster(realization, c, arrival, &env.served);
            for &u in &service.served {
                next.served.insert(u);
            }
            next.elapsed_s = arrival + service.hover_s;
            next.location = to;
            let denom = realization.requesting_users();
            let reward = if denom == 0 { 0.0 } else { service.served.len() as f64 / denom as f64 };
            Ok(Transition { next, reward, served: service.served })
        }
    }
}

/// A stochastic policy over the `L + 1` action slots.
pub trait Policy {
    /// Writes action probabilities into `out` (length `L + 1`). Entries outside
    /// `mask` must be zero and the rest must sum to one.
    fn probabilities(&self, realization: &Realization, state: &State, mask: ActionMask, out: &mut [f64]);
}

impl<P: Policy + ?Sized> Policy for &P {
    fn probabilities(&self, realization: &Realization, state: &State, mask: ActionMask, out: &mut [f64]) {
        (**self).probabilities(realization, state, mask, out)
    }
}

/// Uniform over the feasible actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn probabilities(&self, _: &Realization, _: &State, mask: ActionMask, out: &mut [f64]) {
        let p = 1.0 / mask.count() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = if mask.contains(i) { p } else { 0.0 };
        }
    }
}

/// Puts all mass on the most probable action of the wrapped policy (lowest
/// index on ties).
#[derive(Clone, Copy, Debug)]
pub struct Greedy<P>(pub P);

impl<P: Policy> Policy for Greedy<P> {
    fn probabilities(&self, realization: &Realization, state: &State, mask: ActionMask, out: &mut [f64]) {
        self.0.probabilities(realization, state, mask, out);
        let mut best = None;
        for i in mask.iter() {
            match best {
                Some(b) if out[b] >= out[i] => {}
                _ => best = Some(i),
            }
        }
        let best = best.expect("mask always holds Return");
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i == best { 1.0 } else { 0.0 };
        }
    }
}

fn sample<R: Rng + ?Sized>(probs: &[f64], mask: ActionMask, rng: &mut R) -> usize {
    let mut last = None;
    if mask.count() == 1 {
        return mask.iter().next().unwrap_or(probs.len() - 1);
    }
    let total: f64 = mask.iter().map(|i| probs[i]).sum();
    let mut u = rng.random::<f64>() * total;
    for i in mask.iter() {
        if probs[i] <= 0.0 {
            continue;
        }
        last = Some(i);
        u -= probs[i];
        if u < 0.0 {
            return i;
        }
    }
    last.unwrap_or_else(|| mask.iter().last().unwrap())
}

/// Samples an episode from `policy`, ending with `Return` (taken voluntarily,
/// or forced once no cluster is feasible).
pub fn rollout<P, R>(realization: &Realization, policy: &P, rng: &mut R) -> Experience
where
    P: Policy + ?Sized,
    R: Rng + ?Sized,
{
    let l = realization.num_clusters();
    let mut env = EnvState::start(realization);
    let mut probs = alloc::vec![0.0; l + 1];
    let mut steps = Vec::new();
    let mut total = 0.0;
    while !env.done {
        let state = env.observe(realization);
        let mask = feasible_actions(realization, &env);
        policy.probabilities(realization, &state, mask, &mut probs);
        let a = sample(&probs, mask, rng);
        let action = Action::from_index(a, l);
        let t = step(realization, &env, action).expect("sampled action is feasible");
        total += t.reward;
        steps.push(Step { state, action, mask, reward: t.reward, log_prob: crate::math::ln(probs[a]) });
        env = t.next;
    }
    Experience { steps, total_utility: total }
}

/// Best trajectory found by [`enumerate_optimal`].
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub trajectory: Vec<usize>,
    pub utility: f64,
    pub served: usize,
    /// Search nodes expanded.
    pub explored: u64,
}

pub const ENUMERATION_MAX_CLUSTERS: usize = 6;
pub const ENUMERATION_NODE_LIMIT: u64 = 10_000_000;

/// Exact maximizer of the success rate over all feasible trajectories, by
/// depth-first search with an admissible bound (users that could still be
/// reached before their last feasible arrival epoch).
pub fn enumerate_optimal(realization: &Realization) -> Result<Optimum, MdpError> {
    enumerate_optimal_with_limit(realization, ENUMERATION_NODE_LIMIT)
}

pub fn enumerate_optimal_with_limit(realization: &Realization, limit: u64) -> Result<Optimum, MdpError> {
    let l = realization.num_clusters();
    if l > ENUMERATION_MAX_CLUSTERS {
        return Err(MdpError::TooManyClusters { clusters: l, max: ENUMERATION_MAX_CLUSTERS });
    }
    let horizon = realization.horizon();
    // a user can only ever be served if it requests before the latest arrival
    // epoch that still allows flying home from its cluster
    let reachable: Vec<bool> = realization
        .users()
        .iter()
        .map(|u| {
            let back = realization.leg_time(Location::Cluster(u.cluster_id), Location::Origin);
            u.request_time_s + back <= horizon
        })
        .collect();

    struct Search<'a> {
        realization: &'a Realization,
        reachable: Vec<bool>,
        path: Vec<usize>,
        best_path: Vec<usize>,
        best: usize,
        explored: u64,
        limit: u64,
    }

    impl Search<'_> {
        fn bound(&self, env: &EnvState) -> usize {
            let open = (0..self.reachable.len()).filter(|&u| self.reachable[u] && !env.served.contains(u)).count();
            env.served.len() + open
        }

        fn visit(&mut self, env: &EnvState) -> Result<(), MdpError> {
            self.explored += 1;
            if self.explored > self.limit {
                return Err(MdpError::TooLarge { explored: self.explored, limit: self.limit });
            }
            if env.served.len() > self.best {
                self.best = env.served.len();
                self.best_path = self.path.clone();
            }
            let l = self.realization.num_clusters();
            let mask = feasible_actions(self.realization, env);
            for c in mask.iter().filter(|&c| c < l) {
                if self.bound(env) <= self.best {
                    return Ok(());
                }
                let t = step(self.realization, env, Action::Visit(c))?;
                self.path.push(c);
                self.visit(&t.next)?;
                self.path.pop();
            }
            Ok(())
        }
    }

    let mut search =
        Search { realization, reachable, path: Vec::new(), best_path: Vec::new(), best: 0, explored: 0, limit };
    search.visit(&EnvState::start(realization))?;
    let denom = realization.requesting_users();
    let utility = if denom == 0 { 0.0 } else { search.best as f64 / denom as f64 };
    Ok(Optimum { trajectory: search.best_path, utility, served: search.best, explored: search.explored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};
    use crate::scenario::fixtures::*;
    use crate::scenario::{success_rate, trajectory_time, Geometry, Point2};
    use alloc::vec;

    struct AlwaysReturn;
    impl Policy for AlwaysReturn {
        fn probabilities(&self, r: &Realization, _: &State, _: ActionMask, out: &mut [f64]) {
            out.fill(0.0);
            out[r.num_clusters()] = 1.0;
        }
    }

    /// Flies the listed clusters in order while feasible, then returns.
    struct FixedRoute(Vec<usize>);
    impl Policy for FixedRoute {
        fn probabilities(&self, r: &Realization, s: &State, mask: ActionMask, out: &mut [f64]) {
            out.fill(0.0);
            let visited = (r.horizon() - s.remaining_budget_s) > 0.0;
            // position in route inferred from location: the route is never repeated here
            let next = match s.location {
                Location::Origin if !visited => self.0.first().copied(),
                Location::Cluster(c) => {
                    let i = self.0.iter().position(|&x| x == c).unwrap();
                    self.0.get(i + 1).copied()
                }
                _ => None,
            };
            match next {
                Some(c) if mask.contains(c) => out[c] = 1.0,
                _ => out[r.num_clusters()] = 1.0,
            }
        }
    }

    #[test]
    fn no_budget_only_return() {
        let r = simple();
        let env = EnvState::at(&r, Location::Cluster(0), 0.0);
        assert_eq!(feasible_actions(&r, &env), ActionMask::only(2));
    }

    #[test]
    fn generous_budget_all_clusters() {
        let r = simple();
        let mask = feasible_actions(&r, &EnvState::start(&r));
        assert_eq!(mask, ActionMask::all(3));
    }

    #[test]
    fn exact_budget_is_feasible() {
        let g = line_geometry(&[300.0, 900.0], 1000.0);
        let c = crate::scenario::ChannelParams::default();
        let bits = bits_for_delay(&g, &c, 10.0);
        let users = vec![user(0, 0, 0.0, bits), user(1, 1, 0.0, bits)];
        let probe = realization(g.clone(), users.clone());
        let leg = probe.leg_time(Location::Origin, Location::Cluster(1));
        let hover = crate::scenario::hover_time(&probe, 1, leg, &ServedSet::new(2)).unwrap();
        let exact = (0.0 + leg + hover) + leg;
        let mut tight = g.clone();
        tight.horizon_s = exact;
        let r = realization(tight.clone(), users.clone());
        assert!(feasible_actions(&r, &EnvState::start(&r)).contains(1));
        tight.horizon_s = exact * (1.0 - 1e-12);
        let r = realization(tight, users);
        assert!(!feasible_actions(&r, &EnvState::start(&r)).contains(1));
        assert!(feasible_actions(&r, &EnvState::start(&r)).contains(0));
    }

    #[test]
    fn return_step_is_terminal() {
        let r = simple();
        let env = EnvState::start(&r);
        let t = step(&r, &env, Action::Visit(0)).unwrap();
        let back = step(&r, &t.next, Action::Return).unwrap();
        assert_eq!(back.reward, 0.0);
        assert!(back.next.done);
        assert_eq!(step(&r, &back.next, Action::Return), Err(MdpError::Terminated));
    }

    #[test]
    fn reward_counts_new_service() {
        let g = line_geometry(&[300.0, 600.0], 400.0);
        let mut users: Vec<_> = (0..5).map(|i| user(i, 0, 0.0, 1e6)).collect();
        users.extend((5..50).map(|i| user(i, 1, 0.0, 1e6)));
        let r = realization(g, users);
        let env = EnvState::start(&r);
        let t = step(&r, &env, Action::Visit(0)).unwrap();
        assert!((t.reward - 0.1).abs() < 1e-15);
        assert_eq!(t.served.len(), 5);
        let t2 = step(&r, &t.next, Action::Visit(1)).unwrap();
        let t3 = step(&r, &t2.next, Action::Visit(0)).unwrap();
        assert_eq!(t3.reward, 0.0);
        assert!(t3.next.elapsed_s > t2.next.elapsed_s);
    }

    #[test]
    fn infeasible_action_rejected() {
        let r = simple();
        let env = EnvState::at(&r, Location::Cluster(0), 1.0);
        assert_eq!(step(&r, &env, Action::Visit(1)), Err(MdpError::Infeasible { action: Action::Visit(1) }));
        // staying put is not an action
        let env = EnvState::at(&r, Location::Cluster(0), 300.0);
        assert!(step(&r, &env, Action::Visit(0)).is_err());
    }

    #[test]
    fn always_return_gives_single_step() {
        let r = simple();
        let e = rollout(&r, &AlwaysReturn, &mut seeded(0, Stream::Train));
        assert_eq!(e.len(), 1);
        assert_eq!(e.total_utility, 0.0);
        assert_eq!(e.steps[0].action, Action::Return);
    }

    #[test]
    fn deterministic_route_matches_scenario_success() {
        let r = simple();
        let e = rollout(&r, &FixedRoute(vec![1, 0]), &mut seeded(0, Stream::Train));
        assert_eq!(e.trajectory(), vec![1, 0]);
        let sr = success_rate(&r, &[1, 0]).unwrap();
        assert!((e.total_utility - sr).abs() < 1e-12);
        assert!(e.steps.iter().all(|s| s.log_prob == 0.0));
    }

    #[test]
    fn uniform_rollouts_respect_horizon() {
        let r = simple();
        let mut rng = seeded(1, Stream::Train);
        for _ in 0..200 {
            let e = rollout(&r, &UniformPolicy, &mut rng);
            assert_eq!(e.steps.last().unwrap().action, Action::Return);
            let t0 = trajectory_time(&r, &e.trajectory()).unwrap();
            assert!(t0 <= r.horizon() * (1.0 + 1e-12));
            let tl = crate::scenario::timeline(&r, &e.trajectory()).unwrap();
            assert!(tl.return_s <= r.horizon());
        }
    }

    #[test]
    fn greedy_picks_argmax() {
        let r = simple();
        struct Skewed;
        impl Policy for Skewed {
            fn probabilities(&self, _: &Realization, _: &State, _: ActionMask, out: &mut [f64]) {
                out.copy_from_slice(&[0.2, 0.5, 0.3]);
            }
        }
        let mut out = [0.0; 3];
        let s = EnvState::start(&r).observe(&r);
        Greedy(Skewed).probabilities(&r, &s, ActionMask::all(3), &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0]);
        Greedy(Skewed).probabilities(&r, &s, ActionMask(0b101), &mut out);
        assert_eq!(out, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn mask_iteration() {
        let m = ActionMask(0b1011);
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![0, 1, 3]);
        assert_eq!(m.count(), 3);
        assert!(!m.contains(2));
    }

    #[test]
    fn optimum_single_cluster() {
        let g = line_geometry(&[300.0], 400.0);
        let r = realization(g, vec![user(0, 0, 0.0, 1e6), user(1, 0, 0.0, 1e6)]);
        let o = enumerate_optimal(&r).unwrap();
        assert_eq!(o.trajectory, vec![0]);
        assert_eq!(o.utility, 1.0);
    }

    #[test]
    fn optimum_prefers_heavier_cluster_when_only_one_fits() {
        // clusters on opposite sides; budget fits one round trip only
        let g = line_geometry(&[300.0, -300.0], 25.0);
        let users = vec![user(0, 0, 0.0, 1e6), user(1, 1, 0.0, 1e6), user(2, 1, 0.0, 1e6)];
        let r = realization(g, users);
        let o = enumerate_optimal(&r).unwrap();
        assert_eq!(o.trajectory, vec![1]);
        assert!((o.utility - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn optimum_finds_only_feasible_order() {
        // O=(0,0), A=(300,0), B=(300,400): the closed tour takes 40 s either way.
        // A holds a heavy user that only becomes active at 20 s, so arriving at
        // A late (B first, at 30 s) forces a long hover that blows the budget.
        let g = Geometry {
            cluster_positions: vec![Point2::new(300.0, 0.0), Point2::new(300.0, 400.0)],
            ..line_geometry(&[0.0], 41.0)
        };
        let c = crate::scenario::ChannelParams::default();
        let heavy = bits_for_delay(&g, &c, 20.0);
        let users = vec![user(0, 0, 0.0, 1e6), user(1, 0, 20.0, heavy), user(2, 1, 0.0, 1e6)];
        let r = realization(g, users);
        assert!(crate::scenario::timeline(&r, &[1, 0]).unwrap().return_s > 41.0);
        assert!(crate::scenario::timeline(&r, &[0, 1]).unwrap().return_s <= 41.0);
        let o = enumerate_optimal(&r).unwrap();
        assert_eq!(o.trajectory, vec![0, 1]);
        assert!((o.utility - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_guards_size() {
        let r = simple();
        assert!(matches!(enumerate_optimal_with_limit(&r, 3), Err(MdpError::TooLarge { limit: 3, .. })));
    }
}
