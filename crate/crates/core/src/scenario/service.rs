//! Hover time, trajectory timing and the service success rate.
//!
//! A visit's active set is fixed at the arrival epoch: the unserved users of
//! the cluster whose request time is at or before arrival. At most
//! `num_rbs` of them (earliest requesters first) get a resource block and are
//! served; the hover lasts until the slowest of those finishes, minus the
//! straight pass through the service area.

use alloc::vec::Vec;

use super::{Location, Realization, ScenarioError};

/// Which users have already been served in the current trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ServedSet {
    flags: Vec<bool>,
    count: usize,
}

impl ServedSet {
    pub fn new(users: usize) -> Self {
        ServedSet { flags: alloc::vec![false; users], count: 0 }
    }

    pub fn contains(&self, user: usize) -> bool {
        self.flags[user]
    }

    pub fn insert(&mut self, user: usize) -> bool {
        let fresh = !self.flags[user];
        if fresh {
            self.flags[user] = true;
            self.count += 1;
        }
        fresh
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Outcome of serving one cluster at a given arrival epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterService {
    pub hover_s: f64,
    /// Users allocated a resource block, earliest requester first.
    pub served: Vec<usize>,
}

/// Serves `cluster` on arrival at `arrival_s` without mutating `served`.
pub fn serve_cluster(realization: &Realization, cluster: usize, arrival_s: f64, served: &ServedSet) -> ClusterService {
    let cap = realization.channel().num_rbs;
    let mut out = Vec::new();
    let mut slowest = 0.0f64;
    for &u in realization.cluster_members(cluster) {
        let user = &realization.users()[u];
        if user.request_time_s > arrival_s {
            // members are sorted by request time
            break;
        }
        if served.contains(u) {
            continue;
        }
        out.push(u);
        slowest = slowest.max(realization.delay(u));
        if out.len() == cap {
            break;
        }
    }
    let hover_s = if out.is_empty() { 0.0 } else { (slowest - realization.geometry().traverse_s()).max(0.0) };
    ClusterService { hover_s, served: out }
}

/// Hover time over `cluster` for a drone arriving at `arrival_s`, given the
/// users already served.
pub fn hover_time(
    realization: &Realization,
    cluster: usize,
    arrival_s: f64,
    served: &ServedSet,
) -> Result<f64, ScenarioError> {
    let clusters = realization.num_clusters();
    if cluster >= clusters {
        return Err(ScenarioError::InvalidCluster { cluster, clusters });
    }
    Ok(serve_cluster(realization, cluster, arrival_s, served).hover_s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Visit {
    pub cluster: usize,
    pub arrival_s: f64,
    pub hover_s: f64,
    pub departure_s: f64,
    /// Remaining time to return to the origin after serving this cluster.
    pub remaining_budget_s: f64,
    pub served: Vec<usize>,
}

/// A trajectory replayed against a realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    pub visits: Vec<Visit>,
    /// Epoch at which the drone is back at the origin.
    pub return_s: f64,
    pub served_total: usize,
}

/// Replays `trajectory` (cluster ids, origin implicit at both ends) by
/// forward accumulation of elapsed time. This is the same arithmetic the
/// decision process uses for its feasibility test.
pub fn timeline(realization: &Realization, trajectory: &[usize]) -> Result<Timeline, ScenarioError> {
    let clusters = realization.num_clusters();
    let horizon = realization.horizon();
    let mut served = ServedSet::new(realization.users().len());
    let mut at = Location::Origin;
    let mut t = 0.0;
    let mut visits = Vec::with_capacity(trajectory.len());
    for &cluster in trajectory {
        if cluster >= clusters {
            return Err(ScenarioError::InvalidCluster { cluster, clusters });
        }
        let arrival_s = t + realization.leg_time(at, Location::Cluster(cluster));
        let service = serve_cluster(realization, cluster, arrival_s, &served);
        for &u in &service.served {
            served.insert(u);
        }
        t = arrival_s + service.hover_s;
        visits.push(Visit {
            cluster,
            arrival_s,
            hover_s: service.hover_s,
            departure_s: t,
            remaining_budget_s: horizon - t,
            served: service.served,
        });
        at = Location::Cluster(cluster);
    }
    let return_s = t + realization.leg_time(at, Location::Origin);
    Ok(Timeline { visits, return_s, served_total: served.len() })
}

/// Total mission time: all straight legs (origin out, between clusters, back
/// to origin) plus all hover times, summed separately.
pub fn trajectory_time(realization: &Realization, trajectory: &[usize]) -> Result<f64, ScenarioError> {
    let tl = timeline(realization, trajectory)?;
    let mut legs = 0.0;
    let mut at = Location::Origin;
    for &c in trajectory {
        legs += realization.leg_time(at, Location::Cluster(c));
        at = Location::Cluster(c);
    }
    legs += realization.leg_time(at, Location::Origin);
    let hovers: f64 = tl.visits.iter().map(|v| v.hover_s).sum();
    Ok(legs + hovers)
}

/// Remaining budgets `tau_k` by the subtractive recursion
/// `tau_k = tau_{k-1} - leg_k - hover_k`, `tau_0 = T`.
pub fn remaining_budgets(realization: &Realization, trajectory: &[usize]) -> Result<Vec<f64>, ScenarioError> {
    let tl = timeline(realization, trajectory)?;
    let mut tau = realization.horizon();
    let mut at = Location::Origin;
    let mut out = Vec::with_capacity(trajectory.len());
    for v in &tl.visits {
        tau -= realization.leg_time(at, Location::Cluster(v.cluster));
        tau -= v.hover_s;
        out.push(tau);
        at = Location::Cluster(v.cluster);
    }
    Ok(out)
}

/// Fraction of requesting users served along `trajectory`.
///
/// Zero when nobody requests service within the horizon.
pub fn success_rate(realization: &Realization, trajectory: &[usize]) -> Result<f64, ScenarioError> {
    let denom = realization.requesting_users();
    if denom == 0 {
        return Ok(0.0);
    }
    let tl = timeline(realization, trajectory)?;
    Ok(tl.served_total as f64 / denom as f64)
}
