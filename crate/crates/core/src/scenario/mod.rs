//! The physical world: where the clusters are, who asks for what and when,
//! how fast each user can upload, and how long a given trajectory takes.

mod channel;
mod service;
mod spec;

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::{snr, user_rate};
pub use service::{
    hover_time, remaining_budgets, serve_cluster, success_rate, timeline, trajectory_time, ClusterService, ServedSet,
    Timeline, Visit,
};
pub use spec::{generate_realization, BitsDist, ClusterLayout, RequestTimeDist, ScenarioSpec};

/// Largest cluster count the action masks can represent (`L + 1 <= 64`).
pub const MAX_CLUSTERS: usize = 63;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario needs at least one user")]
    NoUsers,
    #[error("scenario needs at least one cluster")]
    NoClusters,
    #[error("{count} clusters requested, at most {max} supported")]
    TooManyClusters { count: usize, max: usize },
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("clusters {a} and {b} share a center")]
    CoincidentClusters { a: usize, b: usize },
    #[error("cluster id {cluster} out of range (scenario has {clusters})")]
    InvalidCluster { cluster: usize, clusters: usize },
    #[error("cluster weights: expected {expected} nonnegative entries with positive sum, got {got}")]
    BadWeights { expected: usize, got: usize },
    #[error("user {user}: {reason}")]
    InvalidUser { user: usize, reason: &'static str },
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<(), ScenarioError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::InvalidParameter { name, value, reason })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        crate::math::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        crate::math::hypot(self.x, self.y)
    }
}

/// Uplink channel parameters. Powers are in dBm.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(deny_unknown_fields))]
pub struct ChannelParams {
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub path_loss_exp: f64,
    /// Nakagami shape `m`; fading power gains are Gamma(m, 1/m).
    pub nakagami_m: f64,
    pub rb_bandwidth_hz: f64,
    pub num_rbs: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            tx_power_dbm: 20.0,
            noise_dbm: -104.0,
            path_loss_exp: 2.0,
            nakagami_m: 3.0,
            rb_bandwidth_hz: 20e6,
            num_rbs: 100,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        check("tx_power_dbm", self.tx_power_dbm, true, "must be finite")?;
        check("noise_dbm", self.noise_dbm, true, "must be finite")?;
        check("path_loss_exp", self.path_loss_exp, self.path_loss_exp > 0.0, "must be positive")?;
        check("nakagami_m", self.nakagami_m, self.nakagami_m >= 0.5, "must be at least 0.5")?;
        check("rb_bandwidth_hz", self.rb_bandwidth_hz, self.rb_bandwidth_hz > 0.0, "must be positive")?;
        if self.num_rbs == 0 {
            return Err(ScenarioError::InvalidParameter { name: "num_rbs", value: 0.0, reason: "must be at least 1" });
        }
        Ok(())
    }
}

/// A place the drone can be: one of the clusters, or the charging origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Location {
    Origin,
    Cluster(usize),
}

impl Location {
    /// Index into `L + 1` slots with the origin last.
    pub fn index(self, clusters: usize) -> usize {
        match self {
            Location::Cluster(l) => l,
            Location::Origin => clusters,
        }
    }
}

/// Static geometry of a scenario.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(deny_unknown_fields))]
pub struct Geometry {
    pub cluster_positions: Vec<Point2>,
    pub origin: Point2,
    pub altitude_m: f64,
    pub service_radius_m: f64,
    pub speed_mps: f64,
    pub horizon_s: f64,
}

impl Geometry {
    pub fn num_clusters(&self) -> usize {
        self.cluster_positions.len()
    }

    pub fn position(&self, at: Location) -> Point2 {
        match at {
            Location::Origin => self.origin,
            Location::Cluster(l) => self.cluster_positions[l],
        }
    }

    /// Time spent on the straight part of a pass through a service area.
    pub fn traverse_s(&self) -> f64 {
        2.0 * self.service_radius_m / self.speed_mps
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let l = self.cluster_positions.len();
        if l == 0 {
            return Err(ScenarioError::NoClusters);
        }
        if l > MAX_CLUSTERS {
            return Err(ScenarioError::TooManyClusters { count: l, max: MAX_CLUSTERS });
        }
        check("service_radius_m", self.service_radius_m, self.service_radius_m >= 0.0, "must be nonnegative")?;
        check(
            "altitude_m",
            self.altitude_m,
            self.altitude_m > self.service_radius_m,
            "must exceed the service radius",
        )?;
        check("speed_mps", self.speed_mps, self.speed_mps > 0.0, "must be positive")?;
        check("horizon_s", self.horizon_s, self.horizon_s > 0.0, "must be positive")?;
        check("origin.x", self.origin.x, true, "must be finite")?;
        check("origin.y", self.origin.y, true, "must be finite")?;
        for p in &self.cluster_positions {
            check("cluster_positions.x", p.x, true, "must be finite")?;
            check("cluster_positions.y", p.y, true, "must be finite")?;
        }
        for a in 0..l {
            for b in a + 1..l {
                if self.cluster_positions[a].distance(self.cluster_positions[b]) <= 0.0 {
                    return Err(ScenarioError::CoincidentClusters { a, b });
                }
            }
        }
        Ok(())
    }
}

/// One user's access request.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(deny_unknown_fields))]
pub struct UserRequest {
    pub user_id: usize,
    pub cluster_id: usize,
    /// Position relative to the cluster center.
    pub ground_offset: Point2,
    pub bits: f64,
    pub request_time_s: f64,
    /// Nakagami power gain, fixed for the realization.
    pub fading_gain: f64,
}

/// Geometry plus one draw of all users' requests.
///
/// Immutable once built; derived quantities (delays, per-cluster member lists,
/// leg times) are computed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    geometry: Geometry,
    channel: ChannelParams,
    users: Vec<UserRequest>,
    seed: u64,
    delays: Vec<f64>,
    /// Per cluster, member user indices sorted by (request time, id).
    members: Vec<Vec<usize>>,
    /// `(L+1) x (L+1)` travel times, origin at index `L`.
    legs: Vec<f64>,
    requesting: usize,
}

impl Realization {
    pub fn new(
        geometry: Geometry,
        channel: ChannelParams,
        users: Vec<UserRequest>,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        geometry.validate()?;
        channel.validate()?;
        if users.is_empty() {
            return Err(ScenarioError::NoUsers);
        }
        let l = geometry.num_clusters();
        let slack = 1.0 + 1e-9;
        for (i, u) in users.iter().enumerate() {
            let bad = |reason| Err(ScenarioError::InvalidUser { user: i, reason });
            if u.cluster_id >= l {
                return Err(ScenarioError::InvalidCluster { cluster: u.cluster_id, clusters: l });
            }
            if !(u.bits > 0.0 && u.bits.is_finite()) {
                return bad("bits must be positive and finite");
            }
            if !(u.fading_gain > 0.0 && u.fading_gain.is_finite()) {
                return bad("fading gain must be positive and finite");
            }
            if !(u.request_time_s >= 0.0 && u.request_time_s <= geometry.horizon_s) {
                return bad("request time must lie in [0, T]");
            }
            if !(u.ground_offset.norm() <= geometry.service_radius_m * slack) {
                return bad("ground offset outside the service radius");
            }
        }

        let delays: Vec<f64> = users.iter().map(|u| u.bits / user_rate(&channel, &geometry, u)).collect();

        let mut members = alloc::vec![Vec::new(); l];
        for (i, u) in users.iter().enumerate() {
            members[u.cluster_id].push(i);
        }
        for m in &mut members {
            m.sort_by(|&a, &b| users[a].request_time_s.total_cmp(&users[b].request_time_s).then(a.cmp(&b)));
        }

        let sites = l + 1;
        let mut legs = alloc::vec![0.0; sites * sites];
        for a in 0..sites {
            for b in 0..sites {
                let pa = geometry.position(site(a, l));
                let pb = geometry.position(site(b, l));
                legs[a * sites + b] = pa.distance(pb) / geometry.speed_mps;
            }
        }

        let requesting =
            users.iter().filter(|u| u.request_time_s >= 0.0 && u.request_time_s <= geometry.horizon_s).count();

        Ok(Realization { geometry, channel, users, seed, delays, members, legs, requesting })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    pub fn users(&self) -> &[UserRequest] {
        &self.users
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_clusters(&self) -> usize {
        self.geometry.num_clusters()
    }

    pub fn horizon(&self) -> f64 {
        self.geometry.horizon_s
    }

    /// Transmission delay `b_u / c_u` of user `u`.
    pub fn delay(&self, user: usize) -> f64 {
        self.delays[user]
    }

    /// Users of `cluster`, earliest requester first.
    pub fn cluster_members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Number of users whose request falls in `[0, T]`.
    pub fn requesting_users(&self) -> usize {
        self.requesting
    }

    /// Straight-and-level flight time between two locations.
    pub fn leg_time(&self, from: Location, to: Location) -> f64 {
        let l = self.num_clusters();
        self.legs[from.index(l) * (l + 1) + to.index(l)]
    }
}

fn site(index: usize, clusters: usize) -> Location {
    if index == clusters {
        Location::Origin
    } else {
        Location::Cluster(index)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    /// Two clusters on the x axis, `V = 30`, `d_r = 20`, `H = 100`.
    pub fn line_geometry(xs: &[f64], horizon_s: f64) -> Geometry {
        Geometry {
            cluster_positions: xs.iter().map(|&x| Point2::new(x, 0.0)).collect(),
            origin: Point2::new(0.0, 0.0),
            altitude_m: 100.0,
            service_radius_m: 20.0,
            speed_mps: 30.0,
            horizon_s,
        }
    }

    pub fn user(id: usize, cluster: usize, t: f64, bits: f64) -> UserRequest {
        UserRequest {
            user_id: id,
            cluster_id: cluster,
            ground_offset: Point2::default(),
            bits,
            request_time_s: t,
            fading_gain: 1.0,
        }
    }

    /// Bits needed for a user at the cluster center (unit fading) to take `secs`.
    pub fn bits_for_delay(geometry: &Geometry, channel: &ChannelParams, secs: f64) -> f64 {
        let probe = user(0, 0, 0.0, 1.0);
        user_rate(channel, geometry, &probe) * secs
    }

    pub fn realization(geometry: Geometry, users: Vec<UserRequest>) -> Realization {
        Realization::new(geometry, ChannelParams::default(), users, 0).unwrap()
    }

    pub fn simple() -> Realization {
        let g = line_geometry(&[300.0, 600.0], 400.0);
        realization(g, vec![user(0, 0, 0.0, 1e8), user(1, 1, 50.0, 1e8)])
    }
}
