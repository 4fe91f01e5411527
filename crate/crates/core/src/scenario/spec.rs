//! Scenario description and seeded realization generator.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::{check, ChannelParams, Geometry, Point2, Realization, ScenarioError, UserRequest, MAX_CLUSTERS};
use crate::math;
use crate::rng::{seeded, Stream};

/// Where cluster centers come from.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum ClusterLayout {
    /// `count` centers uniform over the area, drawn from the layout seed.
    Random {
        count: usize,
    },
    Fixed {
        positions: Vec<Point2>,
    },
}

/// Request epoch distribution, expressed in fractions of the horizon.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum RequestTimeDist {
    /// Uniform on `[lo, hi] * T`.
    Uniform { lo: f64, hi: f64 },
    /// Exponential with mean `mean * T`, truncated to `[0, T]`.
    TruncatedExponential { mean: f64 },
}

/// Request size distribution in bits.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(Serialize, Deserialize),
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum BitsDist {
    Uniform { min: f64, max: f64 },
    LogUniform { min: f64, max: f64 },
}

/// Everything needed to draw realizations of one scenario.
///
/// Cluster centers and user placement are static (drawn once from
/// `layout_seed`); request times, sizes and fading gains are drawn per
/// realization seed.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default, deny_unknown_fields))]
pub struct ScenarioSpec {
    /// Width and height of the area, meters. Random cluster centers are kept
    /// `service_radius_m` away from its edges.
    pub area_m: [f64; 2],
    pub origin: Point2,
    pub altitude_m: f64,
    pub service_radius_m: f64,
    pub speed_mps: f64,
    pub horizon_s: f64,
    pub clusters: ClusterLayout,
    /// Relative share of users per cluster; equal shares when absent.
    pub cluster_weights: Option<Vec<f64>>,
    pub users: usize,
    pub request_time: RequestTimeDist,
    pub request_bits: BitsDist,
    pub channel: ChannelParams,
    pub layout_seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            area_m: [1000.0, 1000.0],
            origin: Point2::new(500.0, 500.0),
            altitude_m: 100.0,
            service_radius_m: 20.0,
            speed_mps: 30.0,
            horizon_s: 400.0,
            clusters: ClusterLayout::Random { count: 6 },
            cluster_weights: None,
            users: 100,
            request_time: RequestTimeDist::Uniform { lo: 0.0, hi: 1.0 },
            request_bits: BitsDist::Uniform { min: 1e7, max: 1e9 },
            channel: ChannelParams::default(),
            layout_seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn num_clusters(&self) -> usize {
        match &self.clusters {
            ClusterLayout::Random { count } => *count,
            ClusterLayout::Fixed { positions } => positions.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.users == 0 {
            return Err(ScenarioError::NoUsers);
        }
        let l = self.num_clusters();
        if l == 0 {
            return Err(ScenarioError::NoClusters);
        }
        if l > MAX_CLUSTERS {
            return Err(ScenarioError::TooManyClusters { count: l, max: MAX_CLUSTERS });
        }
        let [w, h] = self.area_m;
        check("area_m.width", w, w > 0.0, "must be positive")?;
        check("area_m.height", h, h > 0.0, "must be positive")?;
        if let Some(weights) = &self.cluster_weights {
            let ok = weights.len() == l
                && weights.iter().all(|w| w.is_finite() && *w >= 0.0)
                && weights.iter().sum::<f64>() > 0.0;
            if !ok {
                return Err(ScenarioError::BadWeights { expected: l, got: weights.len() });
            }
        }
        match self.request_time {
            RequestTimeDist::Uniform { lo, hi } => {
                check("request_time.lo", lo, (0.0..=1.0).contains(&lo), "must lie in [0, 1]")?;
                check("request_time.hi", hi, hi >= lo && hi <= 1.0, "must lie in [lo, 1]")?;
            }
            RequestTimeDist::TruncatedExponential { mean } => {
                check("request_time.mean", mean, mean > 0.0, "must be positive")?;
            }
        }
        match self.request_bits {
            BitsDist::Uniform { min, max } | BitsDist::LogUniform { min, max } => {
                check("request_bits.min", min, min > 0.0, "must be positive")?;
                check("request_bits.max", max, max >= min, "must be at least min")?;
            }
        }
        self.channel.validate()?;
        // geometry checks (altitude, speed, coincident centers) happen on the built geometry
        self.geometry()?.validate()
    }

    /// The static geometry. Random layouts are drawn from `layout_seed`.
    pub fn geometry(&self) -> Result<Geometry, ScenarioError> {
        let cluster_positions = match &self.clusters {
            ClusterLayout::Fixed { positions } => positions.clone(),
            ClusterLayout::Random { count } => {
                let mut rng = seeded(self.layout_seed, Stream::Layout);
                let margin = self.service_radius_m;
                let [w, h] = self.area_m;
                (0..*count)
                    .map(|_| {
                        let x = margin + rng.random::<f64>() * (w - 2.0 * margin).max(0.0);
                        let y = margin + rng.random::<f64>() * (h - 2.0 * margin).max(0.0);
                        Point2::new(x, y)
                    })
                    .collect()
            }
        };
        let g = Geometry {
            cluster_positions,
            origin: self.origin,
            altitude_m: self.altitude_m,
            service_radius_m: self.service_radius_m,
            speed_mps: self.speed_mps,
            horizon_s: self.horizon_s,
        };
        g.validate()?;
        Ok(g)
    }

    /// Users per cluster by largest-remainder apportionment of the weights.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let l = self.num_clusters();
        let weights: Vec<f64> = match &self.cluster_weights {
            Some(w) => w.clone(),
            None => alloc::vec![1.0; l],
        };
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * self.users as f64).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| *q as usize).collect();
        let mut left = self.users - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - sizes[a] as f64;
            let rb = quotas[b] - sizes[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes
    }

    /// Static placement: `(cluster_id, ground_offset)` per user, in user order.
    fn placement(&self) -> Vec<(usize, Point2)> {
        let mut rng = seeded(self.layout_seed, Stream::Layout);
        // skip the draws used for random cluster centers so placement does not
        // depend on whether centers were fixed or random
        for _ in 0..2 * self.num_clusters() {
            let _: f64 = rng.random();
        }
        let mut out = Vec::with_capacity(self.users);
        for (cluster, &n) in self.cluster_sizes().iter().enumerate() {
            for _ in 0..n {
                let r = self.service_radius_m * math::sqrt(rng.random::<f64>());
                let phi = core::f64::consts::TAU * rng.random::<f64>();
                out.push((cluster, Point2::new(r * math::cos(phi), r * math::sin(phi))));
            }
        }
        out
    }
}

fn draw_request_time<R: Rng>(dist: &RequestTimeDist, horizon: f64, rng: &mut R) -> f64 {
    let t = match *dist {
        RequestTimeDist::Uniform { lo, hi } => (lo + (hi - lo) * rng.random::<f64>()) * horizon,
        RequestTimeDist::TruncatedExponential { mean } => {
            // inverse CDF of Exp(1/mean) restricted to [0, 1]
            let u: f64 = rng.random();
            let mass = -math::expm1_neg(1.0 / mean);
            -mean * math::log1p(-u * mass) * horizon
        }
    };
    t.clamp(0.0, horizon)
}

fn draw_bits<R: Rng>(dist: &BitsDist, rng: &mut R) -> f64 {
    match *dist {
        BitsDist::Uniform { min, max } => min + (max - min) * rng.random::<f64>(),
        BitsDist::LogUniform { min, max } => {
            let (a, b) = (math::ln(min), math::ln(max));
            math::exp(a + (b - a) * rng.random::<f64>()).clamp(min, max)
        }
    }
}

/// Draws one realization of `spec`. Deterministic in `(spec, seed)`.
pub fn generate_realization(spec: &ScenarioSpec, seed: u64) -> Result<Realization, ScenarioError> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let placement = spec.placement();
    let fading = Gamma::new(spec.channel.nakagami_m, 1.0 / spec.channel.nakagami_m).map_err(|_| {
        ScenarioError::InvalidParameter {
            name: "nakagami_m",
            value: spec.channel.nakagami_m,
            reason: "not a valid Gamma shape",
        }
    })?;
    let mut rng = seeded(seed, Stream::Realization);
    let users: Vec<UserRequest> = placement
        .into_iter()
        .enumerate()
        .map(|(user_id, (cluster_id, ground_offset))| {
            let request_time_s = draw_request_time(&spec.request_time, spec.horizon_s, &mut rng);
            let bits = draw_bits(&spec.request_bits, &mut rng);
            let mut fading_gain = fading.sample(&mut rng);
            while fading_gain <= 0.0 {
                fading_gain = fading.sample(&mut rng);
            }
            UserRequest { user_id, cluster_id, ground_offset, bits, request_time_s, fading_gain }
        })
        .collect();
    Realization::new(geometry, spec.channel.clone(), users, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_users_within_horizon() {
        let spec = ScenarioSpec::default();
        let r = generate_realization(&spec, 7).unwrap();
        assert_eq!(r.users().len(), 100);
        assert_eq!(r.num_clusters(), 6);
        assert!(r.users().iter().all(|u| (0.0..=spec.horizon_s).contains(&u.request_time_s)));
        assert!(r.users().iter().all(|u| (1e7..=1e9).contains(&u.bits)));
        assert_eq!(r.requesting_users(), 100);
    }

    #[test]
    fn minimal_instance() {
        let spec = ScenarioSpec { users: 1, clusters: ClusterLayout::Random { count: 1 }, ..ScenarioSpec::default() };
        let r = generate_realization(&spec, 0).unwrap();
        assert_eq!(r.users().len(), 1);
        assert_eq!(r.users()[0].cluster_id, 0);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = ScenarioSpec::default();
        let a = generate_realization(&spec, 11).unwrap();
        let b = generate_realization(&spec, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_realization(&spec, 12).unwrap();
        assert_ne!(a.users(), c.users());
        // static layout is shared across seeds
        assert_eq!(a.geometry(), c.geometry());
        for (x, y) in a.users().iter().zip(c.users()) {
            assert_eq!(x.cluster_id, y.cluster_id);
            assert_eq!(x.ground_offset, y.ground_offset);
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut spec = ScenarioSpec { users: 0, ..ScenarioSpec::default() };
        assert_eq!(generate_realization(&spec, 0), Err(ScenarioError::NoUsers));
        spec.users = 10;
        spec.clusters = ClusterLayout::Random { count: 0 };
        assert_eq!(generate_realization(&spec, 0), Err(ScenarioError::NoClusters));
        spec.clusters = ClusterLayout::Random { count: 2 };
        spec.request_bits = BitsDist::Uniform { min: 0.0, max: 1.0 };
        assert!(generate_realization(&spec, 0).is_err());
        spec.request_bits = BitsDist::Uniform { min: 5.0, max: 1.0 };
        assert!(generate_realization(&spec, 0).is_err());
        spec.request_bits = BitsDist::LogUniform { min: 1.0, max: 5.0 };
        spec.request_time = RequestTimeDist::TruncatedExponential { mean: 0.0 };
        assert!(generate_realization(&spec, 0).is_err());
        spec.request_time = RequestTimeDist::TruncatedExponential { mean: 0.3 };
        assert!(generate_realization(&spec, 0).is_ok());
        spec.cluster_weights = Some(alloc::vec![1.0]);
        assert!(matches!(generate_realization(&spec, 0), Err(ScenarioError::BadWeights { .. })));
    }

    #[test]
    fn apportionment_follows_weights() {
        let spec = ScenarioSpec {
            users: 10,
            clusters: ClusterLayout::Random { count: 3 },
            cluster_weights: Some(alloc::vec![1.0, 2.0, 2.0]),
            ..ScenarioSpec::default()
        };
        assert_eq!(spec.cluster_sizes(), alloc::vec![2, 4, 4]);
        let spec = ScenarioSpec { users: 7, clusters: ClusterLayout::Random { count: 3 }, ..ScenarioSpec::default() };
        let sizes = spec.cluster_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 7);
        assert!(sizes.iter().all(|&n| n == 2 || n == 3));
    }

    #[test]
    fn fading_has_unit_mean() {
        let spec = ScenarioSpec { users: 100_000, ..ScenarioSpec::default() };
        let r = generate_realization(&spec, 3).unwrap();
        let mean = r.users().iter().map(|u| u.fading_gain).sum::<f64>() / r.users().len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean fading {mean}");
    }

    #[test]
    fn truncated_exponential_stays_in_horizon() {
        let spec = ScenarioSpec {
            request_time: RequestTimeDist::TruncatedExponential { mean: 0.25 },
            users: 2000,
            ..ScenarioSpec::default()
        };
        let r = generate_realization(&spec, 5).unwrap();
        let ts: Vec<f64> = r.users().iter().map(|u| u.request_time_s).collect();
        assert!(ts.iter().all(|t| (0.0..=400.0).contains(t)));
        // skewed early: more than half before T/4
        let early = ts.iter().filter(|&&t| t < 100.0).count();
        assert!(early > 1000);
    }
}
