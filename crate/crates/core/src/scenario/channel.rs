//! Uplink rate of a user served by the hovering drone.

use super::{ChannelParams, Geometry, UserRequest};
use crate::math;

/// Linear SNR `P * eps * d^-alpha / sigma^2` with the link distance taken
/// from the drone at altitude straight above the cluster center.
pub fn snr(channel: &ChannelParams, geometry: &Geometry, user: &UserRequest) -> f64 {
    let ground = user.ground_offset.norm();
    let d = math::hypot(geometry.altitude_m, ground);
    let gain = user.fading_gain * math::powf(d, -channel.path_loss_exp);
    math::dbm_to_watts(channel.tx_power_dbm) * gain / math::dbm_to_watts(channel.noise_dbm)
}

/// Shannon rate `B log2(1 + snr)` in bits per second.
pub fn user_rate(channel: &ChannelParams, geometry: &Geometry, user: &UserRequest) -> f64 {
    channel.rb_bandwidth_hz * math::log1p(snr(channel, geometry, user)) / core::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures::*;
    use crate::scenario::Point2;

    fn reference_rate(p_dbm: f64, n_dbm: f64, alpha: f64, b_hz: f64, eps: f64, d: f64) -> f64 {
        let p = 10f64.powf(p_dbm / 10.0) / 1000.0;
        let n = 10f64.powf(n_dbm / 10.0) / 1000.0;
        let gamma = p * eps * d.powf(-alpha) / n;
        b_hz * (1.0 + gamma).log2()
    }

    #[test]
    fn table_one_rate_at_center() {
        let g = line_geometry(&[300.0], 400.0);
        let c = ChannelParams::default();
        let u = user(0, 0, 0.0, 1.0);
        // 0.1 W * 1e-4 / 10^-13.4 W
        let gamma = 0.1 * 1e-4 / 10f64.powf(-13.4);
        assert!((gamma - 2.512e8).abs() / 2.512e8 < 1e-3);
        let s = snr(&c, &g, &u);
        assert!((s - gamma).abs() / gamma < 1e-12);
        let rate = user_rate(&c, &g, &u);
        let expect = 20e6 * (1.0 + gamma).log2();
        assert!((rate - expect).abs() / expect < 1e-12);
        assert!((rate - 5.58e8).abs() / 5.58e8 < 1e-3, "rate {rate}");
        assert!((rate - reference_rate(20.0, -104.0, 2.0, 20e6, 1.0, 100.0)).abs() < 1e-3);
    }

    #[test]
    fn fourfold_gain_adds_two_bandwidths() {
        let g = line_geometry(&[300.0], 400.0);
        let c = ChannelParams::default();
        let mut u = user(0, 0, 0.0, 1.0);
        let base = user_rate(&c, &g, &u);
        u.fading_gain = 4.0;
        let boosted = user_rate(&c, &g, &u);
        let gain = boosted - base;
        assert!((gain - 2.0 * c.rb_bandwidth_hz).abs() / (2.0 * c.rb_bandwidth_hz) < 1e-3);
    }

    #[test]
    fn rate_decreases_with_offset() {
        let g = line_geometry(&[300.0], 400.0);
        let c = ChannelParams::default();
        let mut last = f64::INFINITY;
        for step in 0..=20 {
            let mut u = user(0, 0, 0.0, 1.0);
            u.ground_offset = Point2::new(step as f64, 0.0);
            let r = user_rate(&c, &g, &u);
            assert!(r > 0.0 && r < last);
            last = r;
        }
    }
}
