//! Air-to-ground channel: path loss, LoS probability and packet error rate.
//!
//! All functions take the device's ground position explicitly so the same
//! device can be evaluated at any round of its motion.

use nalgebra::Matrix2;

use crate::model::{DeviceState, LosMode, RadioEnvironment, Vec2};

/// 3-D distance between a drone at `altitude` above `drone` and a ground point.
pub fn distance(drone: Vec2, ground: Vec2, altitude: f64) -> f64 {
    ((drone - ground).norm_squared() + altitude * altitude).sqrt()
}

/// Elevation angle in degrees seen from the ground point.
pub fn elevation_deg(drone: Vec2, ground: Vec2, altitude: f64) -> f64 {
    altitude.atan2((drone - ground).norm()).to_degrees()
}

/// Sigmoid LoS probability for an elevation angle in degrees.
pub fn los_probability(radio: &RadioEnvironment, elevation_deg: f64) -> f64 {
    1.0 / (1.0 + radio.los_a * (-radio.los_b * (elevation_deg - radio.los_a)).exp())
}

/// Attenuation factor applied on top of free-space loss.
fn excess_factor(radio: &RadioEnvironment, drone: Vec2, ground: Vec2) -> f64 {
    match radio.los_mode {
        LosMode::Approximate => radio.extra_loss_los,
        LosMode::Mixture => {
            let z = los_probability(radio, elevation_deg(drone, ground, radio.altitude));
            z * radio.extra_loss_los + (1.0 - z) * radio.extra_loss_nlos
        }
    }
}

/// Distance-independent gain prefactor `A_i` in approximate mode.
pub fn gain_prefactor(radio: &RadioEnvironment, device: &DeviceState) -> f64 {
    radio.free_space_factor() * radio.extra_loss_los * device.fading_mean
}

/// Mean channel power gain `E|h|²`.
pub fn mean_gain(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> f64 {
    let d = distance(drone, ground, radio.altitude);
    radio.free_space_factor()
        * excess_factor(radio, drone, ground)
        * device.fading_mean
        * d.powf(-radio.pathloss_exp)
}

/// Packet error rate `1 − exp(−θBN0 / (E|h|² ρ))`.
pub fn packet_error_rate(
    radio: &RadioEnvironment,
    device: &DeviceState,
    ground: Vec2,
    drone: Vec2,
) -> f64 {
    let g = mean_gain(radio, device, ground, drone);
    -(-radio.noise_threshold() / (g * device.tx_power)).exp_m1()
}

/// Geometry and link quality of one device-drone pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub distance: f64,
    pub mean_gain: f64,
    pub per: f64,
}

pub fn link_state(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> LinkState {
    LinkState {
        distance: distance(drone, ground, radio.altitude),
        mean_gain: mean_gain(radio, device, ground, drone),
        per: packet_error_rate(radio, device, ground, drone),
    }
}

/// PER of every device at `drone`, with device `i` at `grounds[i]`.
pub fn packet_error_rates(
    radio: &RadioEnvironment,
    devices: &[DeviceState],
    grounds: &[Vec2],
    drone: Vec2,
) -> Vec<f64> {
    devices
        .iter()
        .zip(grounds)
        .map(|(d, &x)| packet_error_rate(radio, d, x, drone))
        .collect()
}

/// Gradient of the mean gain with respect to the drone position.
fn gain_gradient(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> Vec2 {
    let r = drone - ground;
    let h = radio.altitude;
    let d2 = r.norm_squared() + h * h;
    let alpha = radio.pathloss_exp;
    let g = mean_gain(radio, device, ground, drone);
    let radial = -alpha * g / d2 * r;
    match radio.los_mode {
        LosMode::Approximate => radial,
        LosMode::Mixture => {
            let rho = r.norm();
            if rho == 0.0 {
                return radial;
            }
            let z = los_probability(radio, elevation_deg(drone, ground, h));
            let dz_dtheta = z * (1.0 - z) * radio.los_b;
            let dtheta_dp = -(180.0 / std::f64::consts::PI) * h / (rho * rho + h * h) / rho * r;
            let base = radio.free_space_factor() * device.fading_mean * d2.sqrt().powf(-alpha);
            radial + base * (radio.extra_loss_los - radio.extra_loss_nlos) * dz_dtheta * dtheta_dp
        }
    }
}

/// Gradient of the PER with respect to the drone position.
///
/// In approximate mode this is
/// `(θBN0α / (ρA)) · d^(α−2) · exp(−θBN0 d^α / (Aρ)) · (p − x)`.
pub fn per_gradient(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> Vec2 {
    let g = mean_gain(radio, device, ground, drone);
    let k = radio.noise_threshold() / device.tx_power;
    let survive = (-k / g).exp();
    -survive * k / (g * g) * gain_gradient(radio, device, ground, drone)
}

/// Scalar `φ` with `per_gradient = φ · (p − x)` in approximate mode:
/// `(θBN0α / (ρA)) · d^(α−2) · exp(−θBN0 / (E|h|² ρ))`.
pub fn per_slope(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> f64 {
    let d = distance(drone, ground, radio.altitude);
    let a = gain_prefactor(radio, device);
    let k = radio.noise_threshold() / device.tx_power;
    let g = mean_gain(radio, device, ground, drone);
    k * radio.pathloss_exp / a * d.powf(radio.pathloss_exp - 2.0) * (-k / g).exp()
}

/// Hessian of the PER with respect to the drone position.
///
/// Closed form in approximate mode; central differences of the analytic
/// gradient in mixture mode.
pub fn per_hessian(
    radio: &RadioEnvironment,
    device: &DeviceState,
    ground: Vec2,
    drone: Vec2,
) -> Matrix2<f64> {
    match radio.los_mode {
        LosMode::Approximate => {
            // e = 1 − exp(−K s^(α/2)), s = |r|² + H², ∇e = φ(s) r.
            let r = drone - ground;
            let s = r.norm_squared() + radio.altitude * radio.altitude;
            let a = radio.pathloss_exp;
            let k = radio.noise_threshold() / (device.tx_power * gain_prefactor(radio, device));
            let q = k * s.powf(a / 2.0);
            let ex = (-q).exp();
            let phi = k * a * s.powf(a / 2.0 - 1.0) * ex;
            let dphi = k * a * ex * s.powf(a / 2.0 - 2.0) * ((a / 2.0 - 1.0) - q * a / 2.0);
            Matrix2::identity() * phi + 2.0 * dphi * r * r.transpose()
        }
        LosMode::Mixture => {
            let h = 1e-5 * (1.0 + (drone - ground).norm());
            let mut m = Matrix2::zeros();
            for k in 0..2 {
                let mut step = Vec2::zeros();
                step[k] = h;
                let gp = per_gradient(radio, device, ground, drone + step);
                let gm = per_gradient(radio, device, ground, drone - step);
                m.set_column(k, &((gp - gm) / (2.0 * h)));
            }
            (m + m.transpose()) * 0.5
        }
    }
}

/// Shannon rate `B log2(1 + E|h|² ρ / (B N0))` in bit/s.
pub fn achievable_rate(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> f64 {
    let snr = mean_gain(radio, device, ground, drone) * device.tx_power
        / (radio.bandwidth * radio.noise_psd);
    radio.bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Gradient of [`achievable_rate`] with respect to the drone position.
pub fn rate_gradient(radio: &RadioEnvironment, device: &DeviceState, ground: Vec2, drone: Vec2) -> Vec2 {
    let scale = device.tx_power / (radio.bandwidth * radio.noise_psd);
    let snr = mean_gain(radio, device, ground, drone) * scale;
    radio.bandwidth / std::f64::consts::LN_2 * scale / (1.0 + snr)
        * gain_gradient(radio, device, ground, drone)
}

/// Transmit power that makes the PER equal `target` with the drone at `drone`.
pub fn tx_power_for_per(
    radio: &RadioEnvironment,
    device: &DeviceState,
    ground: Vec2,
    drone: Vec2,
    target: f64,
) -> f64 {
    assert!(target > 0.0 && target < 1.0, "target PER must lie in (0, 1)");
    let g = mean_gain(radio, device, ground, drone);
    radio.noise_threshold() / (g * -(-target).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio() -> RadioEnvironment {
        RadioEnvironment::default()
    }

    fn dev() -> DeviceState {
        DeviceState::new(1, Vec2::zeros())
    }

    /// Evaluates the PER from first principles rather than through `mean_gain`.
    fn per_oracle(rho: f64, horiz: f64) -> f64 {
        let c = 299_792_458.0;
        let fc = 1e9;
        let fs = (c / (4.0 * std::f64::consts::PI * fc)).powi(2);
        let d = (horiz * horiz + 400.0).sqrt();
        let g = fs * d.powf(-3.4);
        let n0 = 10f64.powf(-17.4);
        1.0 - (-(0.053 * 2.5e6 * n0) / (g * rho)).exp()
    }

    #[test]
    fn free_space_factor_value() {
        assert!((radio().free_space_factor() - 5.6912e-4).abs() < 1e-7);
    }

    #[test]
    fn per_matches_direct_formula() {
        for rho in [0.001, 0.01, 0.1] {
            for h in [0.0, 5.0, 30.0, 80.0] {
                let mut d = dev();
                d.tx_power = rho;
                let e = packet_error_rate(&radio(), &d, Vec2::zeros(), Vec2::new(h, 0.0));
                let want = per_oracle(rho, h);
                assert!((e - want).abs() <= 1e-12 * want.max(1e-300), "{e} vs {want}");
            }
        }
    }

    #[test]
    fn per_overhead_is_small() {
        let e = packet_error_rate(&radio(), &dev(), Vec2::zeros(), Vec2::zeros());
        assert!(e > 1e-4 && e < 1e-3, "{e}");
    }

    #[test]
    fn los_probability_shape() {
        let r = radio();
        assert!((los_probability(&r, r.los_a) - 1.0 / (1.0 + r.los_a)).abs() < 1e-15);
        assert!(los_probability(&r, 90.0) > 0.99);
        assert!(los_probability(&r, 60.0) > los_probability(&r, 20.0));
    }

    fn fd_gradient(r: &RadioEnvironment, d: &DeviceState, x: Vec2, p: Vec2) -> Vec2 {
        let h = 1e-4;
        let f = |q: Vec2| packet_error_rate(r, d, x, q);
        Vec2::new(
            (f(p + Vec2::new(h, 0.0)) - f(p - Vec2::new(h, 0.0))) / (2.0 * h),
            (f(p + Vec2::new(0.0, h)) - f(p - Vec2::new(0.0, h))) / (2.0 * h),
        )
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut d = dev();
        d.tx_power = 0.001;
        for mode in [LosMode::Approximate, LosMode::Mixture] {
            let mut r = radio();
            r.los_mode = mode;
            for p in [Vec2::new(10.0, -4.0), Vec2::new(60.0, 30.0), Vec2::new(1.0, 1.0)] {
                let g = per_gradient(&r, &d, Vec2::zeros(), p);
                let fd = fd_gradient(&r, &d, Vec2::zeros(), p);
                assert!((g - fd).norm() <= 1e-6 * g.norm() + 1e-12, "{mode:?} {g} {fd}");
            }
        }
    }

    #[test]
    fn closed_form_gradient_expression() {
        let r = radio();
        let mut d = dev();
        d.tx_power = 0.01;
        let x = Vec2::new(3.0, 4.0);
        let p = Vec2::new(20.0, -7.0);
        let a = gain_prefactor(&r, &d);
        let dist = distance(p, x, r.altitude);
        let k = r.noise_threshold();
        let want = k * 3.4 / (0.01 * a) * dist.powf(1.4) * (-k * dist.powf(3.4) / (a * 0.01)).exp() * (p - x);
        let got = per_gradient(&r, &d, x, p);
        assert!((got - want).norm() <= 1e-12 * want.norm());
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut d = dev();
        d.tx_power = 0.001;
        let r = radio();
        let x = Vec2::new(-5.0, 2.0);
        for p in [Vec2::new(10.0, 10.0), Vec2::new(-5.0, 2.0), Vec2::new(40.0, -3.0)] {
            let hs = per_hessian(&r, &d, x, p);
            let h = 1e-4;
            for k in 0..2 {
                let mut s = Vec2::zeros();
                s[k] = h;
                let col = (per_gradient(&r, &d, x, p + s) - per_gradient(&r, &d, x, p - s)) / (2.0 * h);
                let got = hs.column(k).into_owned();
                assert!((got - col).norm() <= 1e-5 * hs.norm() + 1e-14, "{got} {col}");
            }
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let r = radio();
        let d = dev();
        let x = Vec2::new(1.0, 2.0);
        let p = Vec2::new(15.0, 9.0);
        let g = rate_gradient(&r, &d, x, p);
        let h = 1e-4;
        let f = |q: Vec2| achievable_rate(&r, &d, x, q);
        let fd = Vec2::new(
            (f(p + Vec2::new(h, 0.0)) - f(p - Vec2::new(h, 0.0))) / (2.0 * h),
            (f(p + Vec2::new(0.0, h)) - f(p - Vec2::new(0.0, h))) / (2.0 * h),
        );
        assert!((g - fd).norm() <= 1e-6 * g.norm());
    }

    #[test]
    fn power_for_target_per_inverts() {
        let r = radio();
        let mut d = dev();
        let x = Vec2::new(7.0, 7.0);
        let p = Vec2::new(30.0, 0.0);
        for target in [1e-4, 0.05, 0.5, 0.9] {
            d.tx_power = tx_power_for_per(&r, &d, x, p, target);
            let e = packet_error_rate(&r, &d, x, p);
            assert!((e - target).abs() <= 1e-12, "{e} vs {target}");
        }
    }
}
