//! Stationary drone placement.
//!
//! For stationary devices the gap bound tends to `f/g` with `f = J + K` and
//! `g = 1 − Φ`. Starting from the weighted centroid, each iteration linearizes
//! `f` and `g`, minimizes the resulting linear-fractional model over a trust
//! box with [`charnes_cooper_min`], and accepts the step only if the exact
//! ratio decreases. Rejected steps shrink the box.

use thiserror::Error;

use crate::bound::BoundCoefficients;
use crate::channel;
use crate::lp::{charnes_cooper_min, LinFrac, LpError};
use crate::model::{DeviceState, LearningConstants, RadioEnvironment, Scenario, Vec2};

/// Smallest trust radius tried before giving up on a non-positive denominator.
pub const MIN_TRUST_RADIUS: f64 = 1e-3;

/// Side length (in cells) of the coarse feasibility scan.
const SCAN_CELLS: usize = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no devices to serve")]
    NoDevices,
    #[error("no position in the search area gives a contracting bound (Φ < 1)")]
    Infeasible,
    #[error("trust radius fell below {MIN_TRUST_RADIUS} m with a non-positive denominator")]
    TrustRegionCollapsed,
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl PlacementError {
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            PlacementError::Infeasible | PlacementError::TrustRegionCollapsed
        )
    }
}

/// `f`, `g` and their gradients for devices at fixed ground positions.
#[derive(Debug, Clone)]
pub struct PlacementObjective<'a> {
    radio: &'a RadioEnvironment,
    devices: &'a [DeviceState],
    grounds: Vec<Vec2>,
    coef: BoundCoefficients,
    mu_over_l: f64,
}

impl<'a> PlacementObjective<'a> {
    pub fn new(
        radio: &'a RadioEnvironment,
        devices: &'a [DeviceState],
        grounds: Vec<Vec2>,
        constants: &LearningConstants,
    ) -> Self {
        assert_eq!(devices.len(), grounds.len());
        Self {
            radio,
            devices,
            grounds,
            coef: BoundCoefficients::new(devices, constants),
            mu_over_l: constants.strong_convexity / constants.lipschitz,
        }
    }

    /// Objective for the scenario's devices at their initial positions.
    pub fn from_scenario(s: &'a Scenario) -> Self {
        Self::new(&s.radio, &s.devices, s.initial_positions(), &s.constants)
    }

    pub fn grounds(&self) -> &[Vec2] {
        &self.grounds
    }

    pub fn devices(&self) -> &[DeviceState] {
        self.devices
    }

    pub fn pers(&self, p: Vec2) -> Vec<f64> {
        channel::packet_error_rates(self.radio, self.devices, &self.grounds, p)
    }

    fn per_gradients(&self, p: Vec2) -> Vec<Vec2> {
        self.devices
            .iter()
            .zip(&self.grounds)
            .map(|(d, &x)| channel::per_gradient(self.radio, d, x, p))
            .collect()
    }

    /// `J + K` at `p`.
    pub fn numerator(&self, p: Vec2) -> f64 {
        self.coef.residual(&self.pers(p))
    }

    /// `1 − Φ` at `p`.
    pub fn denominator(&self, p: Vec2) -> f64 {
        1.0 - self.coef.phi(&self.pers(p))
    }

    pub fn grad_numerator(&self, p: Vec2) -> Vec2 {
        self.per_gradients(p)
            .iter()
            .zip(&self.coef.a)
            .fold(Vec2::zeros(), |acc, (g, a)| acc + *a * g)
    }

    pub fn grad_denominator(&self, p: Vec2) -> Vec2 {
        self.per_gradients(p)
            .iter()
            .zip(&self.coef.b)
            .fold(Vec2::zeros(), |acc, (g, b)| acc - *b * g)
    }

    /// `f/g`, or `+∞` where the bound does not contract.
    pub fn ratio(&self, p: Vec2) -> f64 {
        let e = self.pers(p);
        let g = self.mu_over_l - dot(&self.coef.b, &e);
        if g > 0.0 {
            self.coef.residual(&e) / g
        } else {
            f64::INFINITY
        }
    }

    /// Dataset-weighted centroid of the device positions.
    pub fn weighted_centroid(&self) -> Vec2 {
        weighted_centroid_at(self.devices, &self.grounds)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ D_i x_i / Σ D_i` over the devices' initial positions.
pub fn weighted_centroid(devices: &[DeviceState]) -> Vec2 {
    let grounds: Vec<Vec2> = devices.iter().map(|d| d.position).collect();
    weighted_centroid_at(devices, &grounds)
}

/// Weighted centroid with device `i` at `grounds[i]`.
pub fn weighted_centroid_at(devices: &[DeviceState], grounds: &[Vec2]) -> Vec2 {
    let total: f64 = devices.iter().map(|d| d.dataset_size as f64).sum();
    devices
        .iter()
        .zip(grounds)
        .fold(Vec2::zeros(), |acc, (d, x)| acc + x * d.dataset_size as f64)
        / total
}

/// Rectangle around the devices used for scans and grid searches.
pub fn search_area(grounds: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = grounds[0];
    let mut hi = grounds[0];
    for g in grounds {
        lo = lo.inf(g);
        hi = hi.sup(g);
    }
    let pad = (0.1 * (hi - lo).max()).max(10.0);
    (lo - Vec2::repeat(pad), hi + Vec2::repeat(pad))
}

fn grid_points(lo: Vec2, hi: Vec2, n: usize) -> impl Iterator<Item = Vec2> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { Vec2::zeros() };
    (0..n).flat_map(move |iy| {
        (0..n).map(move |ix| Vec2::new(lo.x + step.x * ix as f64, lo.y + step.y * iy as f64))
    })
}

/// Exhaustive argmin of `f/g` over an `n × n` grid spanning `[lo, hi]`,
/// skipping non-contracting cells. Returns the point and its ratio.
pub fn grid_search_placement(
    obj: &PlacementObjective<'_>,
    lo: Vec2,
    hi: Vec2,
    n: usize,
) -> Result<(Vec2, f64), PlacementError> {
    let mut best = (Vec2::zeros(), f64::INFINITY);
    for p in grid_points(lo, hi, n) {
        let r = obj.ratio(p);
        if r < best.1 {
            best = (p, r);
        }
    }
    if best.1.is_finite() {
        Ok(best)
    } else {
        Err(PlacementError::Infeasible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementOptions {
    /// Stop once an accepted step (or the trust box diagonal) is at most this.
    pub tol: f64,
    pub trust_radius: f64,
    /// Maximum number of linearizations.
    pub max_iters: usize,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            tol: 0.01,
            trust_radius: 5.0,
            max_iters: 50,
        }
    }
}

impl PlacementOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            tol: s.solver.placement_tol,
            trust_radius: s.solver.trust_radius,
            max_iters: s.solver.placement_max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementResult {
    pub position: Vec2,
    /// `(J + K) / (1 − Φ)` at `position`.
    pub objective: f64,
    /// Number of linearizations performed.
    pub iterations: usize,
    /// Number of linear programs solved, including rejected steps.
    pub lp_solves: usize,
    pub converged: bool,
    /// Accepted iterates, starting point first.
    pub trace: Vec<Vec2>,
}

/// Starting point: the weighted centroid if it contracts, else the best cell
/// of a coarse scan.
fn feasible_start(obj: &PlacementObjective<'_>) -> Result<Vec2, PlacementError> {
    let c = obj.weighted_centroid();
    if obj.ratio(c).is_finite() {
        return Ok(c);
    }
    let (lo, hi) = search_area(obj.grounds());
    grid_search_placement(obj, lo, hi, SCAN_CELLS).map(|(p, _)| p)
}

/// Run the placement iteration from the weighted centroid.
pub fn optimize_placement(
    obj: &PlacementObjective<'_>,
    opts: &PlacementOptions,
) -> Result<PlacementResult, PlacementError> {
    if obj.devices().is_empty() {
        return Err(PlacementError::NoDevices);
    }
    let start = feasible_start(obj)?;
    optimize_placement_from(obj, start, opts)
}

/// Run the placement iteration from a contracting starting point.
pub fn optimize_placement_from(
    obj: &PlacementObjective<'_>,
    start: Vec2,
    opts: &PlacementOptions,
) -> Result<PlacementResult, PlacementError> {
    let mut p = start;
    let mut h = obj.ratio(p);
    if !h.is_finite() {
        return Err(PlacementError::Infeasible);
    }
    let mut radius = opts.trust_radius;
    let mut trace = vec![p];
    let mut lp_solves = 0;
    let mut iterations = 0;
    let diag = std::f64::consts::SQRT_2;

    while iterations < opts.max_iters {
        iterations += 1;
        let f = obj.numerator(p);
        let g = obj.denominator(p);
        let gf = obj.grad_numerator(p);
        let gg = obj.grad_denominator(p);
        let grad_h = (gf * g - gg * f) / (g * g);

        let accepted = loop {
            let frac = LinFrac {
                num_c: gf,
                num_beta: f - gf.dot(&p),
                den_d: gg,
                den_gamma: g - gg.dot(&p),
                center: p,
                radius,
            };
            if !frac.denominator_positive() {
                radius *= 0.5;
                if radius < MIN_TRUST_RADIUS {
                    return Err(PlacementError::TrustRegionCollapsed);
                }
                continue;
            }
            lp_solves += 1;
            let q = charnes_cooper_min(&frac)?;
            let hq = obj.ratio(q);
            if hq < h {
                break Some((q, hq, h - frac.ratio(q)));
            }
            // Shrink toward the minimizer of a quadratic fitted along the step.
            let slope = grad_h.dot(&(q - p));
            let curv = hq - h - slope;
            let tau = if hq.is_finite() && curv > 0.0 {
                -slope / (2.0 * curv)
            } else {
                0.5
            };
            radius *= tau.clamp(0.1, 0.5);
            if radius * diag <= opts.tol {
                break None;
            }
        };

        let Some((q, hq, predicted)) = accepted else {
            return Ok(PlacementResult {
                position: p,
                objective: h,
                iterations,
                lp_solves,
                converged: true,
                trace,
            });
        };
        let step = (q - p).norm();
        let actual = h - hq;
        p = q;
        h = hq;
        trace.push(p);
        if step <= opts.tol {
            return Ok(PlacementResult {
                position: p,
                objective: h,
                iterations,
                lp_solves,
                converged: true,
                trace,
            });
        }
        if actual < 0.25 * predicted {
            radius *= 0.5;
        }
    }
    Ok(PlacementResult {
        position: p,
        objective: h,
        iterations,
        lp_solves,
        converged: false,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::round_terms;

    fn scenario(devs: Vec<DeviceState>) -> Scenario {
        Scenario::with_devices(devs)
    }

    fn device(id: u32, x: f64, y: f64, d: u32, var: f64) -> DeviceState {
        let mut dev = DeviceState::new(id, Vec2::new(x, y));
        dev.dataset_size = d;
        dev.noise_var = var;
        dev.tx_power = 0.001;
        dev
    }

    #[test]
    fn centroid_arithmetic() {
        let devs = vec![device(1, 0.0, 0.0, 1, 0.0), device(2, 4.0, 2.0, 1, 0.0)];
        assert_eq!(weighted_centroid(&devs), Vec2::new(2.0, 1.0));
        let one = vec![device(1, 3.0, -7.0, 10, 0.0)];
        assert_eq!(weighted_centroid(&one), Vec2::new(3.0, -7.0));
        let devs = vec![device(1, 0.0, 0.0, 1, 0.0), device(2, 4.0, 0.0, 3, 0.0)];
        assert_eq!(weighted_centroid(&devs), Vec2::new(3.0, 0.0));
    }

    #[test]
    fn clean_ideal_values() {
        let mut d = device(1, 0.0, 0.0, 10, 0.0);
        d.tx_power = f64::INFINITY;
        let s = scenario(vec![d]);
        let obj = PlacementObjective::from_scenario(&s);
        let p = Vec2::new(5.0, 5.0);
        assert_eq!(obj.numerator(p), 0.0);
        assert_eq!(obj.denominator(p), 0.5);
    }

    #[test]
    fn ratio_matches_bound_terms() {
        let devs = vec![
            device(1, 0.0, 0.0, 300, 0.1),
            device(2, 40.0, 10.0, 900, 0.01),
            device(3, 20.0, 50.0, 500, 0.3),
        ];
        let s = scenario(devs);
        let obj = PlacementObjective::from_scenario(&s);
        let p = Vec2::new(17.0, 22.0);
        let t = round_terms(&obj.pers(p), &s.devices, &s.constants).unwrap();
        let want = t.residual() / (1.0 - t.phi);
        assert!((obj.ratio(p) - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn device_below_has_zero_gradients() {
        let s = scenario(vec![device(1, 3.0, 4.0, 100, 0.2)]);
        let obj = PlacementObjective::from_scenario(&s);
        let p = Vec2::new(3.0, 4.0);
        assert_eq!(obj.grad_numerator(p), Vec2::zeros());
        assert_eq!(obj.grad_denominator(p), Vec2::zeros());
    }

    #[test]
    fn single_device_converges_overhead() {
        let s = scenario(vec![device(1, 12.0, -3.0, 100, 0.05)]);
        let obj = PlacementObjective::from_scenario(&s);
        let opts = PlacementOptions::default();
        // Start away from the device to exercise the iteration.
        let r = optimize_placement_from(&obj, Vec2::new(30.0, 10.0), &opts).unwrap();
        assert!(r.converged);
        assert!((r.position - Vec2::new(12.0, -3.0)).norm() <= 0.05, "{}", r.position);
    }

    #[test]
    fn symmetric_pair_converges_to_midpoint() {
        let s = scenario(vec![
            device(1, 0.0, 0.0, 500, 0.01),
            device(2, 40.0, 0.0, 500, 0.01),
        ]);
        let obj = PlacementObjective::from_scenario(&s);
        let r = optimize_placement(&obj, &PlacementOptions::default()).unwrap();
        assert!((r.position - Vec2::new(20.0, 0.0)).norm() <= 0.01 * 2.0, "{}", r.position);
    }

    #[test]
    fn monotone_trace() {
        let s = scenario(vec![
            device(1, 0.0, 0.0, 1000, 0.3),
            device(2, 60.0, 5.0, 200, 0.001),
            device(3, 30.0, 50.0, 700, 0.01),
        ]);
        let obj = PlacementObjective::from_scenario(&s);
        let r = optimize_placement(&obj, &PlacementOptions::default()).unwrap();
        let ratios: Vec<f64> = r.trace.iter().map(|&p| obj.ratio(p)).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(r.objective <= obj.ratio(obj.weighted_centroid()));
    }

    #[test]
    fn infeasible_everywhere() {
        let mut d = device(1, 0.0, 0.0, 10, 0.0);
        d.tx_power = 1e-12;
        let s = scenario(vec![d]);
        let obj = PlacementObjective::from_scenario(&s);
        let err = optimize_placement(&obj, &PlacementOptions::default()).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn grid_search_single_device() {
        let s = scenario(vec![device(1, 3.3, 4.4, 10, 0.0)]);
        let obj = PlacementObjective::from_scenario(&s);
        let (p, _) =
            grid_search_placement(&obj, Vec2::new(0.0, 0.0), Vec2::new(10.0, 10.0), 11).unwrap();
        assert_eq!(p, Vec2::new(3.0, 4.0));
    }
}
