//! Domain types shared by every module.

mod rng;
mod scenario_file;

use std::path::PathBuf;

use thiserror::Error;

pub use rng::{seeded_rng, StreamRng};
pub use scenario_file::parse_scenario;

/// Ground-plane coordinates in meters.
pub type Vec2 = nalgebra::Vector2<f64>;

/// Noise variance for a sensor with the given peak signal-to-noise ratio.
///
/// `peak² · 10^(−psnr/10)`; strictly decreasing in `psnr_db`.
pub fn psnr_to_variance(psnr_db: f64, peak: f64) -> f64 {
    peak * peak * 10f64.powf(-psnr_db / 10.0)
}

/// Convert a power spectral density from dBm/Hz to linear mW/Hz.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("horizon {horizon} is not divisible by dwell {dwell}")]
    HorizonNotDivisible { horizon: usize, dwell: usize },
}

impl ScenarioError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// One ground device taking part in training.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub id: u32,
    /// Position at round 0 (meters, z = 0).
    pub position: Vec2,
    /// Displacement per aggregation round.
    pub velocity: Vec2,
    /// Local dataset size `D_i`.
    pub dataset_size: u32,
    /// Sensor noise variance `σ_i²` in feature space.
    pub noise_var: f64,
    /// Transmit power `ρ_i` in mW.
    pub tx_power: f64,
    /// Mean of the small-scale fading `ν_i`.
    pub fading_mean: f64,
}

impl DeviceState {
    pub fn new(id: u32, position: Vec2) -> Self {
        Self {
            id,
            position,
            velocity: Vec2::zeros(),
            dataset_size: 1000,
            noise_var: 0.0,
            tx_power: 0.1,
            fading_mean: 1.0,
        }
    }

    /// Position after `round` rounds of constant-velocity motion.
    pub fn position_at(&self, round: usize) -> Vec2 {
        self.position + self.velocity * round as f64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let name = |f: &str| format!("device[{}].{f}", self.id);
        if self.dataset_size < 1 {
            return Err(ScenarioError::invalid(
                name("dataset_size (D_i)"),
                "must be at least 1",
            ));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(ScenarioError::invalid(
                name("noise_var"),
                "must be finite and nonnegative",
            ));
        }
        if !(self.tx_power > 0.0 && self.tx_power.is_finite()) {
            return Err(ScenarioError::invalid(name("tx_power"), "must be positive"));
        }
        if !(self.fading_mean > 0.0 && self.fading_mean <= 1.0) {
            return Err(ScenarioError::invalid(
                name("fading_mean"),
                "must lie in (0, 1]",
            ));
        }
        let finite = |v: &Vec2| v.iter().all(|c| c.is_finite());
        if !finite(&self.position) {
            return Err(ScenarioError::invalid(name("position"), "must be finite"));
        }
        if !finite(&self.velocity) {
            return Err(ScenarioError::invalid(name("velocity"), "must be finite"));
        }
        Ok(())
    }
}

/// How the mean path loss accounts for line-of-sight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LosMode {
    /// LoS probability taken as 1 (moderate altitudes, below ~100 m).
    #[default]
    Approximate,
    /// Full LoS/NLoS mixture weighted by the elevation-dependent probability.
    Mixture,
}

/// Channel constants shared by every link.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioEnvironment {
    /// Waterfall threshold `θ` (used as a plain linear factor).
    pub waterfall: f64,
    /// Bandwidth `B` in Hz.
    pub bandwidth: f64,
    /// Noise power spectral density `N0` in mW/Hz.
    pub noise_psd: f64,
    /// Path-loss exponent magnitude `α`; gain falls as `d^(−α)`.
    pub pathloss_exp: f64,
    /// Carrier frequency in Hz.
    pub carrier: f64,
    /// Additional LoS attenuation `π^LoS` (linear gain factor).
    pub extra_loss_los: f64,
    /// Additional NLoS attenuation (linear), mixture mode only.
    pub extra_loss_nlos: f64,
    pub los_a: f64,
    pub los_b: f64,
    /// Drone altitude `H` in meters.
    pub altitude: f64,
    pub light_speed: f64,
    pub los_mode: LosMode,
}

impl Default for RadioEnvironment {
    fn default() -> Self {
        Self {
            waterfall: 0.053,
            bandwidth: 2.5e6,
            noise_psd: dbm_to_mw(-174.0),
            pathloss_exp: 3.4,
            carrier: 1e9,
            extra_loss_los: 1.0,
            extra_loss_nlos: 0.01,
            los_a: 9.61,
            los_b: 0.16,
            altitude: 20.0,
            light_speed: 299_792_458.0,
            los_mode: LosMode::Approximate,
        }
    }
}

impl RadioEnvironment {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            ("radio.waterfall", self.waterfall),
            ("radio.bandwidth", self.bandwidth),
            ("radio.noise_psd", self.noise_psd),
            ("radio.pathloss_exp", self.pathloss_exp),
            ("radio.carrier", self.carrier),
            ("radio.los_extra_loss", self.extra_loss_los),
            ("radio.nlos_extra_loss", self.extra_loss_nlos),
            ("radio.altitude", self.altitude),
            ("radio.light_speed", self.light_speed),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ScenarioError::invalid(field, "must be positive and finite"));
            }
        }
        for (field, value) in [("radio.los_a", self.los_a), ("radio.los_b", self.los_b)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ScenarioError::invalid(field, "must be nonnegative"));
            }
        }
        Ok(())
    }

    /// The greedy velocity weights carry a `d^(α−2)` factor, which only
    /// vanishes directly above a device when `α > 2`.
    pub fn supports_greedy_velocity(&self) -> bool {
        self.pathloss_exp > 2.0
    }

    /// Free-space factor `(s / 4π f_c)²`.
    pub fn free_space_factor(&self) -> f64 {
        let r = self.light_speed / (4.0 * std::f64::consts::PI * self.carrier);
        r * r
    }

    /// `θ · B · N0`, the numerator of the PER exponent.
    pub fn noise_threshold(&self) -> f64 {
        self.waterfall * self.bandwidth * self.noise_psd
    }
}

/// Constants of the per-round convergence bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningConstants {
    /// Gradient Lipschitz constant `L`.
    pub lipschitz: f64,
    /// Strong convexity `μ`.
    pub strong_convexity: f64,
    pub c1: f64,
    pub c2: f64,
    /// Mixed-Hessian bound `η`.
    pub eta: f64,
    /// Input feature dimension `M`.
    pub feature_dim: usize,
}

impl Default for LearningConstants {
    fn default() -> Self {
        Self {
            lipschitz: 1.0,
            strong_convexity: 0.5,
            c1: 1.0,
            c2: 0.5,
            eta: 0.8,
            feature_dim: 784,
        }
    }
}

impl LearningConstants {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(ScenarioError::invalid("learning.lipschitz", "must be positive"));
        }
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= self.lipschitz) {
            return Err(ScenarioError::invalid(
                "learning.strong_convexity",
                "must satisfy 0 < mu <= L",
            ));
        }
        for (field, v) in [
            ("learning.c1", self.c1),
            ("learning.c2", self.c2),
            ("learning.eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::invalid(field, "must be positive"));
            }
        }
        if self.feature_dim < 1 {
            return Err(ScenarioError::invalid("learning.feature_dim", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaypointError {
    NoWaypoints,
    ZeroDwell,
    NotClosed { gap: f64 },
    HorizonMismatch { covered: usize, requested: usize },
}

/// Drone waypoints at fixed altitude.
///
/// Waypoint 0 is the start (the charging station). Waypoint `j >= 1` is held
/// for rounds `(j−1)κ+1 ..= jκ`, so `W + 1` waypoints cover `W·κ` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Vec2>,
    pub dwell: usize,
    pub closed: bool,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vec2>, dwell: usize, closed: bool) -> Self {
        Self {
            waypoints,
            dwell,
            closed,
        }
    }

    /// Hover at `p` for `horizon` rounds.
    pub fn stationary(p: Vec2, horizon: usize, dwell: usize) -> Self {
        let n = horizon / dwell.max(1) + 1;
        Self::new(vec![p; n], dwell, true)
    }

    /// Number of rounds covered.
    pub fn rounds(&self) -> usize {
        self.waypoints.len().saturating_sub(1) * self.dwell
    }

    /// Index of the waypoint used during `round` (1-based).
    pub fn waypoint_index(&self, round: usize) -> usize {
        debug_assert!(round >= 1);
        (round - 1) / self.dwell + 1
    }

    pub fn position_at_round(&self, round: usize) -> Vec2 {
        self.waypoints[self.waypoint_index(round)]
    }

    /// Largest distance between consecutive waypoints.
    pub fn max_step(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    pub fn check(&self, horizon: usize) -> Result<(), WaypointError> {
        if self.waypoints.len() < 2 {
            return Err(WaypointError::NoWaypoints);
        }
        if self.dwell == 0 {
            return Err(WaypointError::ZeroDwell);
        }
        if self.rounds() < horizon {
            return Err(WaypointError::HorizonMismatch {
                covered: self.rounds(),
                requested: horizon,
            });
        }
        if self.closed {
            let gap = (self.waypoints[0] - self.waypoints[self.waypoints.len() - 1]).norm();
            if gap > 1e-9 {
                return Err(WaypointError::NotClosed { gap });
            }
        }
        Ok(())
    }

    /// Per-round drone positions for rounds `1..=horizon` (index 0 is round 1).
    pub fn expand(&self, horizon: usize) -> Result<Vec<Vec2>, WaypointError> {
        self.check(horizon)?;
        Ok((1..=horizon).map(|t| self.position_at_round(t)).collect())
    }
}

impl std::fmt::Display for WaypointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WaypointError::NoWaypoints => write!(f, "trajectory needs at least two waypoints"),
            WaypointError::ZeroDwell => write!(f, "dwell must be positive"),
            WaypointError::NotClosed { gap } => {
                write!(f, "closed trajectory ends {gap} m from its start")
            }
            WaypointError::HorizonMismatch { covered, requested } => write!(
                f,
                "trajectory covers {covered} rounds but {requested} were requested"
            ),
        }
    }
}

impl std::error::Error for WaypointError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Fraction of each device's samples drawn from its dominant class.
    pub label_skew: f64,
    /// Distance scale between class means.
    pub separation: f64,
    pub test_samples: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            label_skew: 0.0,
            separation: 1.0,
            test_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx(IdxSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Least squares on one-hot targets (a quadratic objective).
    Quadratic,
    /// L2-regularized multinomial logistic regression.
    #[default]
    Logistic,
    /// One ReLU hidden layer with softmax output (nonconvex).
    TinyMlp,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Logistic => "logistic",
            ModelKind::TinyMlp => "tiny-mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quadratic" => Ok(ModelKind::Quadratic),
            "logistic" => Ok(ModelKind::Logistic),
            "tiny-mlp" => Ok(ModelKind::TinyMlp),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub l2_reg: f64,
    pub hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logistic,
            l2_reg: 1e-2,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VelocityMode {
    /// Scale the velocity onto the `v_max` disk.
    #[default]
    Radial,
    /// Clamp each axis to `±v_max/√2`.
    Componentwise,
}

/// Tuning knobs for the optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub trust_radius: f64,
    pub placement_tol: f64,
    pub placement_max_iters: usize,
    pub velocity_mode: VelocityMode,
    pub closed_loop: bool,
    pub horizon_max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            trust_radius: 5.0,
            placement_tol: 0.01,
            placement_max_iters: 50,
            velocity_mode: VelocityMode::Radial,
            closed_loop: false,
            horizon_max_iters: 300,
        }
    }
}

/// A fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub devices: Vec<DeviceState>,
    pub radio: RadioEnvironment,
    pub constants: LearningConstants,
    /// Number of aggregation rounds `T`.
    pub horizon: usize,
    /// Rounds per waypoint `κ`.
    pub dwell: usize,
    /// Maximum distance between consecutive waypoints.
    pub v_max: f64,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub learning_rate: f64,
    pub target_loss: Option<f64>,
    pub solver: SolverOptions,
}

impl Scenario {
    /// Scenario with default radio and learning constants.
    pub fn with_devices(devices: Vec<DeviceState>) -> Self {
        let constants = LearningConstants::default();
        Self {
            devices,
            radio: RadioEnvironment::default(),
            learning_rate: 1.0 / constants.lipschitz,
            constants,
            horizon: 100,
            dwell: 5,
            v_max: 5.0,
            seed: 0,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            target_loss: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.devices.is_empty() {
            return Err(ScenarioError::invalid("devices", "at least one [device] is required"));
        }
        for d in &self.devices {
            d.validate()?;
        }
        for (i, a) in self.devices.iter().enumerate() {
            if self.devices[..i].iter().any(|b| b.id == a.id) {
                return Err(ScenarioError::invalid(
                    format!("device[{}].id", a.id),
                    "duplicate device id",
                ));
            }
        }
        self.radio.validate()?;
        self.constants.validate()?;
        if self.horizon == 0 {
            return Err(ScenarioError::invalid("run.horizon", "must be positive"));
        }
        if self.dwell == 0 {
            return Err(ScenarioError::invalid("run.dwell", "must be positive"));
        }
        if self.horizon % self.dwell != 0 {
            return Err(ScenarioError::HorizonNotDivisible {
                horizon: self.horizon,
                dwell: self.dwell,
            });
        }
        if !(self.v_max >= 0.0 && self.v_max.is_finite()) {
            return Err(ScenarioError::invalid("run.v_max", "must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ScenarioError::invalid("run.learning_rate", "must be positive"));
        }
        if !(self.model.l2_reg >= 0.0 && self.model.l2_reg.is_finite()) {
            return Err(ScenarioError::invalid("run.l2_reg", "must be nonnegative"));
        }
        if self.model.hidden == 0 {
            return Err(ScenarioError::invalid("run.hidden", "must be positive"));
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.classes < 2 {
                return Err(ScenarioError::invalid("run.classes", "need at least two classes"));
            }
            if !(0.0..=1.0).contains(&s.label_skew) {
                return Err(ScenarioError::invalid("run.label_skew", "must lie in [0, 1]"));
            }
            if !(s.separation > 0.0 && s.separation.is_finite()) {
                return Err(ScenarioError::invalid("run.separation", "must be positive"));
            }
        }
        let o = &self.solver;
        if !(o.trust_radius > 0.0) {
            return Err(ScenarioError::invalid("run.trust_radius", "must be positive"));
        }
        if !(o.placement_tol > 0.0) {
            return Err(ScenarioError::invalid("run.placement_tol", "must be positive"));
        }
        Ok(())
    }

    /// Total number of samples `D`.
    pub fn total_samples(&self) -> f64 {
        self.devices.iter().map(|d| d.dataset_size as f64).sum()
    }

    /// Number of waypoint steps `T/κ`.
    pub fn waypoint_steps(&self) -> usize {
        self.horizon / self.dwell
    }

    pub fn initial_positions(&self) -> Vec<Vec2> {
        self.devices.iter().map(|d| d.position).collect()
    }

    /// Serialize to the scenario file format. Parsing the output yields an
    /// equal scenario.
    pub fn to_text(&self) -> String {
        scenario_file::serialize(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr_to_variance(0.0, 1.0), 1.0);
        assert!((psnr_to_variance(30.0, 1.0) - 1e-3).abs() < 1e-15);
        assert!((psnr_to_variance(5.0, 1.0) - 0.316_227_766_016_837_94).abs() < 1e-15);
        assert!((psnr_to_variance(10.0, 2.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn radio_defaults_match_reference_table() {
        let r = RadioEnvironment::default();
        assert_eq!(r.altitude, 20.0);
        assert_eq!(r.noise_psd, 10f64.powf(-17.4));
        assert_eq!(r.carrier, 1e9);
        assert_eq!(r.waterfall, 0.053);
        assert_eq!(r.pathloss_exp, 3.4);
        assert_eq!(r.los_mode, LosMode::Approximate);
        assert!(r.supports_greedy_velocity());
    }

    #[test]
    fn trajectory_round_mapping() {
        let t = Trajectory::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)],
            3,
            false,
        );
        assert_eq!(t.rounds(), 6);
        let rounds = t.expand(6).unwrap();
        assert_eq!(rounds[0], Vec2::new(1.0, 0.0));
        assert_eq!(rounds[2], Vec2::new(1.0, 0.0));
        assert_eq!(rounds[3], Vec2::new(2.0, 0.0));
        assert!(matches!(
            t.expand(7),
            Err(WaypointError::HorizonMismatch { .. })
        ));
        assert_eq!(t.max_step(), 1.0);
    }

    #[test]
    fn closed_trajectory_must_return() {
        let t = Trajectory::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], 1, true);
        assert!(matches!(t.check(1), Err(WaypointError::NotClosed { .. })));
        let s = Trajectory::stationary(Vec2::new(3.0, 4.0), 10, 5);
        assert_eq!(s.waypoints.len(), 3);
        s.check(10).unwrap();
    }

    #[test]
    fn device_validation_names_the_field() {
        let mut d = DeviceState::new(3, Vec2::zeros());
        d.dataset_size = 0;
        let err = d.validate().unwrap_err();
        assert!(err.to_string().contains("D_i"), "{err}");
        d.dataset_size = 10;
        d.fading_mean = 0.0;
        assert!(d.validate().unwrap_err().to_string().contains("fading_mean"));
    }
}
