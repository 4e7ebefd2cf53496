//! Modeling, design analysis, flight control, state estimation, and simulation
//! for a four-link aerial robot with tilting propellers.
//!
//! The platform is a serial chain of four equal links connected by two yaw
//! joints (`q1` between links 1–2, `q2` between links 3–4; links 2–3 are
//! rigidly joined), with one rotor per link tilted by an alternating fixed
//! angle `(-1)^i * beta` about the link axis. Because the rotors move with the
//! joints, every force/torque map is a function of the joint vector `q`.
//!
//! Modules:
//!
//! * [`config`] — platform parameters, controller gains, estimator settings,
//!   and the plain-text `key = value` file format they share.
//! * [`model`] — forward kinematics, frame `{C}` / frame `{CoG}` construction,
//!   allocation matrices, and the joint-dependent inertia tensor.
//! * [`design`] — hovering thrust, z-torque extremes, horizontal-force norm,
//!   aerodynamic interference range, tilt-angle optimization, the feasible
//!   control-torque convex, and the valid joint range.
//! * [`control`] — LQI attitude synthesis (algebraic Riccati), PID position
//!   control with attitude-induced-force compensation, thrust aggregation, and
//!   the stability-constraint checker.
//! * [`estimation`] — geodetic→local conversion, sensor→IMU frame transforms,
//!   complementary attitude filter, and a time-synchronized EKF that accepts
//!   delayed and out-of-order measurements through a fixed-capacity FIFO.
//! * [`sim`] — rigid-body plant (RK4), sensor emulation with delay/noise,
//!   disturbance/payload injection, and scripted scenarios.
//! * [`cli`] — the command-line front end (`design`, `run`, `replay`).

pub mod cli;
pub mod config;
pub mod control;
pub mod design;
pub mod estimation;
pub mod model;
pub mod numerics;
pub mod sim;

use thiserror::Error;

/// Errors produced by modeling, design, control, and estimation operations.
#[derive(Debug, Error)]
pub enum Error {
    /// The hover-balance system for this joint configuration is rank-deficient
    /// (condition number above 1e12), e.g. all rotors collinear: the form
    /// cannot hover and is invalid.
    #[error("singular robot form: hover system condition number {cond:.3e} exceeds 1e12")]
    SingularForm { cond: f64 },

    /// The torque allocation matrix has row rank < 3 while a full-rank
    /// inversion was required.
    #[error("torque allocation matrix is rank deficient (rank {rank} < 3)")]
    RankDeficient { rank: usize },

    /// All generator pairs of the torque convex are parallel; no face normals
    /// exist.
    #[error("degenerate torque convex: all generator pairs are parallel")]
    DegenerateConvex,

    /// The Riccati iteration did not converge within its iteration budget.
    #[error("Riccati iteration failed to converge after {iterations} iterations (residual {residual:.3e})")]
    NotStabilizable { iterations: usize, residual: f64 },

    /// The desired-force vector is too small to extract attitude angles from.
    #[error("degenerate desired force: norm {norm:.3e} N is below 1e-6")]
    DegenerateForce { norm: f64 },

    /// No geodetic reference point has been set.
    #[error("no geodetic reference point set")]
    NoReference,

    /// A sensor's mount transform is not registered with the estimator.
    #[error("unknown sensor frame: {name}")]
    UnknownFrame { name: String },

    /// A measurement is older than the oldest buffered filter node.
    #[error("stale measurement: stamp {stamp:.6} s predates the oldest buffered node {oldest:.6} s")]
    StaleMeasurement { stamp: f64, oldest: f64 },

    /// The plant state became non-finite during integration.
    #[error("non-finite plant state at t = {t:.6} s: {what}")]
    NonFiniteState { t: f64, what: String },

    /// A scenario definition is inconsistent or incomplete.
    #[error("scenario configuration error: {0}")]
    ScenarioConfig(String),

    /// A configuration file failed to parse or validate.
    #[error("configuration error: {0}")]
    Config(String),

    /// An I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
