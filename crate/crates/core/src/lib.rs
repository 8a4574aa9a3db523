//! Simulation and optimization toolkit for IRS-assisted UAV OFDMA downlink
//! systems.
//!
//! The toolkit models the composite frequency-/spatial-selective channel that
//! arises when a UAV base station is assisted by an intelligent reflecting
//! surface (IRS), and maximizes the system sum-rate by jointly optimizing the
//! UAV trajectory, IRS user scheduling, subcarrier assignment, and power via
//! alternating dual-decomposition and successive convex approximation.
//!
//! Module map:
//! - [`geometry`]: distances and direction cosines among UAV, IRS, and users
//! - [`channel`]: LoS composite channel under IRS phase control
//! - [`bounds`]: four-mode parametric lower/upper bound gains and rates
//! - [`ra_solver`]: resource allocation / IRS scheduling by dual decomposition
//! - [`trajectory_solver`]: UAV trajectory design by SCA
//! - [`planner`]: alternating optimization, baselines, sweeps
//! - [`fading_mc`]: Rician fading Monte Carlo outage evaluation
//! - [`cli`]: scenario ingestion and result emission

pub mod bounds;
pub mod channel;
pub mod cli;
pub mod fading_mc;
pub mod geometry;
pub mod planner;
pub mod ra_solver;
pub mod scenario;
pub mod trajectory_solver;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Errors shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// UAV sits exactly on the vertical axis through the IRS or a user, so
    /// the horizontal angle quotients are undefined.
    #[error("degenerate geometry: zero horizontal separation between {0}")]
    DegenerateGeometry(&'static str),

    /// Approximation parameter outside the open interval (0, 0.25).
    #[error("approximation parameter alpha = {0} outside (0, 0.25)")]
    InvalidAlpha(f64),

    /// Positive power assigned to a subcarrier with a zero time-share.
    #[error("inconsistent allocation: p_tilde = {0} > 0 with t = 0")]
    InconsistentAllocation(f64),

    /// Water level undefined because the power-constraint multiplier is zero.
    #[error("water level undefined: power multiplier is zero")]
    ZeroDual,

    /// Minimum-rate constraints cannot be met.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The SCA inner problem admits no feasible point.
    #[error("trajectory subproblem infeasible: {0}")]
    SubproblemInfeasible(String),

    /// Scenario configuration error.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
