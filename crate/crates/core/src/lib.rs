//! Smart-charging schedules for vehicle-to-grid (V2G) sessions that balance
//! tariff revenue against Li-ion cyclic degradation.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`thermal`] integrates the coupled cabin/battery temperature ODEs and
//!    produces the per-interval battery temperature profile for a session.
//! 2. [`degradation`] turns battery temperature into semi-empirical calendar
//!    and cyclic capacity-loss terms, including the smooth quadratic cyclic
//!    surrogate used inside the optimizer.
//! 3. [`session`] describes the charging session itself: horizon, tariff,
//!    power/energy bounds, the price-based horizon split between the V2G
//!    player and the battery-degradation player, and feasibility checking.
//! 4. [`qp`] is a small deterministic solver for the resulting convex
//!    quadratic programs (diagonal Hessian, unit and prefix-sum rows).
//! 5. [`equilibrium`] assembles and solves the horizon-splitting potential
//!    game and the weighted-sum alternative, and verifies the exact-potential
//!    identity and the equilibrium property of returned schedules.
//! 6. [`robustness`] compares both approaches under uniform perturbation of
//!    the degradation coefficients via sensitivity and empirical regret.
//!
//! Internal units are kW, kWh, hours, Kelvin and euros throughout; per-unit
//! energy quantities appear only at the configuration boundary.

pub mod degradation;
pub mod equilibrium;
pub mod qp;
pub mod robustness;
pub mod session;
pub mod thermal;

pub use degradation::{BatteryPackSpec, CellDegradationParams, CyclicCoefficients};
pub use equilibrium::{GameInstance, PlayerImprovements, TradeoffPoint, ZetaBundle};
pub use qp::{QuadraticProgram, SolveReport, SolveSettings, SolveStatus};
pub use session::{ChargingSchedule, FeasibilityReport, HorizonSplit, SessionConfig};
pub use thermal::{AmbientSeries, TemperatureProfile, ThermalParams};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input lies outside the physical/mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The ODE integrator produced a non-finite state.
    #[error("integration diverged at t = {time_h:.6} h (step {step_s} s too large?)")]
    Integration { time_h: f64, step_s: f64 },

    /// Configuration validation failed; every violation is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    /// The session cannot reach its terminal energy target.
    #[error("infeasible session: {0}")]
    Infeasible(String),

    /// The QP solver could not produce a usable iterate.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A data file could not be parsed.
    #[error("parse error ({context}): {reason}")]
    Parse { context: String, reason: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn parse(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
