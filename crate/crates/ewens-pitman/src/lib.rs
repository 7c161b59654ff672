//! Simulation and exact computation for the two-parameter Ewens-Pitman
//! random partition.
//!
//! The crate has three layers:
//!
//! * scalar kernels ([`numerics`], [`sibuya`]) generic over [`Scalar`], so the
//!   same formulas run on `f64`, on the arbitrary-precision rational [`Exact`],
//!   and on the overflow-safe log-space float [`LogFloat`];
//! * the sequential sampler ([`sampler`]) with block-count statistics
//!   ([`statistics`]), martingale diagnostics ([`martingale`]) and limit
//!   covariance matrices ([`covariance`]);
//! * validation machinery: closed-form moments ([`moments`]), a brute-force
//!   enumeration oracle over exact rationals ([`oracle`]), and deterministic
//!   parallel Monte Carlo experiments ([`montecarlo`]).

pub mod covariance;
pub mod martingale;
pub mod moments;
pub mod montecarlo;
pub mod numerics;
pub mod oracle;
pub mod sampler;
pub mod scalar;
pub mod sibuya;
pub mod statistics;

pub use sampler::{CheckpointSchedule, ModelParams, PartitionState, StepOutcome, TrajectoryRecord};
pub use scalar::Scalar;

/// Arbitrary-precision rational scalar backing the exact code paths.
pub type Exact = num_rational::BigRational;

/// Sign-tracking log-space scalar backing the overflow-safe float paths.
pub type LogFloat = numerics::LogScalar;

/// Shorthand for an `Exact` built from an integer ratio.
pub fn exact(num: i64, den: i64) -> Exact {
    <Exact as Scalar>::from_ratio(num, den)
}
