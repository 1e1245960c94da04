//! Fault-tolerant multirotor flight control.
//!
//! A hexacopter control stack built around three pieces that cooperate in
//! closed loop:
//!
//! - [`nmpc`]: quaternion-based nonlinear model predictive control solved by
//!   Gauss-Newton multiple shooting over a 12-dim perturbation state,
//! - [`allocation`]: direction-aware mapping from desired body wrench to
//!   per-motor thrusts via enumerated box-constrained least squares,
//! - [`fault_ekf`]: an extended Kalman filter over per-motor health states
//!   that detects motor failures from inertial measurements alone and
//!   triggers fail-safe reconfiguration.
//!
//! [`dynamics`] provides the shared rigid-body model and integrator,
//! [`motor_map`] the thrust/speed/command conversions, and [`sim`] a
//! deterministic closed-loop simulator with fault injection, logging and
//! metric extraction.

pub mod allocation;
pub mod dynamics;
pub mod fault_ekf;
pub mod motor_map;
pub mod nmpc;
pub mod qp;
pub mod quat;
pub mod sim;

pub use allocation::{
    allocate, allocation_matrix, apply_failure, AllocationConfig, AllocationResult,
    DirectionVector, HysteresisState, MotorStatus,
};
pub use dynamics::{
    continuous_dynamics, integrate_step, motor_wrench, ControlInput, MavParams, MavState, N_MOTORS,
};
pub use fault_ekf::{EkfParams, FaultEkf, HealthBelief, ImuMeasurement};
pub use motor_map::{speed_to_command, thrust_to_speed, CommandTable, MotorCoeffs};
pub use nmpc::{NmpcConfig, NmpcSolver, ReferencePoint, Solution};
pub use quat::Quat;
pub use sim::{Metrics, RunLog, Scenario};
