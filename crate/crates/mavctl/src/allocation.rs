//! Direction-aware control allocation.
//!
//! Maps a desired wrench `u* = [M_B, T]` to per-motor thrusts by solving a
//! weighted box-constrained least-squares problem
//!
//! `min  |A(d) f - u*|^2_W + lambda |f|^2   s.t.  per-motor thrust bounds`
//!
//! for every admissible rotation-direction vector `d`, keeping the cheapest
//! solution. Motors are pinned to normal rotation unless explicitly enabled
//! for bidirectional use (which [`apply_failure`] does for the motor opposite
//! a failed one). A hysteresis rule suppresses direction reversals on motors
//! that changed direction recently, relaxing itself when the achievable cost
//! would degrade too much.

use crate::dynamics::{MavParams, N_MOTORS};
use crate::qp::{solve_box_lsq, BoxQpSolution};

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("every motor is marked failed; vehicle uncontrollable")]
    Uncontrollable,
    #[error("motor index {0} out of range")]
    InvalidMotor(usize),
}

/// Per-motor rotation directions: `false` = normal (positive thrust),
/// `true` = inverted (negative thrust).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DirectionVector {
    bits: [bool; N_MOTORS],
}

impl DirectionVector {
    pub fn all_normal() -> Self {
        DirectionVector {
            bits: [false; N_MOTORS],
        }
    }

    pub fn from_bits(bits: [bool; N_MOTORS]) -> Self {
        DirectionVector { bits }
    }

    pub fn is_inverted(&self, motor: usize) -> bool {
        self.bits[motor]
    }

    pub fn set(&mut self, motor: usize, inverted: bool) {
        self.bits[motor] = inverted;
    }

    pub fn bits(&self) -> &[bool; N_MOTORS] {
        &self.bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotorStatus {
    Healthy,
    Failed,
    /// Reversal allowed; bounds split by direction.
    Bidirectional,
}

/// Weights, regularization, hysteresis and actuator status.
#[derive(Debug, Clone)]
pub struct AllocationConfig {
    /// Wrench residual weight; roll/pitch/thrust are prioritized over yaw.
    pub weight: Matrix4<f64>,
    /// Thrust-magnitude regularizer; must be positive for a unique optimum.
    pub lambda: f64,
    /// Direction-reversal hysteresis window [s].
    pub t_hyst: f64,
    /// Relative cost-degradation threshold that triggers hysteresis
    /// relaxation; scaled by `|u*|^2_W`.
    pub epsilon_rel: f64,
    pub status: [MotorStatus; N_MOTORS],
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            weight: Matrix4::from_diagonal(&Vector4::new(10.0, 10.0, 1.0, 10.0)),
            lambda: 1e-4,
            t_hyst: 0.5,
            epsilon_rel: 1e-3,
            status: [MotorStatus::Healthy; N_MOTORS],
        }
    }
}

/// Last direction-change bookkeeping for the hysteresis rule.
#[derive(Debug, Clone)]
pub struct HysteresisState {
    pub directions: DirectionVector,
    pub last_change: [f64; N_MOTORS],
}

impl Default for HysteresisState {
    fn default() -> Self {
        HysteresisState {
            directions: DirectionVector::all_normal(),
            last_change: [f64::NEG_INFINITY; N_MOTORS],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AllocationResult {
    /// Per-motor thrusts [N].
    pub f: SVector<f64, N_MOTORS>,
    pub d: DirectionVector,
    /// `A(d) f`, the wrench actually produced.
    pub achieved: Vector4<f64>,
    /// Weighted residual plus regularization at the optimum.
    pub cost: f64,
    /// True where a motor sits at a thrust bound.
    pub saturated: [bool; N_MOTORS],
    /// Roll/pitch/thrust rows lost full rank over the healthy motor set.
    pub degraded: bool,
}

/// Direction-dependent moment ratio.
fn km(inverted: bool, params: &MavParams) -> f64 {
    if inverted {
        params.km_neg
    } else {
        params.km_pos
    }
}

/// Allocation matrix `A(d)`: rows are roll arm, pitch arm, yaw moment
/// ratio with the alternating sign pattern of the hexacopter layout, and
/// collective thrust.
pub fn allocation_matrix(d: &DirectionVector, params: &MavParams) -> SMatrix<f64, 4, N_MOTORS> {
    let l = params.arm_length;
    let mut a = SMatrix::<f64, 4, N_MOTORS>::zeros();
    for i in 0..N_MOTORS {
        let phi = params.motor_angles[i];
        let yaw_sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        a[(0, i)] = l * phi.sin();
        a[(1, i)] = -l * phi.cos();
        a[(2, i)] = yaw_sign * km(d.is_inverted(i), params);
        a[(3, i)] = 1.0;
    }
    a
}

/// Thrust interval available to a motor given its status and direction.
fn motor_bounds(status: MotorStatus, inverted: bool, params: &MavParams) -> (f64, f64) {
    match status {
        MotorStatus::Failed => (0.0, 0.0),
        _ => {
            if inverted {
                (params.f_min_neg, params.f_max_neg)
            } else {
                (params.f_min_pos, params.f_max_pos)
            }
        }
    }
}

/// Weighted box-constrained least squares for a fixed direction set.
/// Returns the exact minimizer and its cost.
pub fn solve_fixed_d(
    a: &SMatrix<f64, 4, N_MOTORS>,
    u_star: &Vector4<f64>,
    lb: &SVector<f64, N_MOTORS>,
    ub: &SVector<f64, N_MOTORS>,
    weight: &Matrix4<f64>,
    lambda: f64,
) -> (SVector<f64, N_MOTORS>, f64, BoxQpSolution<N_MOTORS>) {
    let w_inv = weight
        .try_inverse()
        .expect("wrench weight must be positive definite");
    let sol = solve_box_lsq(a, u_star, &w_inv, lambda, lb, ub);
    let f = sol.x;
    let resid = a * f - u_star;
    let cost = (resid.transpose() * weight * resid)[0] + lambda * f.norm_squared();
    (f, cost, sol)
}

/// Unconstrained pseudo-inverse baseline, normal rotation everywhere.
pub fn pseudo_inverse_allocate(
    u_star: &Vector4<f64>,
    params: &MavParams,
) -> SVector<f64, N_MOTORS> {
    let a = allocation_matrix(&DirectionVector::all_normal(), params);
    let aat = a * a.transpose();
    a.transpose() * aat.try_inverse().expect("allocation matrix has full row rank") * u_star
}

/// All direction vectors compatible with the actuator status: failed and
/// plain-healthy motors stay normal, bidirectional motors contribute both
/// options. Sorted lexicographically (fewest reversals first).
fn admissible_directions(status: &[MotorStatus; N_MOTORS]) -> Vec<DirectionVector> {
    let bidir: Vec<usize> = (0..N_MOTORS)
        .filter(|&i| status[i] == MotorStatus::Bidirectional)
        .collect();
    let mut out = Vec::with_capacity(1 << bidir.len());
    for mask in 0u32..(1 << bidir.len()) {
        let mut d = DirectionVector::all_normal();
        for (k, &i) in bidir.iter().enumerate() {
            d.set(i, mask >> k & 1 == 1);
        }
        out.push(d);
    }
    out.sort();
    out
}

fn roll_pitch_thrust_controllable(status: &[MotorStatus; N_MOTORS], params: &MavParams) -> bool {
    let a = allocation_matrix(&DirectionVector::all_normal(), params);
    let mut m = SMatrix::<f64, 3, N_MOTORS>::zeros();
    for i in 0..N_MOTORS {
        if status[i] == MotorStatus::Failed {
            continue;
        }
        m[(0, i)] = a[(0, i)];
        m[(1, i)] = a[(1, i)];
        m[(2, i)] = a[(3, i)];
    }
    let gram = m * m.transpose();
    gram.determinant().abs() > 1e-9
}

/// Enumerated direction-aware allocation with reversal hysteresis.
///
/// The cheapest of all admissible fixed-direction solutions wins unless it
/// reverses a motor that changed direction within the last `t_hyst`
/// seconds; in that case the cheapest non-reversing solution is taken,
/// with the window iteratively halved whenever the cost penalty for
/// honoring it exceeds the epsilon criterion. `hysteresis` is updated with
/// the directions actually commanded.
pub fn allocate(
    u_star: &Vector4<f64>,
    now: f64,
    config: &AllocationConfig,
    params: &MavParams,
    hysteresis: &mut HysteresisState,
) -> Result<AllocationResult, AllocationError> {
    if config.status.iter().all(|&s| s == MotorStatus::Failed) {
        return Err(AllocationError::Uncontrollable);
    }
    let degraded = !roll_pitch_thrust_controllable(&config.status, params);

    struct Candidate {
        d: DirectionVector,
        f: SVector<f64, N_MOTORS>,
        cost: f64,
        qp: BoxQpSolution<N_MOTORS>,
        lb: SVector<f64, N_MOTORS>,
        ub: SVector<f64, N_MOTORS>,
    }

    let mut candidates: Vec<Candidate> = admissible_directions(&config.status)
        .into_iter()
        .map(|d| {
            let a = allocation_matrix(&d, params);
            let mut lb = SVector::<f64, N_MOTORS>::zeros();
            let mut ub = SVector::<f64, N_MOTORS>::zeros();
            for i in 0..N_MOTORS {
                let (lo, hi) = motor_bounds(config.status[i], d.is_inverted(i), params);
                lb[i] = lo;
                ub[i] = hi;
            }
            let (f, cost, qp) = solve_fixed_d(&a, u_star, &lb, &ub, &config.weight, config.lambda);
            Candidate { d, f, cost, qp, lb, ub }
        })
        .collect();
    candidates.sort_by(|x, y| x.cost.total_cmp(&y.cost).then(x.d.cmp(&y.d)));

    let best_cost = candidates[0].cost;
    let u_scale = (u_star.transpose() * config.weight * u_star)[0];
    let epsilon = config.epsilon_rel * u_scale + 1e-12;

    // Shrink the hysteresis window until a good-enough non-reversing
    // candidate exists (an empty window admits the global best).
    let mut window = config.t_hyst;
    let chosen = loop {
        let respects = |c: &Candidate| {
            (0..N_MOTORS).all(|i| {
                c.d.is_inverted(i) == hysteresis.directions.is_inverted(i)
                    || now - hysteresis.last_change[i] >= window
            })
        };
        if let Some(c) = candidates.iter().find(|c| respects(c)) {
            if c.cost - best_cost <= epsilon {
                break c;
            }
        }
        window /= 2.0;
        if window < 1e-4 {
            break &candidates[0];
        }
    };

    let mut saturated = [false; N_MOTORS];
    for i in 0..N_MOTORS {
        saturated[i] = chosen.qp.at_bound[i] && chosen.ub[i] - chosen.lb[i] > 0.0;
    }
    for i in 0..N_MOTORS {
        if chosen.d.is_inverted(i) != hysteresis.directions.is_inverted(i) {
            hysteresis.last_change[i] = now;
        }
    }
    hysteresis.directions = chosen.d;

    let a = allocation_matrix(&chosen.d, params);
    Ok(AllocationResult {
        f: chosen.f,
        d: chosen.d,
        achieved: a * chosen.f,
        cost: chosen.cost,
        saturated,
        degraded,
    })
}

/// Outcome of a fail-safe reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureReconfig {
    /// Motor switched to bidirectional mode, if any.
    pub bidirectional_enabled: Option<usize>,
    /// Both motors of an opposing pair are now failed; roll/pitch/thrust
    /// control authority is degraded but allocation still proceeds.
    pub opposing_pair_conflict: bool,
}

/// Mark a motor failed and enable bidirectional mode on the diametrically
/// opposite one.
pub fn apply_failure(
    motor: usize,
    config: &mut AllocationConfig,
) -> Result<FailureReconfig, AllocationError> {
    if motor >= N_MOTORS {
        return Err(AllocationError::InvalidMotor(motor));
    }
    config.status[motor] = MotorStatus::Failed;
    let opposite = (motor + N_MOTORS / 2) % N_MOTORS;
    if config.status[opposite] == MotorStatus::Failed {
        Ok(FailureReconfig {
            bidirectional_enabled: None,
            opposing_pair_conflict: true,
        })
    } else {
        config.status[opposite] = MotorStatus::Bidirectional;
        Ok(FailureReconfig {
            bidirectional_enabled: Some(opposite),
            opposing_pair_conflict: false,
        })
    }
}
