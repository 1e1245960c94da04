//! Rigid-body multirotor dynamics and fixed-step integration.
//!
//! Newton-Euler model with body moments and collective thrust as inputs:
//!
//! - `r_dot = v`
//! - `q_dot = 1/2 q ⊗ [omega, 0]`
//! - `v_dot = (T/m) C_WB e3 + g`
//! - `omega_dot = J^-1 (M - omega x J omega)`
//!
//! Aerodynamic drag and propeller gyroscopic moments are neglected. The
//! integrator is classical RK4 on the 13-dim ambient state with a quaternion
//! renormalization after each step; [`rk4_step_with_jacobians`] additionally
//! chains exact derivatives through all four stages and the renormalization,
//! so the discrete Jacobians agree with the integrator to machine precision.

use crate::allocation::{allocation_matrix, DirectionVector};
use crate::quat::{skew, Quat};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use thiserror::Error;

/// Number of motors; the airframe is a flat hexacopter.
pub const N_MOTORS: usize = 6;

/// Ambient state dimension: position, quaternion, velocity, body rate.
pub const AMBIENT_DIM: usize = 13;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state or input")]
    NonFinite,
    #[error("time step must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Full vehicle state: world position, body-to-world attitude, world
/// velocity, body angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MavState {
    /// Position in world frame [m].
    pub r: Vector3<f64>,
    /// Unit quaternion, body to world.
    pub q: Quat,
    /// Velocity in world frame [m/s].
    pub v: Vector3<f64>,
    /// Angular rate in body frame [rad/s].
    pub omega: Vector3<f64>,
}

impl MavState {
    pub fn hover_at(r: Vector3<f64>) -> Self {
        MavState {
            r,
            q: Quat::identity(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().all(|x| x.is_finite())
            && self.q.as_vector4().iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }

    pub(crate) fn to_ambient(self) -> SVector<f64, AMBIENT_DIM> {
        let mut x = SVector::<f64, AMBIENT_DIM>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.r);
        x.fixed_rows_mut::<4>(3).copy_from(&self.q.as_vector4());
        x.fixed_rows_mut::<3>(7).copy_from(&self.v);
        x.fixed_rows_mut::<3>(10).copy_from(&self.omega);
        x
    }

    pub(crate) fn from_ambient(x: &SVector<f64, AMBIENT_DIM>) -> Self {
        MavState {
            r: x.fixed_rows::<3>(0).into(),
            q: Quat::from_vector4(x.fixed_rows::<4>(3).into()),
            v: x.fixed_rows::<3>(7).into(),
            omega: x.fixed_rows::<3>(10).into(),
        }
    }
}

/// Control input: body moments plus collective thrust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Body-frame moments [N m].
    pub moment: Vector3<f64>,
    /// Collective thrust along body z [N]; negative only with all motors
    /// reversed.
    pub thrust: f64,
}

impl ControlInput {
    pub fn zero() -> Self {
        ControlInput {
            moment: Vector3::zeros(),
            thrust: 0.0,
        }
    }

    pub fn new(moment: Vector3<f64>, thrust: f64) -> Self {
        ControlInput { moment, thrust }
    }

    pub fn is_finite(&self) -> bool {
        self.moment.iter().all(|x| x.is_finite()) && self.thrust.is_finite()
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.moment.x, self.moment.y, self.moment.z, self.thrust)
    }

    pub fn from_vector4(u: &Vector4<f64>) -> Self {
        ControlInput {
            moment: Vector3::new(u.x, u.y, u.z),
            thrust: u.w,
        }
    }
}

/// Physical parameters of the vehicle and its motor set.
#[derive(Debug, Clone)]
pub struct MavParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Inertia tensor in body frame [kg m^2], symmetric positive definite.
    pub inertia: Matrix3<f64>,
    /// Gravitational acceleration in world frame [m/s^2].
    pub gravity: Vector3<f64>,
    /// Motor arm length [m].
    pub arm_length: f64,
    /// Motor count; fixed at six for this airframe.
    pub n_motors: usize,
    /// Motor position angles from body x toward y [rad].
    pub motor_angles: [f64; N_MOTORS],
    /// Thrust coefficient, normal rotation [N s^2].
    pub kt_pos: f64,
    /// Thrust coefficient, inverted rotation [N s^2].
    pub kt_neg: f64,
    /// Moment-to-thrust ratio, normal rotation [m].
    pub km_pos: f64,
    /// Moment-to-thrust ratio, inverted rotation [m].
    pub km_neg: f64,
    /// Per-motor thrust bounds, normal rotation [N].
    pub f_min_pos: f64,
    pub f_max_pos: f64,
    /// Per-motor thrust bounds, inverted rotation [N] (both non-positive).
    pub f_min_neg: f64,
    pub f_max_neg: f64,
}

impl Default for MavParams {
    /// A 550 mm hexacopter with asymmetric propellers: inverted rotation is
    /// markedly less effective than normal.
    fn default() -> Self {
        MavParams {
            mass: 2.65,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.045, 0.045, 0.085)),
            gravity: Vector3::new(0.0, 0.0, -9.81),
            arm_length: 0.275,
            n_motors: N_MOTORS,
            motor_angles: hexacopter_motor_angles(),
            kt_pos: 8.54e-6,
            kt_neg: 5.98e-6,
            km_pos: 0.0161,
            km_neg: 0.0184,
            f_min_pos: 0.0,
            f_max_pos: 9.5,
            f_min_neg: -6.0,
            f_max_neg: 0.0,
        }
    }
}

impl MavParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.mass <= 0.0 {
            return Err(DynamicsError::InvalidParams("mass must be positive".into()));
        }
        if self.arm_length <= 0.0 {
            return Err(DynamicsError::InvalidParams(
                "arm length must be positive".into(),
            ));
        }
        if self.n_motors != N_MOTORS {
            return Err(DynamicsError::InvalidParams(format!(
                "expected {N_MOTORS} motors, got {}",
                self.n_motors
            )));
        }
        let sym = (self.inertia - self.inertia.transpose()).abs().max();
        if sym > 1e-12 {
            return Err(DynamicsError::InvalidParams("inertia not symmetric".into()));
        }
        if self.inertia.symmetric_eigenvalues().min() <= 0.0 {
            return Err(DynamicsError::InvalidParams(
                "inertia not positive definite".into(),
            ));
        }
        if !(self.f_min_neg <= self.f_max_neg
            && self.f_max_neg <= 0.0
            && 0.0 <= self.f_min_pos
            && self.f_min_pos <= self.f_max_pos)
        {
            return Err(DynamicsError::InvalidParams(
                "thrust bounds must satisfy f_min_neg <= f_max_neg <= 0 <= f_min_pos <= f_max_pos"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia
            .try_inverse()
            .expect("inertia validated as positive definite")
    }

    /// Thrust magnitude per motor that balances gravity exactly.
    pub fn hover_thrust_per_motor(&self) -> f64 {
        self.mass * self.gravity.norm() / self.n_motors as f64
    }

    /// Equilibrium input: zero moments, thrust balancing gravity.
    pub fn hover_input(&self) -> ControlInput {
        ControlInput::new(Vector3::zeros(), self.mass * self.gravity.norm())
    }
}

/// Standard flat-hexacopter layout: motors at 30 + 60 k degrees.
pub fn hexacopter_motor_angles() -> [f64; N_MOTORS] {
    let mut a = [0.0; N_MOTORS];
    for (i, angle) in a.iter_mut().enumerate() {
        *angle = (30.0 + 60.0 * i as f64).to_radians();
    }
    a
}

/// Time derivative of the full state.
#[derive(Debug, Clone, Copy)]
pub struct StateDerivative {
    pub r_dot: Vector3<f64>,
    pub q_dot: Vector4<f64>,
    pub v_dot: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

/// Angular acceleration from the Euler equation.
pub fn angular_accel(
    omega: &Vector3<f64>,
    moment: &Vector3<f64>,
    inertia: &Matrix3<f64>,
    inertia_inv: &Matrix3<f64>,
) -> Vector3<f64> {
    inertia_inv * (moment - omega.cross(&(inertia * omega)))
}

/// Newton-Euler state derivative. Total on finite inputs.
pub fn continuous_dynamics(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
) -> StateDerivative {
    let j_inv = params.inertia_inv();
    continuous_dynamics_cached(state, input, params, &j_inv)
}

fn continuous_dynamics_cached(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
    inertia_inv: &Matrix3<f64>,
) -> StateDerivative {
    let q_dot = 0.5
        * (state.q * Quat::new(state.omega.x, state.omega.y, state.omega.z, 0.0)).as_vector4();
    let v_dot =
        state.q.rotation_matrix() * Vector3::new(0.0, 0.0, input.thrust / params.mass)
            + params.gravity;
    let omega_dot = angular_accel(&state.omega, &input.moment, &params.inertia, inertia_inv);
    StateDerivative {
        r_dot: state.v,
        q_dot,
        v_dot,
        omega_dot,
    }
}

fn derivative_vector(
    x: &SVector<f64, AMBIENT_DIM>,
    input: &ControlInput,
    params: &MavParams,
    inertia_inv: &Matrix3<f64>,
) -> SVector<f64, AMBIENT_DIM> {
    let s = MavState::from_ambient(x);
    let d = continuous_dynamics_cached(&s, input, params, inertia_inv);
    let mut out = SVector::<f64, AMBIENT_DIM>::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&d.r_dot);
    out.fixed_rows_mut::<4>(3).copy_from(&d.q_dot);
    out.fixed_rows_mut::<3>(7).copy_from(&d.v_dot);
    out.fixed_rows_mut::<3>(10).copy_from(&d.omega_dot);
    out
}

/// Jacobian of `C(q) a` with respect to the (not necessarily unit)
/// quaternion, for the quadratic-form rotation matrix used throughout.
fn rotate_jacobian_q(q: &Quat, a: &Vector3<f64>) -> SMatrix<f64, 3, 4> {
    let v = q.vector_part();
    let w = q.w;
    let dv = -2.0 * a * v.transpose()
        + 2.0 * v * a.transpose()
        + Matrix3::identity() * (2.0 * v.dot(a))
        - 2.0 * w * skew(a);
    let dw = 2.0 * (w * a + v.cross(a));
    let mut m = SMatrix::<f64, 3, 4>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&dv);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&dw);
    m
}

/// Ambient-state Jacobians of [`continuous_dynamics`] at a state:
/// `F = df/dx` (13x13) and `G = df/du` (13x4).
pub(crate) fn continuous_jacobians_at(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
) -> (
    SMatrix<f64, AMBIENT_DIM, AMBIENT_DIM>,
    SMatrix<f64, AMBIENT_DIM, 4>,
) {
    let j_inv = params.inertia_inv();
    continuous_jacobians(&state.to_ambient(), input, params, &j_inv)
}

fn continuous_jacobians(
    x: &SVector<f64, AMBIENT_DIM>,
    input: &ControlInput,
    params: &MavParams,
    inertia_inv: &Matrix3<f64>,
) -> (
    SMatrix<f64, AMBIENT_DIM, AMBIENT_DIM>,
    SMatrix<f64, AMBIENT_DIM, 4>,
) {
    let s = MavState::from_ambient(x);
    let mut f = SMatrix::<f64, AMBIENT_DIM, AMBIENT_DIM>::zeros();
    let mut g = SMatrix::<f64, AMBIENT_DIM, 4>::zeros();

    // r_dot = v
    f.fixed_view_mut::<3, 3>(0, 7).copy_from(&Matrix3::identity());

    // q_dot = 1/2 q ⊗ p(omega): linear in q (right mul) and in omega (left mul).
    let p_omega = Quat::new(s.omega.x, s.omega.y, s.omega.z, 0.0);
    f.fixed_view_mut::<4, 4>(3, 3)
        .copy_from(&(0.5 * p_omega.right_mul_matrix()));
    let lq = s.q.left_mul_matrix();
    f.fixed_view_mut::<4, 3>(3, 10)
        .copy_from(&(0.5 * lq.fixed_view::<4, 3>(0, 0)));

    // v_dot = (T/m) C(q) e3 + g
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    f.fixed_view_mut::<3, 4>(7, 3)
        .copy_from(&(rotate_jacobian_q(&s.q, &e3) * (input.thrust / params.mass)));
    g.fixed_view_mut::<3, 1>(7, 3)
        .copy_from(&(s.q.rotation_matrix() * e3 / params.mass));

    // omega_dot = J^-1 (M - omega x J omega)
    let j_omega = params.inertia * s.omega;
    f.fixed_view_mut::<3, 3>(10, 10)
        .copy_from(&(inertia_inv * (skew(&j_omega) - skew(&s.omega) * params.inertia)));
    g.fixed_view_mut::<3, 3>(10, 0).copy_from(inertia_inv);

    (f, g)
}

/// One classical RK4 step with post-step quaternion renormalization.
pub fn integrate_step(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
    dt: f64,
) -> Result<MavState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidTimestep(dt));
    }
    if !state.is_finite() || !input.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let j_inv = params.inertia_inv();
    Ok(rk4_step_cached(state, input, params, &j_inv, dt))
}

pub(crate) fn rk4_step_cached(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
    inertia_inv: &Matrix3<f64>,
    dt: f64,
) -> MavState {
    let x = state.to_ambient();
    let k1 = derivative_vector(&x, input, params, inertia_inv);
    let k2 = derivative_vector(&(x + 0.5 * dt * k1), input, params, inertia_inv);
    let k3 = derivative_vector(&(x + 0.5 * dt * k2), input, params, inertia_inv);
    let k4 = derivative_vector(&(x + dt * k3), input, params, inertia_inv);
    let x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let mut next = MavState::from_ambient(&x_next);
    next.q = next.q.normalized();
    next
}

/// RK4 step together with exact discrete Jacobians of the step map,
/// including the quaternion renormalization.
pub fn rk4_step_with_jacobians(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
    dt: f64,
) -> (
    MavState,
    SMatrix<f64, AMBIENT_DIM, AMBIENT_DIM>,
    SMatrix<f64, AMBIENT_DIM, 4>,
) {
    let j_inv = params.inertia_inv();
    let x = state.to_ambient();

    let k1 = derivative_vector(&x, input, params, &j_inv);
    let (f1, g1) = continuous_jacobians(&x, input, params, &j_inv);

    let x2 = x + 0.5 * dt * k1;
    let k2 = derivative_vector(&x2, input, params, &j_inv);
    let (f2, g2) = continuous_jacobians(&x2, input, params, &j_inv);

    let x3 = x + 0.5 * dt * k2;
    let k3 = derivative_vector(&x3, input, params, &j_inv);
    let (f3, g3) = continuous_jacobians(&x3, input, params, &j_inv);

    let x4 = x + dt * k3;
    let k4 = derivative_vector(&x4, input, params, &j_inv);
    let (f4, g4) = continuous_jacobians(&x4, input, params, &j_inv);

    let eye = SMatrix::<f64, AMBIENT_DIM, AMBIENT_DIM>::identity();
    // dk_i/dx chained through the stage states.
    let d1 = f1;
    let d2 = f2 * (eye + 0.5 * dt * d1);
    let d3 = f3 * (eye + 0.5 * dt * d2);
    let d4 = f4 * (eye + dt * d3);
    let mut a = eye + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);

    // dk_i/du chained the same way.
    let e1 = g1;
    let e2 = f2 * (0.5 * dt * e1) + g2;
    let e3 = f3 * (0.5 * dt * e2) + g3;
    let e4 = f4 * (dt * e3) + g4;
    let mut b = (dt / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4);

    let x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    // Renormalization: q -> q/|q|, Jacobian (I - u u^T)/|q| on the q block.
    let q_raw: Vector4<f64> = x_next.fixed_rows::<4>(3).into();
    let n = q_raw.norm();
    let u = q_raw / n;
    let jn = (nalgebra::Matrix4::identity() - u * u.transpose()) / n;
    let a_q = jn * a.fixed_view::<4, AMBIENT_DIM>(3, 0).clone_owned();
    a.fixed_view_mut::<4, AMBIENT_DIM>(3, 0).copy_from(&a_q);
    let b_q = jn * b.fixed_view::<4, 4>(3, 0).clone_owned();
    b.fixed_view_mut::<4, 4>(3, 0).copy_from(&b_q);

    let mut next = MavState::from_ambient(&x_next);
    next.q = Quat::from_vector4(u);
    (next, a, b)
}

/// Wrench produced by per-motor thrusts `f` under rotation directions `d`:
/// the allocation matrix applied to `f`.
pub fn motor_wrench(
    f: &SVector<f64, N_MOTORS>,
    d: &DirectionVector,
    params: &MavParams,
) -> ControlInput {
    let a = allocation_matrix(d, params);
    let u = a * f;
    ControlInput::from_vector4(&u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> MavParams {
        MavParams::default()
    }

    // Independent derivative oracle: same physics, different formulas.
    // Quaternion kinematics via the explicit 4x4 rate matrix and the
    // rotation matrix via the element-wise Shepperd-style expression.
    fn oracle_derivative(
        x: &SVector<f64, 13>,
        input: &ControlInput,
        p: &MavParams,
    ) -> SVector<f64, 13> {
        let (qx, qy, qz, qw) = (x[3], x[4], x[5], x[6]);
        let (wx, wy, wz) = (x[10], x[11], x[12]);
        let mut out = SVector::<f64, 13>::zeros();
        out[0] = x[7];
        out[1] = x[8];
        out[2] = x[9];
        // q_dot = 1/2 * Omega * q, with Omega arranged for right-multiplied
        // body rates (vector-first storage).
        out[3] = 0.5 * (qw * wx - qz * wy + qy * wz);
        out[4] = 0.5 * (qz * wx + qw * wy - qx * wz);
        out[5] = 0.5 * (-qy * wx + qx * wy + qw * wz);
        out[6] = 0.5 * (-qx * wx - qy * wy - qz * wz);
        // world-frame acceleration via explicit matrix elements
        let r13 = 2.0 * (qx * qz + qw * qy);
        let r23 = 2.0 * (qy * qz - qw * qx);
        let r33 = qw * qw - qx * qx - qy * qy + qz * qz;
        let a = input.thrust / p.mass;
        out[7] = r13 * a + p.gravity.x;
        out[8] = r23 * a + p.gravity.y;
        out[9] = r33 * a + p.gravity.z;
        // Euler equation, diagonal-by-hand inverse not assumed
        let om = Vector3::new(wx, wy, wz);
        let tau = input.moment - om.cross(&(p.inertia * om));
        let dom = p.inertia.try_inverse().unwrap() * tau;
        out[10] = dom.x;
        out[11] = dom.y;
        out[12] = dom.z;
        out
    }

    fn oracle_rk4(
        x: &SVector<f64, 13>,
        input: &ControlInput,
        p: &MavParams,
        dt: f64,
    ) -> SVector<f64, 13> {
        let k1 = oracle_derivative(x, input, p);
        let k2 = oracle_derivative(&(x + 0.5 * dt * k1), input, p);
        let k3 = oracle_derivative(&(x + 0.5 * dt * k2), input, p);
        let k4 = oracle_derivative(&(x + dt * k3), input, p);
        x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }

    fn random_state(seed: u64) -> MavState {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        MavState {
            r: Vector3::new(next(), next(), next()) * 5.0,
            q: Quat::from_axis_angle(Vector3::new(next(), next(), next() + 1.1), next() * 3.0),
            v: Vector3::new(next(), next(), next()) * 3.0,
            omega: Vector3::new(next(), next(), next()) * 2.0,
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = params();
        let s = MavState::hover_at(Vector3::new(0.0, 0.0, 1.0));
        let d = continuous_dynamics(&s, &p.hover_input(), &p);
        assert_relative_eq!(d.v_dot, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(d.omega_dot, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(d.r_dot, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn gyroscopic_term_vanishes_on_principal_axis() {
        let p = params();
        let mut s = MavState::hover_at(Vector3::zeros());
        s.omega = Vector3::new(0.0, 0.0, 1.0);
        let d = continuous_dynamics(&s, &ControlInput::zero(), &p);
        assert_relative_eq!(d.omega_dot, Vector3::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn v_dot_matches_finite_difference_of_oracle() {
        let p = params();
        let input = ControlInput::new(Vector3::new(0.2, -0.1, 0.05), 20.0);
        for seed in 0..20 {
            let s = random_state(seed + 7);
            let x0 = s.to_ambient();
            // central difference of the oracle's velocity trajectory
            let h = 1e-5;
            let steps = 4;
            let mut fwd = x0;
            let mut bwd = x0;
            for _ in 0..steps {
                fwd = oracle_rk4(&fwd, &input, &p, h / steps as f64);
                bwd = oracle_rk4(&bwd, &input, &p, -h / steps as f64);
            }
            let v_dot_fd = (fwd.fixed_rows::<3>(7) - bwd.fixed_rows::<3>(7)) / (2.0 * h);
            let d = continuous_dynamics(&s, &input, &p);
            assert_relative_eq!(d.v_dot, Vector3::from(v_dot_fd), epsilon = 1e-8);
        }
    }

    #[test]
    fn hover_step_leaves_state_unchanged() {
        let p = params();
        let s = MavState::hover_at(Vector3::new(1.0, -2.0, 3.0));
        let next = integrate_step(&s, &p.hover_input(), &p, 0.01).unwrap();
        assert_relative_eq!(next.r, s.r, epsilon = 1e-12);
        assert_relative_eq!(next.v, s.v, epsilon = 1e-12);
        assert_relative_eq!(next.omega, s.omega, epsilon = 1e-12);
        assert!((next.q.as_vector4() - s.q.as_vector4()).norm() < 1e-12);
    }

    #[test]
    fn torque_free_spin_accumulates_exact_yaw() {
        let p = params();
        let mut s = MavState::hover_at(Vector3::zeros());
        s.omega = Vector3::new(0.0, 0.0, 2.0);
        // free rotation about the principal z axis; thrust balances gravity
        let input = p.hover_input();
        let dt = 1e-3;
        for _ in 0..1000 {
            s = integrate_step(&s, &input, &p, dt).unwrap();
        }
        assert_relative_eq!(s.q.yaw(), 2.0, epsilon = 1e-6);
        assert_relative_eq!(s.omega.z, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn rk4_exhibits_fourth_order_convergence() {
        let p = params();
        let s0 = random_state(42);
        let input = ControlInput::new(Vector3::new(0.3, -0.2, 0.1), 30.0);
        let horizon = 0.2;
        let run = |dt: f64| {
            let n = (horizon / dt).round() as usize;
            let mut s = s0;
            for _ in 0..n {
                s = integrate_step(&s, &input, &p, dt).unwrap();
            }
            s.to_ambient()
        };
        let reference = run(2e-4);
        let e_coarse = (run(2e-3) - reference).norm();
        let e_fine = (run(1e-3) - reference).norm();
        assert!(
            e_coarse / e_fine >= 15.0,
            "expected ~16x error reduction, got {:.2}",
            e_coarse / e_fine
        );
    }

    #[test]
    fn integrate_rejects_non_finite_state() {
        let p = params();
        let mut s = MavState::hover_at(Vector3::zeros());
        s.v.x = f64::NAN;
        assert_eq!(
            integrate_step(&s, &p.hover_input(), &p, 0.01),
            Err(DynamicsError::NonFinite)
        );
    }

    #[test]
    fn quaternion_norm_conserved_over_many_steps() {
        let p = params();
        let mut s = random_state(3);
        let input = ControlInput::new(Vector3::new(0.05, -0.02, 0.01), 26.0);
        for _ in 0..100_000 {
            s = integrate_step(&s, &input, &p, 1e-3).unwrap();
            if s.r.norm() > 1e4 {
                s.r = Vector3::zeros();
                s.v = Vector3::zeros();
            }
        }
        assert!((s.q.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn torque_free_rotational_energy_conserved() {
        let p = params();
        let mut s = MavState::hover_at(Vector3::zeros());
        s.omega = Vector3::new(1.2, -0.7, 2.0);
        let input = p.hover_input(); // zero moment
        let energy = |s: &MavState| 0.5 * s.omega.dot(&(p.inertia * s.omega));
        let e0 = energy(&s);
        for _ in 0..10_000 {
            s = integrate_step(&s, &input, &p, 1e-3).unwrap();
        }
        assert!(((energy(&s) - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn dynamics_translation_invariant() {
        let p = params();
        let input = ControlInput::new(Vector3::new(0.1, 0.2, -0.1), 22.0);
        let s = random_state(11);
        let mut shifted = s;
        shifted.r += Vector3::new(100.0, -50.0, 20.0);
        let d0 = continuous_dynamics(&s, &input, &p);
        let d1 = continuous_dynamics(&shifted, &input, &p);
        assert_relative_eq!(d0.v_dot, d1.v_dot, epsilon = 1e-12);
        assert_relative_eq!(d0.omega_dot, d1.omega_dot, epsilon = 1e-12);
        assert_relative_eq!(d0.q_dot, d1.q_dot, epsilon = 1e-12);
    }

    #[test]
    fn ambient_jacobians_match_finite_differences() {
        let p = params();
        let dt = 0.01;
        for seed in 0..5 {
            let s = random_state(seed);
            let input = ControlInput::new(Vector3::new(0.2, -0.3, 0.05), 24.0);
            let (_, a, b) = rk4_step_with_jacobians(&s, &input, &p, dt);
            let x0 = s.to_ambient();
            let h = 1e-6;
            for j in 0..13 {
                let mut xp = x0;
                let mut xm = x0;
                xp[j] += h;
                xm[j] -= h;
                let sp = rk4_step_cached(&MavState::from_ambient(&xp), &input, &p, &p.inertia_inv(), dt);
                let sm = rk4_step_cached(&MavState::from_ambient(&xm), &input, &p, &p.inertia_inv(), dt);
                let col = (sp.to_ambient() - sm.to_ambient()) / (2.0 * h);
                for i in 0..13 {
                    let denom = col[i].abs().max(1.0);
                    assert!(
                        (a[(i, j)] - col[i]).abs() / denom < 1e-5,
                        "A({i},{j}) mismatch: {} vs fd {}",
                        a[(i, j)],
                        col[i]
                    );
                }
            }
            let u0 = input.as_vector4();
            for j in 0..4 {
                let mut up = u0;
                let mut um = u0;
                up[j] += h;
                um[j] -= h;
                let sp = rk4_step_cached(&s, &ControlInput::from_vector4(&up), &p, &p.inertia_inv(), dt);
                let sm = rk4_step_cached(&s, &ControlInput::from_vector4(&um), &p, &p.inertia_inv(), dt);
                let col = (sp.to_ambient() - sm.to_ambient()) / (2.0 * h);
                for i in 0..13 {
                    let denom = col[i].abs().max(1.0);
                    assert!(
                        (b[(i, j)] - col[i]).abs() / denom < 1e-5,
                        "B({i},{j}) mismatch: {} vs fd {}",
                        b[(i, j)],
                        col[i]
                    );
                }
            }
        }
    }

    #[test]
    fn motor_wrench_symmetric_thrusts_cancel_moments() {
        let p = params();
        let f = SVector::<f64, 6>::repeat(2.5);
        let u = motor_wrench(&f, &DirectionVector::all_normal(), &p);
        assert_relative_eq!(u.moment, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(u.thrust, 15.0, epsilon = 1e-12);
    }

    #[test]
    fn motor_wrench_first_column_layout() {
        // Single motor at 30 degrees: roll arm l/2, pitch arm -l cos(30),
        // yaw moment +km, unit thrust.
        let mut p = params();
        p.arm_length = 0.275;
        let mut f = SVector::<f64, 6>::zeros();
        f[0] = 1.0;
        let u = motor_wrench(&f, &DirectionVector::all_normal(), &p);
        assert_relative_eq!(u.moment.x, 0.275 * 0.5, epsilon = 1e-12);
        assert_relative_eq!(u.moment.y, -0.275 * (30f64.to_radians()).cos(), epsilon = 1e-12);
        assert_relative_eq!(u.moment.z, p.km_pos, epsilon = 1e-12);
        assert_relative_eq!(u.thrust, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn motor_wrench_pseudo_inverse_round_trip() {
        let p = params();
        let d = DirectionVector::all_normal();
        let a = allocation_matrix(&d, &p);
        let a_pinv = a.transpose() * (a * a.transpose()).try_inverse().unwrap();
        for seed in 0..10 {
            let mut s = seed as u64 + 100;
            let mut next = move || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let u_star = Vector4::new(next() * 0.5, next() * 0.5, next() * 0.1, 20.0 + next() * 5.0);
            let f = a_pinv * u_star;
            let u = motor_wrench(&f, &d, &p);
            assert_relative_eq!(u.as_vector4(), u_star, epsilon = 1e-9);
        }
    }
}
