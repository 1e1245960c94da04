//! Minimal-coordinate linearization of the discrete dynamics and tracking
//! cost.
//!
//! Attitude perturbations use the 3-dim rotation vector `dtheta` of the
//! local quaternion increment, so the perturbation state is
//! `dx = [dr, dtheta, dv, domega]` in R^12. Discrete Jacobians are obtained
//! by chaining the exact RK4 step derivatives through the chart maps around
//! the current trajectory iterate: `A = D-(x_next) * A_ambient * D+(x)`,
//! which keeps them consistent with the integrator to machine precision.

use crate::dynamics::{
    rk4_step_with_jacobians, ControlInput, MavParams, MavState, AMBIENT_DIM,
};
use crate::nmpc::{NmpcConfig, ReferencePoint, TrackingErrors};
use crate::quat::{skew, Quat};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

/// Perturbation-state dimension.
pub const MIN_DIM: usize = 12;

/// Chart derivative `D+ = dx_ambient/d(dx)` at the chart center (13x12).
fn chart_plus(q: &Quat) -> SMatrix<f64, AMBIENT_DIM, MIN_DIM> {
    let mut j = SMatrix::<f64, AMBIENT_DIM, MIN_DIM>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    let mq = 0.5 * q.left_mul_matrix().fixed_view::<4, 3>(0, 0).clone_owned();
    j.fixed_view_mut::<4, 3>(3, 3).copy_from(&mq);
    j.fixed_view_mut::<3, 3>(7, 6).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(10, 9).copy_from(&Matrix3::identity());
    j
}

/// Chart derivative `D- = d(dx)/dx_ambient` at the chart center (12x13).
fn chart_minus(q: &Quat) -> SMatrix<f64, MIN_DIM, AMBIENT_DIM> {
    let mut j = SMatrix::<f64, MIN_DIM, AMBIENT_DIM>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    let nq = 2.0
        * q.inverse()
            .left_mul_matrix()
            .fixed_view::<3, 4>(0, 0)
            .clone_owned();
    j.fixed_view_mut::<3, 4>(3, 3).copy_from(&nq);
    j.fixed_view_mut::<3, 3>(6, 7).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(9, 10).copy_from(&Matrix3::identity());
    j
}

/// 12-dim state difference `a ⊟ b` (quaternion part via rotation vector).
pub fn state_boxminus(a: &MavState, b: &MavState) -> SVector<f64, MIN_DIM> {
    let mut d = SVector::<f64, MIN_DIM>::zeros();
    d.fixed_rows_mut::<3>(0).copy_from(&(a.r - b.r));
    d.fixed_rows_mut::<3>(3).copy_from(&a.q.boxminus(&b.q));
    d.fixed_rows_mut::<3>(6).copy_from(&(a.v - b.v));
    d.fixed_rows_mut::<3>(9).copy_from(&(a.omega - b.omega));
    d
}

/// Retraction of a 12-dim perturbation onto the state manifold.
pub fn state_boxplus(x: &MavState, d: &SVector<f64, MIN_DIM>) -> MavState {
    MavState {
        r: x.r + Vector3::from(d.fixed_rows::<3>(0)),
        q: x.q.boxplus(&Vector3::from(d.fixed_rows::<3>(3))),
        v: x.v + Vector3::from(d.fixed_rows::<3>(6)),
        omega: x.omega + Vector3::from(d.fixed_rows::<3>(9)),
    }
}

/// Discrete Jacobians of one integrator step in minimal coordinates,
/// together with the state it lands on.
pub fn discrete_jacobians(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
    dt: f64,
) -> (MavState, SMatrix<f64, MIN_DIM, MIN_DIM>, SMatrix<f64, MIN_DIM, 4>) {
    let (next, a_amb, b_amb) = rk4_step_with_jacobians(state, input, params, dt);
    let minus = chart_minus(&next.q);
    let plus = chart_plus(&state.q);
    (next, minus * a_amb * plus, minus * b_amb)
}

/// Continuous-time Jacobians of the perturbation dynamics at a state
/// (chart centered there). Mostly useful for verifying model structure:
/// at zero body rate the attitude block reduces to `dtheta_dot = domega`.
pub fn minimal_continuous_jacobians(
    state: &MavState,
    input: &ControlInput,
    params: &MavParams,
) -> (SMatrix<f64, MIN_DIM, MIN_DIM>, SMatrix<f64, MIN_DIM, 4>) {
    let (f_amb, g_amb) = ambient_continuous(state, input, params);
    let minus = chart_minus(&state.q);
    let plus = chart_plus(&state.q);
    (minus * f_amb * plus, minus * g_amb)
}

/// Ambient continuous Jacobians, shared with the integrator.
pub(crate) use crate::dynamics::continuous_jacobians_at as ambient_continuous;

/// Attitude increment of the reference relative to the iterate, with the
/// double-cover flip that guarantees shortest-rotation errors.
fn attitude_increment(q: &Quat, q_ref: &Quat) -> Quat {
    (q.inverse() * *q_ref).canonicalized()
}

/// Tracking errors between a state/input pair and its reference.
pub fn tracking_errors(
    state: &MavState,
    input: &ControlInput,
    reference: &ReferencePoint,
) -> TrackingErrors {
    let eps = attitude_increment(&state.q, &reference.q);
    TrackingErrors {
        e_r: state.r - reference.r,
        e_v: state.v - reference.v,
        e_q: eps.vector_part(),
        e_omega: state.omega - eps.rotation_matrix() * reference.omega,
        e_u: input.as_vector4() - reference.u.as_vector4(),
    }
}

/// Quadratic (Gauss-Newton) expansion of the error costs around a point,
/// in minimal coordinates.
#[derive(Debug, Clone)]
pub struct CostExpansion {
    pub hess_x: SMatrix<f64, MIN_DIM, MIN_DIM>,
    pub grad_x: SVector<f64, MIN_DIM>,
    pub hess_u: SMatrix<f64, 4, 4>,
    pub grad_u: SVector<f64, 4>,
    /// Cost value at the expansion point.
    pub value: f64,
}

pub fn cost_expansion(
    state: &MavState,
    input: &ControlInput,
    reference: &ReferencePoint,
    config: &NmpcConfig,
    terminal: bool,
) -> CostExpansion {
    let eps = attitude_increment(&state.q, &reference.q);
    let e = tracking_errors(state, input, reference);

    let mut hess_x = SMatrix::<f64, MIN_DIM, MIN_DIM>::zeros();
    let mut grad_x = SVector::<f64, MIN_DIM>::zeros();

    // position / velocity: identity Jacobians on their own blocks
    hess_x
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(2.0 * config.q_r));
    grad_x
        .fixed_rows_mut::<3>(0)
        .copy_from(&(2.0 * config.q_r * e.e_r));
    hess_x
        .fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(2.0 * config.q_v));
    grad_x
        .fixed_rows_mut::<3>(6)
        .copy_from(&(2.0 * config.q_v * e.e_v));

    // attitude error: e_q = vec(dq^-1 ⊗ eps), J = 1/2 ([eps_v]x - eps_w I)
    let j_q = 0.5 * (skew(&eps.vector_part()) - Matrix3::identity() * eps.w);
    let hq = hess_x.fixed_view::<3, 3>(3, 3) + 2.0 * j_q.transpose() * config.q_q * j_q;
    hess_x.fixed_view_mut::<3, 3>(3, 3).copy_from(&hq);
    let gq = grad_x.fixed_rows::<3>(3) + 2.0 * j_q.transpose() * config.q_q * e.e_q;
    grad_x.fixed_rows_mut::<3>(3).copy_from(&gq);

    // rate error couples dtheta and domega
    let m = eps.rotation_matrix() * reference.omega;
    let j_w_theta = -skew(&m);
    let q_w = 2.0 * config.q_omega;
    let h33 = hess_x.fixed_view::<3, 3>(3, 3) + j_w_theta.transpose() * q_w * j_w_theta;
    hess_x.fixed_view_mut::<3, 3>(3, 3).copy_from(&h33);
    let h39 = hess_x.fixed_view::<3, 3>(3, 9) + j_w_theta.transpose() * q_w;
    hess_x.fixed_view_mut::<3, 3>(3, 9).copy_from(&h39);
    let h93 = hess_x.fixed_view::<3, 3>(9, 3) + q_w * j_w_theta;
    hess_x.fixed_view_mut::<3, 3>(9, 3).copy_from(&h93);
    hess_x.fixed_view_mut::<3, 3>(9, 9).copy_from(&q_w);
    let g3 = grad_x.fixed_rows::<3>(3) + j_w_theta.transpose() * q_w * e.e_omega;
    grad_x.fixed_rows_mut::<3>(3).copy_from(&g3);
    grad_x
        .fixed_rows_mut::<3>(9)
        .copy_from(&(q_w * e.e_omega));

    let mut value = (e.e_r.transpose() * config.q_r * e.e_r)[0]
        + (e.e_v.transpose() * config.q_v * e.e_v)[0]
        + (e.e_q.transpose() * config.q_q * e.e_q)[0]
        + (e.e_omega.transpose() * config.q_omega * e.e_omega)[0];

    let (hess_u, grad_u) = if terminal {
        (SMatrix::<f64, 4, 4>::zeros(), SVector::<f64, 4>::zeros())
    } else {
        value += (e.e_u.transpose() * config.q_u * e.e_u)[0];
        (2.0 * config.q_u, 2.0 * config.q_u * e.e_u)
    };

    CostExpansion {
        hess_x,
        grad_x,
        hess_u,
        grad_u,
        value,
    }
}

/// Full per-stage linearization used by the backward pass.
#[derive(Debug, Clone)]
pub struct StageLinearization {
    pub a: SMatrix<f64, MIN_DIM, MIN_DIM>,
    pub b: SMatrix<f64, MIN_DIM, 4>,
    pub cost: CostExpansion,
}

/// Linearize the discrete dynamics and expand the stage cost at one
/// trajectory point.
pub fn linearize(
    state: &MavState,
    input: &ControlInput,
    reference: &ReferencePoint,
    params: &MavParams,
    dt: f64,
    config: &NmpcConfig,
) -> StageLinearization {
    let (_, a, b) = discrete_jacobians(state, input, params, dt);
    StageLinearization {
        a,
        b,
        cost: cost_expansion(state, input, reference, config, false),
    }
}
