//! Quaternion-based nonlinear model predictive control.
//!
//! The tracking problem minimizes quadratic costs on position, velocity,
//! attitude, body-rate and input errors over a fixed horizon, subject to the
//! discretized rigid-body dynamics and per-channel input bounds. It is
//! solved by Gauss-Newton multiple shooting: linearize the dynamics and cost
//! along the current trajectory iterate in minimal coordinates, solve the
//! resulting LQ subproblem with a Riccati backward recursion (input bounds
//! handled by a box-constrained feedforward at every stage), then retract
//! the perturbations onto the state manifold through a defect-free forward
//! rollout with stage feedback, under a backtracking line search on the
//! total cost.

pub mod linearize;

use crate::dynamics::{rk4_step_cached, ControlInput, MavParams, MavState};
use crate::qp::solve_box_qp;
use crate::quat::Quat;
use linearize::{
    cost_expansion, state_boxminus, CostExpansion, StageLinearization, MIN_DIM,
};
use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NmpcError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} reference points, got {got}")]
    BadReference { expected: usize, got: usize },
    #[error("solver diverged: non-finite cost")]
    Diverged,
}

/// One point of the reference trajectory.
#[derive(Debug, Clone, Copy)]
pub struct ReferencePoint {
    /// Desired position [m].
    pub r: Vector3<f64>,
    /// Desired attitude (unit).
    pub q: Quat,
    /// Desired velocity [m/s].
    pub v: Vector3<f64>,
    /// Desired body rate, in the reference body frame [rad/s].
    pub omega: Vector3<f64>,
    /// Reference input (feedforward).
    pub u: ControlInput,
}

impl ReferencePoint {
    /// Stationary hover at a position with a fixed yaw.
    pub fn hover(r: Vector3<f64>, yaw: f64, params: &MavParams) -> Self {
        ReferencePoint {
            r,
            q: Quat::from_yaw(yaw),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
            u: params.hover_input(),
        }
    }
}

/// Tracking error terms; all but `e_q` are Euclidean differences, the
/// attitude error is the vector part of the shortest relative rotation.
#[derive(Debug, Clone, Copy)]
pub struct TrackingErrors {
    pub e_r: Vector3<f64>,
    pub e_v: Vector3<f64>,
    pub e_q: Vector3<f64>,
    pub e_omega: Vector3<f64>,
    pub e_u: Vector4<f64>,
}

/// Gains, horizon and solver knobs.
#[derive(Debug, Clone)]
pub struct NmpcConfig {
    pub q_r: Matrix3<f64>,
    pub q_v: Matrix3<f64>,
    pub q_q: Matrix3<f64>,
    pub q_omega: Matrix3<f64>,
    /// Must be positive definite; regularizes the Gauss-Newton Hessian.
    pub q_u: Matrix4<f64>,
    pub horizon_steps: usize,
    /// Discretization step [s].
    pub dt: f64,
    /// Per-channel input bounds `[Mx, My, Mz, T]`.
    pub u_lb: Vector4<f64>,
    pub u_ub: Vector4<f64>,
    pub max_iterations: usize,
    /// Stop when one iteration improves the cost by less than
    /// `tol * (1 + |cost|)`.
    pub tol: f64,
}

impl NmpcConfig {
    /// Default tuning for the reference airframe: 2 s horizon at 10 ms,
    /// moderate attitude gain.
    pub fn default_for(params: &MavParams) -> Self {
        let mg = params.mass * params.gravity.norm();
        NmpcConfig {
            q_r: Matrix3::identity() * 10.0,
            q_v: Matrix3::identity() * 2.0,
            q_q: Matrix3::identity() * 50.0,
            q_omega: Matrix3::identity() * 1.0,
            q_u: Matrix4::from_diagonal(&Vector4::new(5.0, 5.0, 5.0, 0.1)),
            horizon_steps: 200,
            dt: 0.01,
            u_lb: Vector4::new(-6.0, -6.0, -0.5, 0.5),
            u_ub: Vector4::new(6.0, 6.0, 0.5, 2.2 * mg),
            max_iterations: 20,
            tol: 1e-9,
        }
    }

    /// Same tuning with the high orientation gain variant.
    pub fn with_high_attitude_gain(mut self) -> Self {
        self.q_q = Matrix3::identity() * 500.0;
        self
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let psd = |m: &Matrix3<f64>, name: &str| -> Result<(), NmpcError> {
            if (m - m.transpose()).abs().max() > 1e-9 {
                return Err(NmpcError::InvalidConfig(format!("{name} not symmetric")));
            }
            if m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(NmpcError::InvalidConfig(format!("{name} not PSD")));
            }
            Ok(())
        };
        psd(&self.q_r, "q_r")?;
        psd(&self.q_v, "q_v")?;
        psd(&self.q_q, "q_q")?;
        psd(&self.q_omega, "q_omega")?;
        if self.q_u.symmetric_eigenvalues().min() <= 0.0 {
            return Err(NmpcError::InvalidConfig("q_u must be positive definite".into()));
        }
        if self.horizon_steps == 0 {
            return Err(NmpcError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(NmpcError::InvalidConfig("dt must be positive".into()));
        }
        for i in 0..4 {
            if self.u_lb[i] > self.u_ub[i] {
                return Err(NmpcError::InvalidConfig(format!(
                    "infeasible bounds on input channel {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Solver output: optimal input sequence, the predicted trajectory it
/// produces, and the stage feedback gains from the final backward pass.
#[derive(Debug, Clone)]
pub struct Solution {
    pub inputs: Vec<ControlInput>,
    pub states: Vec<MavState>,
    pub gains: Vec<SMatrix<f64, 4, MIN_DIM>>,
    pub cost: f64,
    pub iterations: usize,
    /// Max |du-gradient| over stages and channels strictly inside bounds.
    pub stationarity: f64,
}

impl Solution {
    /// Receding-horizon warm start: drop the first input, repeat the last.
    pub fn shifted(&self) -> Vec<ControlInput> {
        let mut u: Vec<ControlInput> = self.inputs[1..].to_vec();
        if let Some(&last) = self.inputs.last() {
            u.push(last);
        }
        u
    }
}

struct BackwardPassResult {
    feedforward: Vec<Vector4<f64>>,
    gains: Vec<SMatrix<f64, 4, MIN_DIM>>,
    stationarity: f64,
}

/// Gauss-Newton multiple-shooting NMPC solver.
///
/// Holds per-solve workspace; construct one instance per thread.
pub struct NmpcSolver {
    config: NmpcConfig,
    params: MavParams,
    inertia_inv: Matrix3<f64>,
    stages: Vec<StageLinearization>,
    states: Vec<MavState>,
    inputs: Vec<ControlInput>,
    trial_states: Vec<MavState>,
    trial_inputs: Vec<ControlInput>,
}

impl NmpcSolver {
    pub fn new(config: NmpcConfig, params: MavParams) -> Result<Self, NmpcError> {
        config.validate()?;
        params
            .validate()
            .map_err(|e| NmpcError::InvalidConfig(e.to_string()))?;
        let inertia_inv = params.inertia_inv();
        Ok(NmpcSolver {
            config,
            params,
            inertia_inv,
            stages: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            trial_states: Vec::new(),
            trial_inputs: Vec::new(),
        })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.config
    }

    fn clamp_input(&self, u: Vector4<f64>) -> ControlInput {
        let mut c = u;
        for i in 0..4 {
            c[i] = c[i].clamp(self.config.u_lb[i], self.config.u_ub[i]);
        }
        ControlInput::from_vector4(&c)
    }

    fn total_cost(
        &self,
        states: &[MavState],
        inputs: &[ControlInput],
        reference: &[ReferencePoint],
    ) -> f64 {
        let n = self.config.horizon_steps;
        let mut cost = 0.0;
        for k in 0..n {
            cost += cost_expansion(&states[k], &inputs[k], &reference[k], &self.config, false)
                .value;
        }
        cost += cost_expansion(
            &states[n],
            &ControlInput::zero(),
            &reference[n],
            &self.config,
            true,
        )
        .value;
        cost
    }

    fn rollout(
        &self,
        initial: &MavState,
        inputs: &[ControlInput],
        states: &mut Vec<MavState>,
    ) {
        states.clear();
        states.push(*initial);
        let mut x = *initial;
        for u in inputs {
            x = rk4_step_cached(&x, u, &self.params, &self.inertia_inv, self.config.dt);
            states.push(x);
        }
    }

    fn backward_pass(&mut self, terminal: &CostExpansion) -> BackwardPassResult {
        let n = self.config.horizon_steps;
        let mut p_mat = terminal.hess_x;
        let mut p_vec = terminal.grad_x;
        let mut feedforward = vec![Vector4::zeros(); n];
        let mut gains = vec![SMatrix::<f64, 4, MIN_DIM>::zeros(); n];
        let mut stationarity: f64 = 0.0;

        for k in (0..n).rev() {
            let st = &self.stages[k];
            let q_x = st.cost.grad_x + st.a.transpose() * p_vec;
            let q_u = st.cost.grad_u + st.b.transpose() * p_vec;
            let q_xx = st.cost.hess_x + st.a.transpose() * p_mat * st.a;
            let mut q_uu = st.cost.hess_u + st.b.transpose() * p_mat * st.b;
            q_uu = 0.5 * (q_uu + q_uu.transpose());
            let q_ux = st.b.transpose() * p_mat * st.a;

            // box-constrained feedforward relative to the current input
            let u_bar = self.inputs[k].as_vector4();
            let du_lb = self.config.u_lb - u_bar;
            let du_ub = self.config.u_ub - u_bar;
            let qp = solve_box_qp(&q_uu, &q_u, &du_lb, &du_ub);
            let k_ff = qp.x;

            // feedback only on unclamped channels
            let mut k_fb = SMatrix::<f64, 4, MIN_DIM>::zeros();
            let free: Vec<usize> = (0..4).filter(|&i| !qp.at_bound[i]).collect();
            if !free.is_empty() {
                let nf = free.len();
                let mut h = nalgebra::DMatrix::<f64>::zeros(nf, nf);
                let mut rhs = nalgebra::DMatrix::<f64>::zeros(nf, MIN_DIM);
                for (a, &i) in free.iter().enumerate() {
                    for (b, &j) in free.iter().enumerate() {
                        h[(a, b)] = q_uu[(i, j)];
                    }
                    for c in 0..MIN_DIM {
                        rhs[(a, c)] = q_ux[(i, c)];
                    }
                }
                let sol = h
                    .lu()
                    .solve(&rhs)
                    .expect("free-channel Hessian is positive definite");
                for (a, &i) in free.iter().enumerate() {
                    for c in 0..MIN_DIM {
                        k_fb[(i, c)] = -sol[(a, c)];
                    }
                }
            }

            for i in 0..4 {
                let inside = u_bar[i] > self.config.u_lb[i] + 1e-12
                    && u_bar[i] < self.config.u_ub[i] - 1e-12;
                if inside {
                    stationarity = stationarity.max(q_u[i].abs());
                }
            }

            // value function recursion with the clamped feedforward
            p_mat = q_xx
                + k_fb.transpose() * q_uu * k_fb
                + k_fb.transpose() * q_ux
                + q_ux.transpose() * k_fb;
            p_mat = 0.5 * (p_mat + p_mat.transpose());
            p_vec = q_x
                + k_fb.transpose() * (q_uu * k_ff + q_u)
                + q_ux.transpose() * k_ff;

            feedforward[k] = k_ff;
            gains[k] = k_fb;
        }

        BackwardPassResult {
            feedforward,
            gains,
            stationarity,
        }
    }

    /// Solve the tracking problem from `initial_state` along `reference`
    /// (`horizon_steps + 1` points). `warm_start` seeds the input sequence.
    pub fn solve(
        &mut self,
        initial_state: &MavState,
        reference: &[ReferencePoint],
        warm_start: Option<&[ControlInput]>,
    ) -> Result<Solution, NmpcError> {
        let n = self.config.horizon_steps;
        if reference.len() != n + 1 {
            return Err(NmpcError::BadReference {
                expected: n + 1,
                got: reference.len(),
            });
        }
        if !initial_state.is_finite() {
            return Err(NmpcError::Diverged);
        }

        // initial input sequence: warm start or reference feedforward
        self.inputs.clear();
        match warm_start {
            Some(w) if w.len() == n => {
                for u in w {
                    self.inputs.push(self.clamp_input(u.as_vector4()));
                }
            }
            _ => {
                for r in reference.iter().take(n) {
                    self.inputs.push(self.clamp_input(r.u.as_vector4()));
                }
            }
        }
        let initial = *initial_state;
        let mut states = std::mem::take(&mut self.states);
        self.rollout(&initial, &self.inputs, &mut states);
        self.states = states;
        let mut cost = self.total_cost(&self.states, &self.inputs, reference);
        if !cost.is_finite() {
            return Err(NmpcError::Diverged);
        }

        let mut gains = vec![SMatrix::<f64, 4, MIN_DIM>::zeros(); n];
        let mut stationarity = f64::INFINITY;
        let mut iterations = 0;

        for _ in 0..self.config.max_iterations {
            iterations += 1;

            // linearize along the current iterate
            self.stages.clear();
            for k in 0..n {
                self.stages.push(linearize::linearize(
                    &self.states[k],
                    &self.inputs[k],
                    &reference[k],
                    &self.params,
                    self.config.dt,
                    &self.config,
                ));
            }
            let terminal = cost_expansion(
                &self.states[n],
                &ControlInput::zero(),
                &reference[n],
                &self.config,
                true,
            );

            let bp = self.backward_pass(&terminal);
            gains = bp.gains;
            stationarity = bp.stationarity;

            // line-searched forward rollout with stage feedback
            let mut accepted = false;
            let mut alpha = 1.0;
            while alpha >= 2f64.powi(-10) {
                let mut trial_states = std::mem::take(&mut self.trial_states);
                let mut trial_inputs = std::mem::take(&mut self.trial_inputs);
                trial_states.clear();
                trial_inputs.clear();
                trial_states.push(initial);
                let mut x = initial;
                for k in 0..n {
                    let dx = state_boxminus(&x, &self.states[k]);
                    let u_new = self.inputs[k].as_vector4()
                        + alpha * bp.feedforward[k]
                        + gains[k] * dx;
                    let u = self.clamp_input(u_new);
                    x = rk4_step_cached(&x, &u, &self.params, &self.inertia_inv, self.config.dt);
                    trial_inputs.push(u);
                    trial_states.push(x);
                }
                let trial_cost = self.total_cost(&trial_states, &trial_inputs, reference);
                if trial_cost.is_finite() && trial_cost < cost {
                    std::mem::swap(&mut self.states, &mut trial_states);
                    std::mem::swap(&mut self.inputs, &mut trial_inputs);
                    self.trial_states = trial_states;
                    self.trial_inputs = trial_inputs;
                    let improvement = cost - trial_cost;
                    cost = trial_cost;
                    accepted = true;
                    if improvement < self.config.tol * (1.0 + cost.abs()) {
                        // cost stagnated; stop after this accepted step
                        accepted = false;
                    }
                    break;
                }
                self.trial_states = trial_states;
                self.trial_inputs = trial_inputs;
                alpha /= 2.0;
            }
            if !accepted {
                break;
            }
        }

        if !cost.is_finite() {
            return Err(NmpcError::Diverged);
        }
        Ok(Solution {
            inputs: self.inputs.clone(),
            states: self.states.clone(),
            gains,
            cost,
            iterations,
            stationarity,
        })
    }
}

pub use linearize::tracking_errors;
