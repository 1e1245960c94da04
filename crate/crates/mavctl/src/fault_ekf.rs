//! EKF-based motor failure identification.
//!
//! The filter estimates body rate, a per-motor health variable `h_i`, and
//! per-motor thrust `f_i` (15 states). Effective thrust of motor `i` is
//! `L(h_i) f_i` with the scaled logistic `L(h) = 1.05 / (1 + e^-h)`, so a
//! healthy motor sits at `L = 1` with finite `h_bar = L^-1(1)` and a dead
//! one drives `L -> 0`. Prediction propagates the Euler rotational dynamics
//! driven by the effective wrench, mean-reverting health states and
//! first-order thrust tracking of the allocator's reference; the update
//! fuses bias-corrected gyro rates and mass-normalized z-accelerometer
//! collective thrust.
//!
//! A motor is declared failed when the optimistic bound `L(h_i + 3 sigma_i)`
//! drops below one half; flags are latched for the rest of the run.

use crate::allocation::{allocation_matrix, DirectionVector};
use crate::dynamics::{angular_accel, MavParams, N_MOTORS};
use crate::quat::skew;
use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use thiserror::Error;

/// Filter state dimension: 3 rates + 6 health + 6 thrusts.
pub const EKF_DIM: usize = 15;
const H0: usize = 3;
const F0: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum EkfError {
    #[error("filter state became non-finite; reset required")]
    NonFinite,
    #[error("innovation covariance not invertible")]
    SingularInnovation,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Scaled logistic health function.
pub fn logistic(h: f64) -> f64 {
    1.05 / (1.0 + (-h).exp())
}

/// Inverse of [`logistic`] on (0, 1.05).
pub fn logistic_inv(y: f64) -> f64 {
    -(1.05 / y - 1.0).ln()
}

/// Derivative of [`logistic`].
pub fn logistic_deriv(h: f64) -> f64 {
    let l = logistic(h);
    l * (1.0 - l / 1.05)
}

/// Noise densities, time constants and rates.
#[derive(Debug, Clone)]
pub struct EkfParams {
    /// Body-rate process noise density [rad/(s sqrt(Hz))].
    pub sigma_omega: f64,
    /// Health process noise density [1/sqrt(Hz)].
    pub sigma_h: f64,
    /// Thrust process noise density [N/sqrt(Hz)].
    pub sigma_f: f64,
    /// Gyro measurement noise [rad/s].
    pub sigma_gyro: f64,
    /// Collective-thrust measurement noise [N].
    pub sigma_thrust: f64,
    /// Health mean-reversion time constant [s].
    pub tau_h: f64,
    /// Motor thrust time constant [s].
    pub tau_f: f64,
    /// Healthy operating point, `L(h_bar) = 1`.
    pub h_bar: f64,
    /// Filter update rate [Hz].
    pub rate_hz: f64,
    /// Initial standard deviations.
    pub init_sigma_omega: f64,
    pub init_sigma_h: f64,
    pub init_sigma_f: f64,
}

impl Default for EkfParams {
    fn default() -> Self {
        EkfParams {
            sigma_omega: 3.16,
            sigma_h: 0.31,
            sigma_f: 0.94,
            sigma_gyro: 0.01,
            sigma_thrust: 0.1,
            tau_h: 0.3,
            tau_f: 0.01,
            h_bar: 2.99,
            rate_hz: 400.0,
            init_sigma_omega: 0.05,
            init_sigma_h: 0.1,
            init_sigma_f: 0.5,
        }
    }
}

impl EkfParams {
    pub fn validate(&self) -> Result<(), EkfError> {
        let all = [
            self.sigma_omega,
            self.sigma_h,
            self.sigma_f,
            self.sigma_gyro,
            self.sigma_thrust,
            self.tau_h,
            self.tau_f,
            self.h_bar,
            self.rate_hz,
            self.init_sigma_omega,
            self.init_sigma_h,
            self.init_sigma_f,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(EkfError::InvalidParams(
                "all EKF parameters must be positive".into(),
            ));
        }
        if (logistic(self.h_bar) - 1.0).abs() > 1e-3 {
            return Err(EkfError::InvalidParams(format!(
                "h_bar = {} is inconsistent with L(h_bar) = 1",
                self.h_bar
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

/// Filter belief: mean `[omega, h_1..6, f_1..6]` and covariance.
#[derive(Debug, Clone)]
pub struct HealthBelief {
    pub mean: SVector<f64, EKF_DIM>,
    pub cov: SMatrix<f64, EKF_DIM, EKF_DIM>,
}

impl HealthBelief {
    pub fn omega(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into()
    }

    pub fn health(&self, motor: usize) -> f64 {
        self.mean[H0 + motor]
    }

    pub fn thrust(&self, motor: usize) -> f64 {
        self.mean[F0 + motor]
    }

    pub fn health_sigma(&self, motor: usize) -> f64 {
        self.cov[(H0 + motor, H0 + motor)].max(0.0).sqrt()
    }

    /// `L(h_i)`, the estimated health fraction.
    pub fn health_fraction(&self, motor: usize) -> f64 {
        logistic(self.health(motor))
    }

    /// Optimistic bound `L(h_i + 3 sigma_i)` used by the detection rule.
    pub fn health_upper(&self, motor: usize) -> f64 {
        logistic(self.health(motor) + 3.0 * self.health_sigma(motor))
    }

    /// Pessimistic bound `L(h_i - 3 sigma_i)`.
    pub fn health_lower(&self, motor: usize) -> f64 {
        logistic(self.health(motor) - 3.0 * self.health_sigma(motor))
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

/// Gyro rates plus z-axis specific force (both bias corrected).
#[derive(Debug, Clone, Copy)]
pub struct ImuMeasurement {
    /// Body rates [rad/s].
    pub gyro: Vector3<f64>,
    /// Body-z accelerometer [m/s^2]; `m * accel_z` approximates collective
    /// thrust.
    pub accel_z: f64,
}

/// Motor failure identification filter.
pub struct FaultEkf {
    params: EkfParams,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    mav: MavParams,
    belief: HealthBelief,
    latched: [bool; N_MOTORS],
    /// Last normalized innovation squared, for consistency monitoring.
    last_nis: f64,
}

impl FaultEkf {
    /// Initial belief: healthy motors at `h_bar`, thrusts at the current
    /// reference, rates from the first gyro sample.
    pub fn new(
        params: EkfParams,
        mav: MavParams,
        first_gyro: Vector3<f64>,
        f_ref: &SVector<f64, N_MOTORS>,
    ) -> Result<Self, EkfError> {
        params.validate()?;
        mav.validate()
            .map_err(|e| EkfError::InvalidParams(e.to_string()))?;
        let mut mean = SVector::<f64, EKF_DIM>::zeros();
        mean.fixed_rows_mut::<3>(0).copy_from(&first_gyro);
        for i in 0..N_MOTORS {
            mean[H0 + i] = params.h_bar;
            mean[F0 + i] = f_ref[i];
        }
        let mut cov = SMatrix::<f64, EKF_DIM, EKF_DIM>::zeros();
        for i in 0..3 {
            cov[(i, i)] = params.init_sigma_omega.powi(2);
        }
        for i in 0..N_MOTORS {
            cov[(H0 + i, H0 + i)] = params.init_sigma_h.powi(2);
            cov[(F0 + i, F0 + i)] = params.init_sigma_f.powi(2);
        }
        Ok(FaultEkf {
            inertia: mav.inertia,
            inertia_inv: mav.inertia_inv(),
            mav,
            params,
            belief: HealthBelief { mean, cov },
            latched: [false; N_MOTORS],
            last_nis: 0.0,
        })
    }

    pub fn belief(&self) -> &HealthBelief {
        &self.belief
    }

    pub fn params(&self) -> &EkfParams {
        &self.params
    }

    pub fn last_nis(&self) -> f64 {
        self.last_nis
    }

    /// Propagate mean and covariance by `dt`, driven by the allocator's
    /// thrust references and commanded directions.
    pub fn predict(
        &mut self,
        f_ref: &SVector<f64, N_MOTORS>,
        d: &DirectionVector,
        dt: f64,
    ) -> Result<(), EkfError> {
        let p = &self.params;
        let a = allocation_matrix(d, &self.mav);
        let mean = &self.belief.mean;
        let omega: Vector3<f64> = mean.fixed_rows::<3>(0).into();

        // effective wrench from health-scaled thrusts
        let mut lf = SVector::<f64, N_MOTORS>::zeros();
        for i in 0..N_MOTORS {
            lf[i] = logistic(mean[H0 + i]) * mean[F0 + i];
        }
        let wrench = a * lf;
        let moment = Vector3::new(wrench[0], wrench[1], wrench[2]);
        let omega_dot = angular_accel(&omega, &moment, &self.inertia, &self.inertia_inv);

        // thrust states are stiff (tau_f ~ 4 dt); sub-step them
        let phi = {
            let sub = 1.0 - dt / (4.0 * p.tau_f);
            sub.powi(4)
        };

        let mut next = *mean;
        next.fixed_rows_mut::<3>(0)
            .copy_from(&(omega + dt * omega_dot));
        for i in 0..N_MOTORS {
            next[H0 + i] += dt * (p.h_bar - mean[H0 + i]) / p.tau_h;
            next[F0 + i] = phi * mean[F0 + i] + (1.0 - phi) * f_ref[i];
        }

        // exact Jacobian of the mean map above
        let mut f_d = SMatrix::<f64, EKF_DIM, EKF_DIM>::identity();
        let dw_dw = self.inertia_inv
            * (skew(&(self.inertia * omega)) - skew(&omega) * self.inertia);
        f_d.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() + dt * dw_dw));
        for i in 0..N_MOTORS {
            let col = Vector3::new(a[(0, i)], a[(1, i)], a[(2, i)]);
            let dmdh = self.inertia_inv * col * (logistic_deriv(mean[H0 + i]) * mean[F0 + i]);
            let dmdf = self.inertia_inv * col * logistic(mean[H0 + i]);
            f_d.fixed_view_mut::<3, 1>(0, H0 + i).copy_from(&(dt * dmdh));
            f_d.fixed_view_mut::<3, 1>(0, F0 + i).copy_from(&(dt * dmdf));
            f_d[(H0 + i, H0 + i)] = 1.0 - dt / p.tau_h;
            f_d[(F0 + i, F0 + i)] = phi;
        }

        // process noise: density^2 scaled by dt
        let mut q = SMatrix::<f64, EKF_DIM, EKF_DIM>::zeros();
        for i in 0..3 {
            q[(i, i)] = p.sigma_omega.powi(2) * dt;
        }
        for i in 0..N_MOTORS {
            q[(H0 + i, H0 + i)] = p.sigma_h.powi(2) * dt;
            q[(F0 + i, F0 + i)] = p.sigma_f.powi(2) * dt;
        }

        let cov = f_d * self.belief.cov * f_d.transpose() + q;
        self.belief.mean = next;
        self.belief.cov = 0.5 * (cov + cov.transpose());
        if !self.belief.is_finite() {
            return Err(EkfError::NonFinite);
        }
        Ok(())
    }

    /// Fuse one IMU sample (Joseph-form update, covariance symmetrized).
    pub fn update(&mut self, z: &ImuMeasurement, mass: f64) -> Result<(), EkfError> {
        if !z.gyro.iter().all(|v| v.is_finite()) || !z.accel_z.is_finite() {
            return Err(EkfError::NonFinite);
        }
        let p = &self.params;
        let mean = &self.belief.mean;

        // predicted observation [omega; sum L(h_i) f_i]
        let mut t_hat = 0.0;
        let mut h_row = SMatrix::<f64, 1, EKF_DIM>::zeros();
        for i in 0..N_MOTORS {
            let l = logistic(mean[H0 + i]);
            t_hat += l * mean[F0 + i];
            h_row[(0, H0 + i)] = logistic_deriv(mean[H0 + i]) * mean[F0 + i];
            h_row[(0, F0 + i)] = l;
        }
        let mut h = SMatrix::<f64, 4, EKF_DIM>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        h.fixed_view_mut::<1, EKF_DIM>(3, 0).copy_from(&h_row);

        let z_vec = Vector4::new(z.gyro.x, z.gyro.y, z.gyro.z, mass * z.accel_z);
        let z_hat = Vector4::new(mean[0], mean[1], mean[2], t_hat);
        let innovation = z_vec - z_hat;

        let r = Matrix4::from_diagonal(&Vector4::new(
            p.sigma_gyro.powi(2),
            p.sigma_gyro.powi(2),
            p.sigma_gyro.powi(2),
            p.sigma_thrust.powi(2),
        ));
        let s = h * self.belief.cov * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or(EkfError::SingularInnovation)?;
        self.last_nis = (innovation.transpose() * s_inv * innovation)[0];

        let k = self.belief.cov * h.transpose() * s_inv;
        self.belief.mean += k * innovation;
        let ikh = SMatrix::<f64, EKF_DIM, EKF_DIM>::identity() - k * h;
        let cov = ikh * self.belief.cov * ikh.transpose() + k * r * k.transpose();
        self.belief.cov = 0.5 * (cov + cov.transpose());
        if !self.belief.is_finite() {
            return Err(EkfError::NonFinite);
        }
        Ok(())
    }

    /// Latched failure set per the `L(h_i + 3 sigma_i) < 0.5` rule.
    pub fn detect(&mut self) -> [bool; N_MOTORS] {
        for i in 0..N_MOTORS {
            if !self.latched[i] && self.belief.health_upper(i) < 0.5 {
                self.latched[i] = true;
            }
        }
        self.latched
    }

    pub fn failed_motors(&self) -> Vec<usize> {
        (0..N_MOTORS).filter(|&i| self.latched[i]).collect()
    }
}
