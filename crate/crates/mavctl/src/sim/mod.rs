//! Deterministic closed-loop simulation.
//!
//! Wires plant, controller, allocator and failure-detection filter at their
//! native rates: the plant and EKF tick at 400 Hz, the NMPC and allocation
//! every fourth tick (100 Hz). The plant is deliberately richer than the
//! control model — first-order motor lag, the `omega x v` term in the
//! z-accelerometer, and an optional inertia mismatch — so the filter is
//! exercised against model error. Runs are bit-reproducible for a fixed
//! scenario and seed.

pub mod log;

use crate::allocation::{
    allocate, allocation_matrix, apply_failure, AllocationConfig, AllocationError,
    DirectionVector, HysteresisState,
};
use crate::dynamics::{ControlInput, DynamicsError, MavParams, MavState, N_MOTORS};
use crate::fault_ekf::{EkfError, EkfParams, FaultEkf, ImuMeasurement};
use crate::nmpc::{NmpcConfig, NmpcError, NmpcSolver, ReferencePoint};
use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use log::{metrics_from_log, Event, EventKind, LogError, LogRow, Metrics, RunLog};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Nmpc(#[from] NmpcError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Position/yaw setpoint active from time `t` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub t: f64,
    pub r: Vector3<f64>,
    pub yaw: f64,
}

/// Named reference primitives.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSchedule {
    /// Constant position and yaw.
    Hover { r: Vector3<f64>, yaw: f64 },
    /// Piecewise-constant setpoint list (held after the last entry).
    Setpoints(Vec<Setpoint>),
}

impl ReferenceSchedule {
    /// Single step command applied at `at` seconds.
    pub fn step(from: Setpoint, to_r: Vector3<f64>, to_yaw: f64, at: f64) -> Self {
        ReferenceSchedule::Setpoints(vec![
            Setpoint { t: 0.0, ..from },
            Setpoint {
                t: at,
                r: to_r,
                yaw: to_yaw,
            },
        ])
    }

    pub fn at(&self, t: f64, params: &MavParams) -> ReferencePoint {
        match self {
            ReferenceSchedule::Hover { r, yaw } => ReferencePoint::hover(*r, *yaw, params),
            ReferenceSchedule::Setpoints(list) => {
                let mut active = list.first().expect("setpoint list non-empty");
                for sp in list {
                    if sp.t <= t {
                        active = sp;
                    } else {
                        break;
                    }
                }
                ReferencePoint::hover(active.r, active.yaw, params)
            }
        }
    }

    fn initial_state(&self, params: &MavParams) -> MavState {
        let r0 = self.at(0.0, params);
        MavState {
            r: r0.r,
            q: r0.q,
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultMode {
    /// Motor stops producing thrust (first-order spin-down).
    Cut,
    /// Motor freezes at a fixed thrust.
    StuckAt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    pub t: f64,
    pub motor: usize,
    pub mode: FaultMode,
}

/// Plant-vs-model mismatch knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchConfig {
    /// First-order actuator lag in the plant.
    pub motor_lag: bool,
    /// Plant motor time constant [s] (the filter assumes a different one).
    pub motor_tau: f64,
    /// Plant inertia = nominal inertia * this factor.
    pub inertia_scale: f64,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        MismatchConfig {
            motor_lag: true,
            motor_tau: 0.015,
            inertia_scale: 1.05,
        }
    }
}

impl MismatchConfig {
    pub fn off() -> Self {
        MismatchConfig {
            motor_lag: false,
            motor_tau: 0.015,
            inertia_scale: 1.0,
        }
    }
}

/// Complete description of one closed-loop experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: MavParams,
    pub nmpc: NmpcConfig,
    pub allocation: AllocationConfig,
    pub ekf: EkfParams,
    pub reference: ReferenceSchedule,
    pub faults: Vec<FaultEvent>,
    pub seed: u64,
    pub duration: f64,
    /// Battery voltage [V]; recorded for command-table use.
    pub voltage: f64,
    pub noise: bool,
    pub mismatch: MismatchConfig,
    /// Abort when the position norm exceeds this bound [m].
    pub divergence_bound: f64,
}

impl Scenario {
    pub fn hover(seed: u64) -> Self {
        let params = MavParams::default();
        let nmpc = NmpcConfig::default_for(&params);
        Scenario {
            name: "hover".into(),
            nmpc,
            allocation: AllocationConfig::default(),
            ekf: EkfParams::default(),
            reference: ReferenceSchedule::Hover {
                r: Vector3::new(0.0, 0.0, 2.0),
                yaw: 0.0,
            },
            faults: Vec::new(),
            seed,
            duration: 10.0,
            voltage: 14.8,
            noise: true,
            mismatch: MismatchConfig::default(),
            divergence_bound: 50.0,
            params,
        }
    }

    /// Hover with motor 1 cut at t = 10 s.
    pub fn hover_failure(seed: u64) -> Self {
        let mut s = Scenario::hover(seed);
        s.name = "hover_failure".into();
        s.duration = 16.0;
        s.faults = vec![FaultEvent {
            t: 10.0,
            motor: 0,
            mode: FaultMode::Cut,
        }];
        s
    }

    /// Square setpoint pattern with motor 3 cut at t = 10 s.
    pub fn setpoint_failure(seed: u64) -> Self {
        let mut s = Scenario::hover(seed);
        s.name = "setpoint_failure".into();
        s.duration = 24.0;
        s.reference = ReferenceSchedule::Setpoints(vec![
            Setpoint {
                t: 0.0,
                r: Vector3::new(0.0, 0.0, 2.0),
                yaw: 0.0,
            },
            Setpoint {
                t: 4.0,
                r: Vector3::new(2.0, 0.0, 2.0),
                yaw: 0.0,
            },
            Setpoint {
                t: 8.0,
                r: Vector3::new(2.0, 2.0, 2.0),
                yaw: 0.0,
            },
            Setpoint {
                t: 14.0,
                r: Vector3::new(0.0, 2.0, 2.0),
                yaw: 0.0,
            },
            Setpoint {
                t: 19.0,
                r: Vector3::new(0.0, 0.0, 2.0),
                yaw: 0.0,
            },
        ]);
        s.faults = vec![FaultEvent {
            t: 10.0,
            motor: 2,
            mode: FaultMode::Cut,
        }];
        s
    }

    /// Aggressive fault-free setpoints: 2 m steps with 180-degree yaw flips.
    pub fn aggressive_setpoints(seed: u64, duration: f64) -> Self {
        let mut s = Scenario::hover(seed);
        s.name = "aggressive".into();
        s.duration = duration;
        let pi = std::f64::consts::PI;
        let waypoints = [
            (Vector3::new(0.0, 0.0, 2.0), 0.0),
            (Vector3::new(2.0, 0.0, 4.0), pi),
            (Vector3::new(2.0, 2.0, 2.0), 0.0),
            (Vector3::new(0.0, 2.0, 4.0), pi),
            (Vector3::new(0.0, 0.0, 2.0), 0.0),
        ];
        let mut list = Vec::new();
        let hold = 6.0;
        let mut t = 0.0;
        let mut k = 0usize;
        while t < duration {
            let (r, yaw) = waypoints[k % waypoints.len()];
            list.push(Setpoint { t, r, yaw });
            t += hold;
            k += 1;
        }
        s.reference = ReferenceSchedule::Setpoints(list);
        s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0) {
            return Err(SimError::InvalidScenario("duration must be positive".into()));
        }
        for f in &self.faults {
            if f.t < 0.0 || f.t >= self.duration {
                return Err(SimError::InvalidScenario(format!(
                    "fault at t = {} outside run duration {}",
                    f.t, self.duration
                )));
            }
            if f.motor >= N_MOTORS {
                return Err(SimError::InvalidScenario(format!(
                    "fault motor index {} out of range",
                    f.motor
                )));
            }
        }
        if let ReferenceSchedule::Setpoints(list) = &self.reference {
            if list.is_empty() {
                return Err(SimError::InvalidScenario("empty setpoint list".into()));
            }
        }
        Ok(())
    }
}

/// Synthesize one IMU sample from plant truth. The z accelerometer carries
/// the `omega x v` cross term the filter's observation model ignores.
pub fn imu_measure(
    state: &MavState,
    thrust_true: f64,
    mass: f64,
    ekf: &EkfParams,
    noise: bool,
    rng: &mut ChaCha8Rng,
) -> ImuMeasurement {
    let v_body = state.q.rotation_matrix().transpose() * state.v;
    let cross_z = state.omega.cross(&v_body).z;
    let mut gyro = state.omega;
    let mut accel_z = thrust_true / mass + cross_z;
    if noise {
        let mut gauss = || -> f64 { rng.sample(StandardNormal) };
        gyro += Vector3::new(gauss(), gauss(), gauss()) * ekf.sigma_gyro;
        accel_z += gauss() * ekf.sigma_thrust / mass;
    }
    ImuMeasurement { gyro, accel_z }
}

/// Run the closed loop. Divergence is reported in the returned log and
/// metrics rather than as an error; the log then covers the run up to the
/// abort tick.
pub fn run(scenario: &Scenario) -> Result<(RunLog, Metrics), SimError> {
    scenario.validate()?;
    let params = &scenario.params;
    params.validate()?;

    let dt = scenario.ekf.dt();
    let ctrl_every = (scenario.nmpc.dt / dt).round() as usize;
    if ctrl_every == 0 || (scenario.nmpc.dt - ctrl_every as f64 * dt).abs() > 1e-9 {
        return Err(SimError::InvalidScenario(format!(
            "control period {} must be an integer multiple of the EKF period {}",
            scenario.nmpc.dt, dt
        )));
    }
    let n_ticks = (scenario.duration / dt).round() as usize;
    let horizon = scenario.nmpc.horizon_steps;

    // plant-side parameters (possibly mismatched inertia)
    let mut plant_params = params.clone();
    plant_params.inertia *= scenario.mismatch.inertia_scale;

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut solver = NmpcSolver::new(scenario.nmpc.clone(), params.clone())?;
    let mut alloc_cfg = scenario.allocation.clone();
    let mut hyst = HysteresisState::default();

    let mut state = scenario.reference.initial_state(params);
    let hover_share = params.hover_thrust_per_motor();
    let mut f_act = SVector::<f64, N_MOTORS>::repeat(hover_share);
    let mut f_cmd = f_act;
    let mut d_cmd = DirectionVector::all_normal();
    let mut u_star = params.hover_input().as_vector4();
    let mut saturated = false;

    let mut meas = imu_measure(
        &state,
        f_act.sum(),
        params.mass,
        &scenario.ekf,
        scenario.noise,
        &mut rng,
    );
    let mut ekf = FaultEkf::new(
        scenario.ekf.clone(),
        params.clone(),
        meas.gyro,
        &SVector::<f64, N_MOTORS>::repeat(hover_share),
    )?;

    let mut log = RunLog::default();
    let mut warm: Option<Vec<ControlInput>> = None;
    let mut fault_applied = vec![false; scenario.faults.len()];
    let mut plant_failed: [Option<FaultMode>; N_MOTORS] = [None; N_MOTORS];
    let mut known_failed = [false; N_MOTORS];
    let mut reference_window: Vec<ReferencePoint> = Vec::with_capacity(horizon + 1);

    for k in 0..=n_ticks {
        let t = k as f64 * dt;

        // scheduled fault injection (plant side only)
        for (j, fault) in scenario.faults.iter().enumerate() {
            if !fault_applied[j] && t >= fault.t - 1e-12 {
                fault_applied[j] = true;
                plant_failed[fault.motor] = Some(fault.mode);
                log.events.push(Event {
                    time: t,
                    kind: EventKind::FaultInjected,
                    motor: fault.motor,
                });
            }
        }

        // controller + allocation at 100 Hz
        if k % ctrl_every == 0 && k < n_ticks {
            reference_window.clear();
            for j in 0..=horizon {
                reference_window.push(
                    scenario
                        .reference
                        .at(t + j as f64 * scenario.nmpc.dt, params),
                );
            }
            let solution = solver.solve(&state, &reference_window, warm.as_deref())?;
            u_star = solution.inputs[0].as_vector4();
            warm = Some(solution.shifted());
            let alloc = allocate(&u_star, t, &alloc_cfg, params, &mut hyst)?;
            f_cmd = alloc.f;
            d_cmd = alloc.d;
            saturated = alloc.saturated.iter().any(|&s| s);
            log.n_control_ticks += 1;
        }

        // log row at time t
        let belief = ekf.belief();
        let mut lh = [0.0; N_MOTORS];
        let mut lh_hi = [0.0; N_MOTORS];
        let mut lh_lo = [0.0; N_MOTORS];
        for i in 0..N_MOTORS {
            lh[i] = belief.health_fraction(i);
            lh_hi[i] = belief.health_upper(i);
            lh_lo[i] = belief.health_lower(i);
        }
        let ref_now = scenario.reference.at(t, params);
        log.rows.push(LogRow {
            t,
            state,
            ref_r: ref_now.r,
            ref_yaw: ref_now.q.yaw(),
            gyro: meas.gyro,
            accel_z: meas.accel_z,
            u_star,
            f_cmd,
            d_bits: log::pack_direction_bits(d_cmd.bits()),
            lh,
            lh_hi,
            lh_lo,
            saturated,
        });

        if k == n_ticks {
            break;
        }

        // plant actuators: first-order lag toward the command, faults
        // override the target
        for i in 0..N_MOTORS {
            let target = match plant_failed[i] {
                Some(FaultMode::Cut) => 0.0,
                Some(FaultMode::StuckAt(v)) => v,
                None => f_cmd[i],
            };
            if scenario.mismatch.motor_lag {
                f_act[i] += dt / scenario.mismatch.motor_tau * (target - f_act[i]);
            } else {
                f_act[i] = target;
            }
        }

        // plant integration at 400 Hz
        let a_cmd = allocation_matrix(&d_cmd, params);
        let wrench = a_cmd * f_act;
        let input = ControlInput::new(Vector3::new(wrench[0], wrench[1], wrench[2]), wrench[3]);
        state = crate::dynamics::integrate_step(&state, &input, &plant_params, dt)?;

        // IMU at the new state, then EKF predict/update
        meas = imu_measure(
            &state,
            wrench[3],
            params.mass,
            &scenario.ekf,
            scenario.noise,
            &mut rng,
        );
        ekf.predict(&f_cmd, &d_cmd, dt)?;
        ekf.update(&meas, params.mass)?;
        log.n_ekf_ticks += 1;

        // detection and fail-safe reconfiguration
        let flags = ekf.detect();
        for motor in 0..N_MOTORS {
            if flags[motor] && !known_failed[motor] {
                known_failed[motor] = true;
                let t_event = (k + 1) as f64 * dt;
                log.events.push(Event {
                    time: t_event,
                    kind: EventKind::FaultDetected,
                    motor,
                });
                apply_failure(motor, &mut alloc_cfg)?;
                log.events.push(Event {
                    time: t_event,
                    kind: EventKind::Reconfigured,
                    motor,
                });
            }
        }

        if !state.is_finite() || state.r.norm() > scenario.divergence_bound {
            log.diverged = true;
            break;
        }
    }

    let metrics = metrics_from_log(&log).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    Ok((log, metrics))
}
