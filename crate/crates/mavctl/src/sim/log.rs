//! Run logging, CSV serialization and metric extraction.
//!
//! A [`RunLog`] carries one row per 400 Hz tick plus an ordered event list
//! (fault injected / detected / reconfigured). The CSV form is versioned:
//! a `#` metadata line, a header line, then one comma-separated row per
//! tick. Direction bits and per-tick events are packed as small bitmask
//! integers so rows stay fixed-width; floats use shortest round-trip
//! formatting, which makes replay output byte-identical for equal seeds.

use crate::dynamics::{MavState, N_MOTORS};
use crate::quat::Quat;
use nalgebra::{SVector, Vector3, Vector4};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LogError {
    #[error("malformed log: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    FaultInjected,
    FaultDetected,
    Reconfigured,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub motor: usize,
}

/// One 400 Hz sample of the closed loop.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub t: f64,
    pub state: MavState,
    pub ref_r: Vector3<f64>,
    pub ref_yaw: f64,
    pub gyro: Vector3<f64>,
    pub accel_z: f64,
    /// Wrench commanded by the controller.
    pub u_star: Vector4<f64>,
    /// Thrusts commanded by the allocator.
    pub f_cmd: SVector<f64, N_MOTORS>,
    pub d_bits: u8,
    /// Health fractions `L(h_i)` and their 3-sigma bounds.
    pub lh: [f64; N_MOTORS],
    pub lh_hi: [f64; N_MOTORS],
    pub lh_lo: [f64; N_MOTORS],
    pub saturated: bool,
}

impl LogRow {
    /// Yaw tracking error, wrapped to [-pi, pi].
    pub fn yaw_error(&self) -> f64 {
        let e = self.ref_yaw - self.state.q.yaw();
        (e + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
    }
}

/// Full closed-loop trace.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub events: Vec<Event>,
    pub n_ekf_ticks: usize,
    pub n_control_ticks: usize,
    pub diverged: bool,
}

pub const CSV_VERSION: &str = "mavctl-runlog v1";

const COLUMNS: &[&str] = &[
    "t", "px", "py", "pz", "qx", "qy", "qz", "qw", "vx", "vy", "vz", "wx", "wy", "wz", "ref_x",
    "ref_y", "ref_z", "ref_yaw", "gyro_x", "gyro_y", "gyro_z", "accel_z", "u_mx", "u_my", "u_mz",
    "u_T", "f1", "f2", "f3", "f4", "f5", "f6", "d_bits", "lh1", "lh2", "lh3", "lh4", "lh5", "lh6",
    "lh_hi1", "lh_hi2", "lh_hi3", "lh_hi4", "lh_hi5", "lh_hi6", "lh_lo1", "lh_lo2", "lh_lo3",
    "lh_lo4", "lh_lo5", "lh_lo6", "sat", "ev_inject", "ev_detect", "ev_reconf",
];

impl RunLog {
    pub fn first_event(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {CSV_VERSION} ekf_ticks={} control_ticks={} diverged={}",
            self.n_ekf_ticks,
            self.n_control_ticks,
            u8::from(self.diverged)
        );
        let _ = writeln!(out, "{}", COLUMNS.join(","));

        // per-row event bitmasks
        let mask_at = |t: f64, kind: EventKind| -> u8 {
            self.events
                .iter()
                .filter(|e| e.kind == kind && (e.time - t).abs() < 1e-9)
                .fold(0u8, |m, e| m | 1 << e.motor)
        };

        for row in &self.rows {
            let q = row.state.q;
            let mut fields: Vec<String> = Vec::with_capacity(COLUMNS.len());
            let push = |v: f64, fields: &mut Vec<String>| fields.push(format!("{v}"));
            push(row.t, &mut fields);
            for v in [row.state.r.x, row.state.r.y, row.state.r.z] {
                push(v, &mut fields);
            }
            for v in [q.x, q.y, q.z, q.w] {
                push(v, &mut fields);
            }
            for v in [row.state.v.x, row.state.v.y, row.state.v.z] {
                push(v, &mut fields);
            }
            for v in [row.state.omega.x, row.state.omega.y, row.state.omega.z] {
                push(v, &mut fields);
            }
            for v in [row.ref_r.x, row.ref_r.y, row.ref_r.z, row.ref_yaw] {
                push(v, &mut fields);
            }
            for v in [row.gyro.x, row.gyro.y, row.gyro.z, row.accel_z] {
                push(v, &mut fields);
            }
            for i in 0..4 {
                push(row.u_star[i], &mut fields);
            }
            for i in 0..N_MOTORS {
                push(row.f_cmd[i], &mut fields);
            }
            fields.push(format!("{}", row.d_bits));
            for arr in [&row.lh, &row.lh_hi, &row.lh_lo] {
                for v in arr {
                    push(*v, &mut fields);
                }
            }
            fields.push(format!("{}", u8::from(row.saturated)));
            fields.push(format!("{}", mask_at(row.t, EventKind::FaultInjected)));
            fields.push(format!("{}", mask_at(row.t, EventKind::FaultDetected)));
            fields.push(format!("{}", mask_at(row.t, EventKind::Reconfigured)));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<RunLog, LogError> {
        let mut lines = text.lines();
        let meta = lines
            .next()
            .ok_or_else(|| LogError::Malformed("empty file".into()))?;
        if !meta.starts_with(&format!("# {CSV_VERSION}")) {
            return Err(LogError::Malformed(format!(
                "missing or unsupported version line: {meta}"
            )));
        }
        let mut n_ekf_ticks = 0;
        let mut n_control_ticks = 0;
        let mut diverged = false;
        for tok in meta.split_whitespace() {
            if let Some(v) = tok.strip_prefix("ekf_ticks=") {
                n_ekf_ticks = v
                    .parse()
                    .map_err(|_| LogError::Malformed("bad ekf_ticks".into()))?;
            } else if let Some(v) = tok.strip_prefix("control_ticks=") {
                n_control_ticks = v
                    .parse()
                    .map_err(|_| LogError::Malformed("bad control_ticks".into()))?;
            } else if let Some(v) = tok.strip_prefix("diverged=") {
                diverged = v == "1";
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| LogError::Malformed("missing header".into()))?;
        if header != COLUMNS.join(",") {
            return Err(LogError::Malformed("header does not match schema".into()));
        }

        let mut log = RunLog {
            n_ekf_ticks,
            n_control_ticks,
            diverged,
            ..Default::default()
        };
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != COLUMNS.len() {
                return Err(LogError::Malformed(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 3,
                    COLUMNS.len(),
                    fields.len()
                )));
            }
            let num = |i: usize| -> Result<f64, LogError> {
                fields[i].parse().map_err(|_| {
                    LogError::Malformed(format!(
                        "line {}: field {} ({}) is not a number",
                        lineno + 3,
                        i,
                        COLUMNS[i]
                    ))
                })
            };
            let t = num(0)?;
            let state = MavState {
                r: Vector3::new(num(1)?, num(2)?, num(3)?),
                q: Quat::new(num(4)?, num(5)?, num(6)?, num(7)?),
                v: Vector3::new(num(8)?, num(9)?, num(10)?),
                omega: Vector3::new(num(11)?, num(12)?, num(13)?),
            };
            let mut f_cmd = SVector::<f64, N_MOTORS>::zeros();
            for i in 0..N_MOTORS {
                f_cmd[i] = num(26 + i)?;
            }
            let mut lh = [0.0; N_MOTORS];
            let mut lh_hi = [0.0; N_MOTORS];
            let mut lh_lo = [0.0; N_MOTORS];
            for i in 0..N_MOTORS {
                lh[i] = num(33 + i)?;
                lh_hi[i] = num(39 + i)?;
                lh_lo[i] = num(45 + i)?;
            }
            let row = LogRow {
                t,
                state,
                ref_r: Vector3::new(num(14)?, num(15)?, num(16)?),
                ref_yaw: num(17)?,
                gyro: Vector3::new(num(18)?, num(19)?, num(20)?),
                accel_z: num(21)?,
                u_star: Vector4::new(num(22)?, num(23)?, num(24)?, num(25)?),
                f_cmd,
                d_bits: num(32)? as u8,
                lh,
                lh_hi,
                lh_lo,
                saturated: num(51)? != 0.0,
            };
            for (col, kind) in [
                (52, EventKind::FaultInjected),
                (53, EventKind::FaultDetected),
                (54, EventKind::Reconfigured),
            ] {
                let mask = num(col)? as u8;
                for motor in 0..N_MOTORS {
                    if mask >> motor & 1 == 1 {
                        log.events.push(Event {
                            time: t,
                            kind,
                            motor,
                        });
                    }
                }
            }
            log.rows.push(row);
        }
        if log.rows.is_empty() {
            return Err(LogError::Malformed("log has no rows".into()));
        }
        Ok(log)
    }
}

/// Scalar summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// First detection minus first injection [s]; absent without a fault.
    pub detection_delay: Option<f64>,
    /// Max altitude drop below reference after injection [m].
    pub height_loss: f64,
    /// Position RMSE before injection (whole run if no fault) [m].
    pub rmse_pre: f64,
    /// Position RMSE after injection [m].
    pub rmse_post: Option<f64>,
    /// Time after injection until |yaw error| stays below 5 deg [s].
    pub yaw_convergence_time: Option<f64>,
    /// Fraction of ticks with any motor at a thrust bound.
    pub saturation_fraction: f64,
    pub diverged: bool,
}

impl Metrics {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x}"));
        format!(
            "detection_delay_s = {}\nheight_loss_m = {}\nrmse_pre_m = {}\nrmse_post_m = {}\n\
             yaw_convergence_time_s = {}\nsaturation_fraction = {}\ndiverged = {}\n",
            opt(self.detection_delay),
            self.height_loss,
            self.rmse_pre,
            opt(self.rmse_post),
            opt(self.yaw_convergence_time),
            self.saturation_fraction,
            self.diverged
        )
    }
}

/// Extract scalar metrics from a run log.
pub fn metrics_from_log(log: &RunLog) -> Result<Metrics, LogError> {
    if log.rows.is_empty() {
        return Err(LogError::Malformed("log has no rows".into()));
    }
    let t_inject = log.first_event(EventKind::FaultInjected).map(|e| e.time);
    let t_detect = log.first_event(EventKind::FaultDetected).map(|e| e.time);
    let detection_delay = match (t_inject, t_detect) {
        (Some(ti), Some(td)) => {
            let delay = td - ti;
            if delay < 0.0 {
                return Err(LogError::Malformed(
                    "detection event precedes injection".into(),
                ));
            }
            Some(delay)
        }
        _ => None,
    };

    let window_start = t_inject.unwrap_or(0.0);
    let mut height_loss: f64 = 0.0;
    for row in log.rows.iter().filter(|r| r.t >= window_start) {
        height_loss = height_loss.max(row.ref_r.z - row.state.r.z);
    }
    if t_inject.is_none() {
        // bounded below by zero; a no-fault hover stays at ~0
        height_loss = height_loss.max(0.0);
    }

    let rmse = |rows: &mut dyn Iterator<Item = &LogRow>| -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in rows {
            sum += (r.state.r - r.ref_r).norm_squared();
            n += 1;
        }
        (n > 0).then(|| (sum / n as f64).sqrt())
    };
    let rmse_pre = match t_inject {
        Some(ti) => rmse(&mut log.rows.iter().filter(|r| r.t < ti)).unwrap_or(0.0),
        None => rmse(&mut log.rows.iter()).unwrap_or(0.0),
    };
    let rmse_post = t_inject.and_then(|ti| rmse(&mut log.rows.iter().filter(|r| r.t >= ti)));

    let yaw_convergence_time = t_inject.and_then(|ti| {
        let threshold = 5f64.to_radians();
        // last excursion above threshold after injection
        let mut last_bad: Option<f64> = None;
        let mut converged_tail = false;
        for row in log.rows.iter().filter(|r| r.t >= ti) {
            if row.yaw_error().abs() >= threshold {
                last_bad = Some(row.t);
                converged_tail = false;
            } else {
                converged_tail = true;
            }
        }
        if !converged_tail {
            return None; // never settles
        }
        Some(match last_bad {
            Some(t) => t - ti,
            None => 0.0,
        })
    });

    let saturation_fraction =
        log.rows.iter().filter(|r| r.saturated).count() as f64 / log.rows.len() as f64;

    Ok(Metrics {
        detection_delay,
        height_loss,
        rmse_pre,
        rmse_post,
        yaw_convergence_time,
        saturation_fraction,
        diverged: log.diverged,
    })
}

pub fn pack_direction_bits(bits: &[bool; N_MOTORS]) -> u8 {
    bits.iter()
        .enumerate()
        .fold(0u8, |m, (i, &b)| if b { m | 1 << i } else { m })
}
