//! Sectioned key-value scenario files.
//!
//! The format is a flat INI-like text: `[section]` headers, `key = value`
//! lines, `#` comments. Every section and key is optional; omitted values
//! fall back to the library defaults, so a file can be as small as a
//! `[reference]` block. Vector-valued keys take whitespace-separated
//! numbers. Motor indices are 1-based in files and logs.
//!
//! Sections and keys:
//!
//! ```text
//! [scenario]   name duration seed voltage noise divergence_bound
//! [mismatch]   motor_lag motor_tau inertia_scale
//! [plant]      mass inertia(3) gravity(3) arm_length kt_pos kt_neg
//!              km_pos km_neg f_min_pos f_max_pos f_min_neg f_max_neg
//! [nmpc]       horizon_steps dt q_r q_v q_q q_omega q_u(4)
//!              u_lb(4) u_ub(4) max_iterations tol
//! [allocation] weight(4) lambda t_hyst epsilon_rel
//! [ekf]        sigma_omega sigma_h sigma_f sigma_gyro sigma_thrust
//!              tau_h tau_f h_bar rate_hz
//! [reference]  hover = x y z yaw_deg
//!              setpoint = t x y z yaw_deg   (repeatable)
//! [faults]     cut = t motor
//!              stuck = t motor thrust
//! ```

use anyhow::{anyhow, bail, Context, Result};
use mavctl::sim::{FaultEvent, FaultMode, ReferenceSchedule, Scenario, Setpoint};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use std::path::Path;

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    parse(&text).with_context(|| format!("in scenario file {}", path.display()))
}

pub fn parse(text: &str) -> Result<Scenario> {
    let mut scenario = Scenario::hover(0);
    scenario.name = "scenario".into();
    let mut setpoints: Vec<Setpoint> = Vec::new();
    let mut hover: Option<(Vector3<f64>, f64)> = None;
    let mut faults: Vec<FaultEvent> = Vec::new();
    let mut section = String::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| anyhow!("line {lineno}: unterminated section header"))?;
            section = name.trim().to_lowercase();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {lineno}: expected `key = value`, got `{line}`"))?;
        let key = key.trim().to_lowercase();
        let value = value.trim();
        apply(
            &mut scenario,
            &mut setpoints,
            &mut hover,
            &mut faults,
            &section,
            &key,
            value,
        )
        .map_err(|e| anyhow!("line {lineno}: {e}"))?;
    }

    match (hover, setpoints.is_empty()) {
        (Some(_), false) => bail!("reference cannot be both hover and setpoints"),
        (Some((r, yaw)), true) => scenario.reference = ReferenceSchedule::Hover { r, yaw },
        (None, false) => {
            setpoints.sort_by(|a, b| a.t.total_cmp(&b.t));
            scenario.reference = ReferenceSchedule::Setpoints(setpoints);
        }
        (None, true) => {}
    }
    faults.sort_by(|a, b| a.t.total_cmp(&b.t));
    scenario.faults = faults;
    Ok(scenario)
}

fn floats(value: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| anyhow!("`{t}` is not a number"))
        })
        .collect::<Result<_>>()?;
    if v.len() != n {
        bail!("expected {n} numbers, got {}", v.len());
    }
    Ok(v)
}

fn float(value: &str) -> Result<f64> {
    Ok(floats(value, 1)?[0])
}

fn uint(value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| anyhow!("`{value}` is not a non-negative integer"))
}

fn on_off(value: &str) -> Result<bool> {
    match value.to_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => bail!("`{other}` is not on/off"),
    }
}

/// Scalar -> isotropic, or three numbers -> diagonal.
fn gain3(value: &str) -> Result<Matrix3<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| anyhow!("`{t}` is not a number")))
        .collect::<Result<_>>()?;
    match v.len() {
        1 => Ok(Matrix3::identity() * v[0]),
        3 => Ok(Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2]))),
        n => bail!("expected 1 or 3 numbers, got {n}"),
    }
}

fn motor_index(value: f64) -> Result<usize> {
    let idx = value as usize;
    if value.fract() != 0.0 || !(1..=6).contains(&idx) {
        bail!("motor must be 1..6, got {value}");
    }
    Ok(idx - 1)
}

#[allow(clippy::too_many_arguments)]
fn apply(
    s: &mut Scenario,
    setpoints: &mut Vec<Setpoint>,
    hover: &mut Option<(Vector3<f64>, f64)>,
    faults: &mut Vec<FaultEvent>,
    section: &str,
    key: &str,
    value: &str,
) -> Result<()> {
    match (section, key) {
        ("scenario", "name") => s.name = value.to_string(),
        ("scenario", "duration") => s.duration = float(value)?,
        ("scenario", "seed") => {
            s.seed = value
                .parse::<u64>()
                .map_err(|_| anyhow!("`{value}` is not a seed"))?
        }
        ("scenario", "voltage") => s.voltage = float(value)?,
        ("scenario", "noise") => s.noise = on_off(value)?,
        ("scenario", "divergence_bound") => s.divergence_bound = float(value)?,

        ("mismatch", "motor_lag") => s.mismatch.motor_lag = on_off(value)?,
        ("mismatch", "motor_tau") => s.mismatch.motor_tau = float(value)?,
        ("mismatch", "inertia_scale") => s.mismatch.inertia_scale = float(value)?,

        ("plant", "mass") => s.params.mass = float(value)?,
        ("plant", "inertia") => {
            let v = floats(value, 3)?;
            s.params.inertia = Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2]));
        }
        ("plant", "gravity") => {
            let v = floats(value, 3)?;
            s.params.gravity = Vector3::new(v[0], v[1], v[2]);
        }
        ("plant", "arm_length") => s.params.arm_length = float(value)?,
        ("plant", "kt_pos") => s.params.kt_pos = float(value)?,
        ("plant", "kt_neg") => s.params.kt_neg = float(value)?,
        ("plant", "km_pos") => s.params.km_pos = float(value)?,
        ("plant", "km_neg") => s.params.km_neg = float(value)?,
        ("plant", "f_min_pos") => s.params.f_min_pos = float(value)?,
        ("plant", "f_max_pos") => s.params.f_max_pos = float(value)?,
        ("plant", "f_min_neg") => s.params.f_min_neg = float(value)?,
        ("plant", "f_max_neg") => s.params.f_max_neg = float(value)?,

        ("nmpc", "horizon_steps") => s.nmpc.horizon_steps = uint(value)?,
        ("nmpc", "dt") => s.nmpc.dt = float(value)?,
        ("nmpc", "q_r") => s.nmpc.q_r = gain3(value)?,
        ("nmpc", "q_v") => s.nmpc.q_v = gain3(value)?,
        ("nmpc", "q_q") => s.nmpc.q_q = gain3(value)?,
        ("nmpc", "q_omega") => s.nmpc.q_omega = gain3(value)?,
        ("nmpc", "q_u") => {
            let v = floats(value, 4)?;
            s.nmpc.q_u = Matrix4::from_diagonal(&Vector4::new(v[0], v[1], v[2], v[3]));
        }
        ("nmpc", "u_lb") => {
            let v = floats(value, 4)?;
            s.nmpc.u_lb = Vector4::new(v[0], v[1], v[2], v[3]);
        }
        ("nmpc", "u_ub") => {
            let v = floats(value, 4)?;
            s.nmpc.u_ub = Vector4::new(v[0], v[1], v[2], v[3]);
        }
        ("nmpc", "max_iterations") => s.nmpc.max_iterations = uint(value)?,
        ("nmpc", "tol") => s.nmpc.tol = float(value)?,

        ("allocation", "weight") => {
            let v = floats(value, 4)?;
            s.allocation.weight = Matrix4::from_diagonal(&Vector4::new(v[0], v[1], v[2], v[3]));
        }
        ("allocation", "lambda") => s.allocation.lambda = float(value)?,
        ("allocation", "t_hyst") => s.allocation.t_hyst = float(value)?,
        ("allocation", "epsilon_rel") => s.allocation.epsilon_rel = float(value)?,

        ("ekf", "sigma_omega") => s.ekf.sigma_omega = float(value)?,
        ("ekf", "sigma_h") => s.ekf.sigma_h = float(value)?,
        ("ekf", "sigma_f") => s.ekf.sigma_f = float(value)?,
        ("ekf", "sigma_gyro") => s.ekf.sigma_gyro = float(value)?,
        ("ekf", "sigma_thrust") => s.ekf.sigma_thrust = float(value)?,
        ("ekf", "tau_h") => s.ekf.tau_h = float(value)?,
        ("ekf", "tau_f") => s.ekf.tau_f = float(value)?,
        ("ekf", "h_bar") => s.ekf.h_bar = float(value)?,
        ("ekf", "rate_hz") => s.ekf.rate_hz = float(value)?,

        ("reference", "hover") => {
            let v = floats(value, 4)?;
            *hover = Some((Vector3::new(v[0], v[1], v[2]), v[3].to_radians()));
        }
        ("reference", "setpoint") => {
            let v = floats(value, 5)?;
            setpoints.push(Setpoint {
                t: v[0],
                r: Vector3::new(v[1], v[2], v[3]),
                yaw: v[4].to_radians(),
            });
        }

        ("faults", "cut") => {
            let v = floats(value, 2)?;
            faults.push(FaultEvent {
                t: v[0],
                motor: motor_index(v[1])?,
                mode: FaultMode::Cut,
            });
        }
        ("faults", "stuck") => {
            let v = floats(value, 3)?;
            faults.push(FaultEvent {
                t: v[0],
                motor: motor_index(v[1])?,
                mode: FaultMode::StuckAt(v[2]),
            });
        }

        ("", k) => bail!("key `{k}` appears before any [section] header"),
        (sec, k) => bail!("unknown key `{k}` in section [{sec}]"),
    }
    Ok(())
}
