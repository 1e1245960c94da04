//! Bidirectional motor model: thrust <-> angular speed <-> normalized
//! command, with battery-voltage dependence.
//!
//! Thrust follows `f = k_T w^2` with separate coefficients for normal and
//! inverted rotation (asymmetric propellers). The command map is a family
//! of per-voltage quadratics `w(c) = a c^2 + b c + cst`, stored in a lookup
//! table and inverted analytically; commands for voltages between table
//! levels are linearly interpolated between the neighboring inverses.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MotorMapError {
    #[error("thrust sign {thrust} inconsistent with direction (inverted = {inverted})")]
    SignMismatch { thrust: f64, inverted: bool },
    #[error("voltage {0} V outside table range [{1}, {2}] V")]
    VoltageOutOfRange(f64, f64, f64),
    #[error("command table malformed: {0}")]
    MalformedTable(String),
}

/// Thrust and moment coefficients for both rotation directions.
#[derive(Debug, Clone, Copy)]
pub struct MotorCoeffs {
    /// Thrust coefficient, normal rotation [N s^2].
    pub kt_pos: f64,
    /// Thrust coefficient, inverted rotation [N s^2]; at most `kt_pos`.
    pub kt_neg: f64,
    /// Moment-to-thrust ratio, normal rotation.
    pub km_pos: f64,
    /// Moment-to-thrust ratio, inverted rotation.
    pub km_neg: f64,
}

impl Default for MotorCoeffs {
    fn default() -> Self {
        MotorCoeffs {
            kt_pos: 8.54e-6,
            kt_neg: 5.98e-6,
            km_pos: 0.0161,
            km_neg: 0.0184,
        }
    }
}

impl MotorCoeffs {
    pub fn validate(&self) -> Result<(), MotorMapError> {
        if self.kt_pos <= 0.0 || self.kt_neg <= 0.0 || self.km_pos <= 0.0 || self.km_neg <= 0.0 {
            return Err(MotorMapError::MalformedTable(
                "motor coefficients must be positive".into(),
            ));
        }
        if self.kt_neg > self.kt_pos {
            return Err(MotorMapError::MalformedTable(
                "inverted rotation cannot out-thrust normal rotation".into(),
            ));
        }
        Ok(())
    }

    fn kt(&self, inverted: bool) -> f64 {
        if inverted {
            self.kt_neg
        } else {
            self.kt_pos
        }
    }
}

/// Angular speed needed to produce thrust `f` (sign must be consistent
/// with the direction bit: normal rotation produces non-negative thrust).
pub fn thrust_to_speed(f: f64, inverted: bool, coeffs: &MotorCoeffs) -> Result<f64, MotorMapError> {
    if (f > 0.0 && inverted) || (f < 0.0 && !inverted) {
        return Err(MotorMapError::SignMismatch {
            thrust: f,
            inverted,
        });
    }
    Ok((f.abs() / coeffs.kt(inverted)).sqrt())
}

/// Thrust produced at angular speed `omega` (non-negative) in the given
/// direction; negative for inverted rotation.
pub fn speed_to_thrust(omega: f64, inverted: bool, coeffs: &MotorCoeffs) -> f64 {
    let f = coeffs.kt(inverted) * omega * omega;
    if inverted {
        -f
    } else {
        f
    }
}

/// One voltage level's quadratic: `omega(cmd) = a cmd^2 + b cmd + c`.
#[derive(Debug, Clone, Copy)]
pub struct CommandQuadratic {
    pub voltage: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CommandQuadratic {
    /// Forward evaluation of the quadratic.
    pub fn speed_at(&self, cmd: f64) -> f64 {
        self.a * cmd * cmd + self.b * cmd + self.c
    }

    /// Monotonically increasing on [0, 1]?
    fn is_monotone(&self) -> bool {
        // derivative 2a c + b must be non-negative at both endpoints
        self.b >= 0.0 && 2.0 * self.a + self.b > 0.0
    }

    /// Command achieving `omega` (>= 0), from the increasing branch;
    /// unclamped, may exceed [0, 1].
    fn invert(&self, omega: f64) -> f64 {
        if self.a.abs() < 1e-12 {
            return (omega - self.c) / self.b;
        }
        let disc = self.b * self.b - 4.0 * self.a * (self.c - omega);
        (-self.b + disc.max(0.0).sqrt()) / (2.0 * self.a)
    }
}

/// Normalized command with a saturation indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandOutput {
    /// Command in [0, 1].
    pub command: f64,
    /// True if the unclamped inverse fell outside [0, 1].
    pub saturated: bool,
}

/// Voltage-indexed family of command quadratics.
#[derive(Debug, Clone)]
pub struct CommandTable {
    levels: Vec<CommandQuadratic>,
}

impl CommandTable {
    pub fn new(mut levels: Vec<CommandQuadratic>) -> Result<Self, MotorMapError> {
        if levels.is_empty() {
            return Err(MotorMapError::MalformedTable("no voltage levels".into()));
        }
        levels.sort_by(|x, y| x.voltage.total_cmp(&y.voltage));
        for w in levels.windows(2) {
            if w[1].voltage - w[0].voltage < 1e-9 {
                return Err(MotorMapError::MalformedTable(format!(
                    "duplicate voltage level {}",
                    w[0].voltage
                )));
            }
        }
        for q in &levels {
            if !q.is_monotone() {
                return Err(MotorMapError::MalformedTable(format!(
                    "quadratic at {} V not monotone on [0, 1]",
                    q.voltage
                )));
            }
        }
        Ok(CommandTable { levels })
    }

    /// Synthetic table from the parametric model
    /// `omega = (a0 + a1 V) cmd^2 + b cmd + c`, spanning `v_lo..v_hi`.
    /// The defaults put hover near mid-range command at nominal voltage.
    pub fn synthetic(v_lo: f64, v_hi: f64, n_levels: usize) -> Self {
        let (a0, a1, b, c) = (1000.0, 125.0, 60.0, -30.0);
        let mut levels = Vec::with_capacity(n_levels);
        for k in 0..n_levels {
            let v = v_lo + (v_hi - v_lo) * k as f64 / (n_levels - 1).max(1) as f64;
            levels.push(CommandQuadratic {
                voltage: v,
                a: a0 + a1 * v,
                b,
                c,
            });
        }
        CommandTable::new(levels).expect("synthetic table is well formed")
    }

    pub fn voltage_range(&self) -> (f64, f64) {
        (
            self.levels.first().unwrap().voltage,
            self.levels.last().unwrap().voltage,
        )
    }

    pub fn levels(&self) -> &[CommandQuadratic] {
        &self.levels
    }

    /// Parse a plain-text table: one `V a b c` line per voltage level.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, MotorMapError> {
        let mut levels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| {
                    MotorMapError::MalformedTable(format!("line {}: {e}", lineno + 1))
                })?;
            if fields.len() != 4 {
                return Err(MotorMapError::MalformedTable(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            levels.push(CommandQuadratic {
                voltage: fields[0],
                a: fields[1],
                b: fields[2],
                c: fields[3],
            });
        }
        CommandTable::new(levels)
    }
}

/// Normalized command that achieves angular speed `omega` at the given
/// battery voltage, clamped to [0, 1] with a saturation flag.
pub fn speed_to_command(
    omega: f64,
    voltage: f64,
    table: &CommandTable,
) -> Result<CommandOutput, MotorMapError> {
    let (v_lo, v_hi) = table.voltage_range();
    if voltage < v_lo - 1e-9 || voltage > v_hi + 1e-9 {
        return Err(MotorMapError::VoltageOutOfRange(voltage, v_lo, v_hi));
    }
    let levels = table.levels();
    let idx = levels
        .partition_point(|q| q.voltage <= voltage)
        .clamp(1, levels.len() - 1);
    let (lo, hi) = (&levels[idx - 1], &levels[idx]);
    let t = ((voltage - lo.voltage) / (hi.voltage - lo.voltage)).clamp(0.0, 1.0);
    let raw = (1.0 - t) * lo.invert(omega) + t * hi.invert(omega);
    Ok(CommandOutput {
        command: raw.clamp(0.0, 1.0),
        saturated: !(0.0..=1.0).contains(&raw),
    })
}
