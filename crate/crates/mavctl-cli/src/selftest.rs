//! Quick invariant suite: fast cross-checks of the core numerics, printed
//! as a pass/fail table. Finishes in seconds; meant as a smoke test after
//! a build or a parameter change.

use mavctl::allocation::{allocate, pseudo_inverse_allocate, AllocationConfig, HysteresisState};
use mavctl::dynamics::{integrate_step, MavParams, MavState, N_MOTORS};
use mavctl::fault_ekf::{logistic, logistic_inv, EkfParams, FaultEkf};
use mavctl::motor_map::{speed_to_thrust, thrust_to_speed, MotorCoeffs};
use mavctl::quat::Quat;
use nalgebra::{SVector, Vector3, Vector4};

/// Test hooks for deliberately corrupting a check, proving the suite can
/// catch real regressions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Corruption {
    /// Flip the sign of the normal-rotation moment coefficient before the
    /// allocation oracle check.
    pub km_sign: bool,
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(7);
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

fn quaternion_round_trip() -> Check {
    let mut next = lcg(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = Quat::from_axis_angle(
            Vector3::new(next(), next(), next() + 1.1),
            next() * 3.0,
        );
        let d = Vector3::new(next(), next(), next()) * 1.5;
        worst = worst.max((q.boxplus(&d).boxminus(&q) - d).norm());
    }
    Check {
        name: "quaternion boxplus/boxminus round trip",
        passed: worst < 1e-10,
        detail: format!("max error {worst:.2e}"),
    }
}

fn allocation_vs_pseudo_inverse(corruption: Corruption) -> Check {
    let mut params = MavParams::default();
    if corruption.km_sign {
        params.km_pos = -params.km_pos;
    }
    let config = AllocationConfig {
        lambda: 1e-10,
        ..Default::default()
    };
    let mut hyst = HysteresisState::default();
    let mut next = lcg(2);
    let mut worst = 0.0f64;
    let mut tested = 0;
    // oracle side always uses the healthy airframe
    let oracle_params = MavParams::default();
    while tested < 100 {
        let u = Vector4::new(0.5 * next(), 0.5 * next(), 0.06 * next(), 26.0 + 5.0 * next());
        let f_pinv = pseudo_inverse_allocate(&u, &oracle_params);
        if (0..N_MOTORS).any(|i| f_pinv[i] < 0.3 || f_pinv[i] > 9.2) {
            continue;
        }
        let res = allocate(&u, 0.0, &config, &params, &mut hyst).unwrap();
        for i in 0..N_MOTORS {
            worst = worst.max((res.f[i] - f_pinv[i]).abs());
        }
        tested += 1;
    }
    Check {
        name: "interior allocation equals pseudo-inverse",
        passed: worst < 1e-6,
        detail: format!("max deviation {worst:.2e} over {tested} wrenches"),
    }
}

fn ekf_fixed_point() -> Check {
    let params = MavParams::default();
    let f_ref = SVector::<f64, N_MOTORS>::repeat(params.hover_thrust_per_motor());
    let mut ekf = FaultEkf::new(
        EkfParams::default(),
        params,
        Vector3::zeros(),
        &f_ref,
    )
    .unwrap();
    let before = ekf.belief().mean;
    for _ in 0..100 {
        ekf.predict(
            &f_ref,
            &mavctl::allocation::DirectionVector::all_normal(),
            1.0 / 400.0,
        )
        .unwrap();
    }
    let drift = (ekf.belief().mean - before).amax();
    Check {
        name: "EKF healthy hover is a prediction fixed point",
        passed: drift < 1e-9,
        detail: format!("mean drift {drift:.2e} over 100 predictions"),
    }
}

fn hover_integration() -> Check {
    let params = MavParams::default();
    let s0 = MavState::hover_at(Vector3::new(0.0, 0.0, 2.0));
    let mut s = s0;
    for _ in 0..1000 {
        s = integrate_step(&s, &params.hover_input(), &params, 0.01).unwrap();
    }
    let drift = (s.r - s0.r).norm() + s.v.norm() + s.omega.norm();
    Check {
        name: "hover is an integration equilibrium",
        passed: drift < 1e-9,
        detail: format!("state drift {drift:.2e} over 10 s"),
    }
}

fn motor_map_round_trip() -> Check {
    let coeffs = MotorCoeffs::default();
    let mut worst = 0.0f64;
    for k in 1..100 {
        let f = 0.09 * k as f64;
        let w = thrust_to_speed(f, false, &coeffs).unwrap();
        worst = worst.max((speed_to_thrust(w, false, &coeffs) - f).abs());
    }
    Check {
        name: "motor map thrust/speed round trip",
        passed: worst < 1e-12,
        detail: format!("max error {worst:.2e}"),
    }
}

fn logistic_consistency() -> Check {
    let err1 = (logistic(2.99) - 1.0).abs();
    let err2 = (logistic(logistic_inv(0.5)) - 0.5).abs();
    Check {
        name: "logistic health function reference points",
        passed: err1 < 1e-3 && err2 < 1e-12,
        detail: format!("|L(h_bar)-1| = {err1:.2e}, inversion error {err2:.2e}"),
    }
}

/// Run every check, print the table, return true when all pass.
pub fn run(corruption: Corruption) -> bool {
    let checks = vec![
        quaternion_round_trip(),
        hover_integration(),
        motor_map_round_trip(),
        logistic_consistency(),
        allocation_vs_pseudo_inverse(corruption),
        ekf_fixed_point(),
    ];
    let mut all = true;
    for c in &checks {
        println!(
            "{:<4} {:<48} {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.detail
        );
        all &= c.passed;
    }
    println!(
        "selftest: {}/{} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    all
}
