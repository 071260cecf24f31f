use rendezvous_browser::{orbit_series, plan_linear, sparsity_demo, MAX_HORIZON};

const MU: f64 = 3.986004418e14;
const A: f64 = 6763e3;
const E: f64 = 0.73074;

#[test]
fn orbit_series_spans_one_period_with_constant_angular_momentum() {
    let s = orbit_series(A, E, 0.3, 400).unwrap();
    let period = 2.0 * std::f64::consts::PI * (A.powi(3) / MU).sqrt();
    assert!((s.period - period).abs() <= 1e-9 * period);
    assert_eq!(s.t.len(), 400);
    assert!((s.t[399] - period).abs() <= 1e-9 * period);
    let h = (MU * A * (1.0 - E * E)).sqrt();
    for (r, w) in s.radius.iter().zip(&s.omega) {
        assert!((r * r * w / h - 1.0).abs() < 1e-9);
    }
    let r0 = A * (1.0 - E * E) / (1.0 + E * 0.3f64.cos());
    assert!((s.radius[0] - r0).abs() <= 1e-9 * r0);
    let (lo, hi) = s.radius.iter().fold((f64::MAX, 0.0f64), |(l, h), r| (l.min(*r), h.max(*r)));
    assert!(lo >= A * (1.0 - E) * (1.0 - 1e-12) && hi <= A * (1.0 + E) * (1.0 + 1e-12));
}

#[test]
fn orbit_series_rejects_bad_input() {
    assert!(orbit_series(A, E, 0.0, 1).is_err());
    assert!(orbit_series(A, 1.2, 0.0, 10).is_err());
    assert!(orbit_series(-1.0, 0.1, 0.0, 10).is_err());
}

#[test]
fn sparsity_demo_beats_min_norm_and_is_reproducible() {
    let d = sparsity_demo(6, 40, 7).unwrap();
    assert_eq!(d.min_l2_blocks.len(), 40);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    assert!((sum(&d.min_l2_blocks) - d.min_l2_cost).abs() <= 1e-12 * d.min_l2_cost);
    assert!((sum(&d.irls_blocks) - d.irls_cost).abs() <= 1e-12 * d.irls_cost);
    assert!(d.irls_cost < d.min_l2_cost);
    let active = d.irls_blocks.iter().filter(|b| **b > 1e-6 * d.irls_cost).count();
    assert!(active <= 6, "{active} active blocks for 6 constraints");
    let again = sparsity_demo(6, 40, 7).unwrap();
    assert_eq!(again.irls_blocks, d.irls_blocks);
    assert!(sparsity_demo(6, 2, 7).is_err());
    assert!(sparsity_demo(0, 5, 7).is_err());
}

#[test]
fn linear_plan_reaches_the_target() {
    let x0 = [1000.0, -1000.0, 1000.0, 3.0, 3.0, -3.0];
    let p = plan_linear(A, E, 0.0, x0, 200, 1.0).unwrap();
    assert_eq!(p.states.len(), 201);
    assert_eq!(p.controls.len(), 200);
    assert_eq!(p.states[0], x0);
    let norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(p.terminal_error <= 0.01 * norm, "terminal error {}", p.terminal_error);
    let last = p.states[200];
    assert!((last.iter().map(|v| v * v).sum::<f64>().sqrt() - p.terminal_error).abs() < 1e-12);
    let fuel: f64 = p.controls.iter().map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()).sum();
    assert!((fuel - p.fuel).abs() <= 1e-12 * fuel);
}

#[test]
fn linear_plan_from_rest_at_target_is_free() {
    let p = plan_linear(A, E, 0.0, [0.0; 6], 20, 1.0).unwrap();
    assert_eq!(p.fuel, 0.0);
    // The origin is an equilibrium up to differential-gravity roundoff.
    assert!(p.terminal_error <= 20.0 * 1e-9, "{}", p.terminal_error);
}

#[test]
fn linear_plan_rejects_bad_input() {
    let x0 = [1.0; 6];
    assert!(plan_linear(A, E, 0.0, x0, 0, 1.0).is_err());
    assert!(plan_linear(A, E, 0.0, x0, MAX_HORIZON + 1, 1.0).is_err());
    assert!(plan_linear(A, E, 0.0, x0, 10, -1.0).is_err());
}
