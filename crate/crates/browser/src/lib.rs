//! Browser demo for the rendezvous toolkit.
//!
//! The plain Rust functions ([`orbit_series`], [`sparsity_demo`],
//! [`plan_linear`]) are what the tests exercise; the `#[wasm_bindgen]`
//! wrappers hand their results to JavaScript as JSON strings.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rendezvous_core::dynamics::{Plant, RelativeState};
use rendezvous_core::linearized::{discretize, solve_linear_controller, terminal_map, DEFAULT_SUBSTEPS};
use rendezvous_core::orbit::{OrbitClock, OrbitalElements, MU_EARTH};
use rendezvous_core::sparse_solver::{irls_solve, l21_norm, min_l2_solution, IrlsConfig, WeightMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest horizon the page may request; keeps a solve interactive.
pub const MAX_HORIZON: usize = 400;

#[derive(Debug, Clone, Serialize)]
pub struct OrbitSeries {
    pub t: Vec<f64>,
    pub radius: Vec<f64>,
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    pub period: f64,
}

/// Samples the target orbit at `samples` evenly spaced instants over one
/// period.
pub fn orbit_series(a: f64, e: f64, nu0: f64, samples: usize) -> Result<OrbitSeries, String> {
    if !(2..=5000).contains(&samples) {
        return Err(format!("samples must be in 2..=5000, got {samples}"));
    }
    let el = OrbitalElements::new(a, e, MU_EARTH, nu0).map_err(|e| e.to_string())?;
    let period = el.period();
    let mut out = OrbitSeries {
        t: Vec::with_capacity(samples),
        radius: Vec::with_capacity(samples),
        omega: Vec::with_capacity(samples),
        nu: Vec::with_capacity(samples),
        period,
    };
    for i in 0..samples {
        let t = period * i as f64 / (samples - 1) as f64;
        let s = el.sample(t).map_err(|e| e.to_string())?;
        out.t.push(t);
        out.radius.push(s.radius);
        out.omega.push(s.omega);
        out.nu.push(s.nu);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityDemo {
    /// Block norms `‖u(i)‖₂` of the minimum-`ℓ2` solution.
    pub min_l2_blocks: Vec<f64>,
    /// Block norms of the IRLS solution.
    pub irls_blocks: Vec<f64>,
    pub min_l2_cost: f64,
    pub irls_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Random `rows × 3·blocks` system solved twice: unweighted minimum norm and
/// blockwise IRLS.
pub fn sparsity_demo(rows: usize, blocks: usize, seed: u64) -> Result<SparsityDemo, String> {
    if rows == 0 || blocks * 3 <= rows || blocks > 200 {
        return Err(format!("need 0 < rows < 3·blocks and blocks ≤ 200 (rows {rows}, blocks {blocks})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = DMatrix::from_fn(rows, 3 * blocks, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
    let cfg = IrlsConfig {
        weight_mode: WeightMode::Blockwise,
        block_size: 3,
        ..IrlsConfig::default()
    };
    let l2 = min_l2_solution(&c, &b).map_err(|e| e.to_string())?;
    let r = irls_solve(&c, &DVector::zeros(rows), &b, &cfg).map_err(|e| e.to_string())?;
    let norms = |u: &DVector<f64>| {
        u.as_slice()
            .chunks(3)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    };
    Ok(SparsityDemo {
        min_l2_blocks: norms(&l2),
        irls_blocks: norms(&r.u),
        min_l2_cost: l21_norm(l2.as_slice(), 3),
        irls_cost: r.cost_l21,
        iterations: r.iterations,
        converged: r.converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RendezvousPlan {
    pub t: Vec<f64>,
    /// Nonlinear-plant states under the planned controls.
    pub states: Vec<[f64; 6]>,
    pub controls: Vec<[f64; 3]>,
    pub terminal_error: f64,
    pub fuel: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimum-fuel transfer from `x0` to the origin planned on the linearized
/// model and flown on the nonlinear plant.
pub fn plan_linear(a: f64, e: f64, nu0: f64, x0: [f64; 6], horizon: usize, step: f64) -> Result<RendezvousPlan, String> {
    if !(1..=MAX_HORIZON).contains(&horizon) {
        return Err(format!("horizon must be in 1..={MAX_HORIZON}, got {horizon}"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(format!("step must be positive, got {step}"));
    }
    let el = OrbitalElements::new(a, e, MU_EARTH, nu0).map_err(|e| e.to_string())?;
    let clock = OrbitClock::new(el, false);
    let x0 = RelativeState::from_array(x0);
    let lm = discretize(&clock, step, horizon, DEFAULT_SUBSTEPS).map_err(|e| e.to_string())?;
    let (c, beta) = terminal_map(&lm, &x0);
    let (controls, r) = solve_linear_controller(&c, &beta, &RelativeState::ZERO, &IrlsConfig::default())
        .map_err(|e| e.to_string())?;
    let tr = Plant::new(clock).rollout(&x0, &controls, step).map_err(|e| e.to_string())?;
    Ok(RendezvousPlan {
        terminal_error: tr.final_state().to_vector().norm(),
        fuel: controls.l21_cost(),
        t: tr.t_grid.clone(),
        states: tr.states.iter().map(|s| s.to_array()).collect(),
        controls: controls.0.iter().map(|u| u.to_vector().into()).collect(),
        iterations: r.iterations,
        converged: r.converged,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())))
}

#[wasm_bindgen(js_name = orbitSeries)]
pub fn orbit_series_js(a: f64, e: f64, nu0: f64, samples: usize) -> Result<String, JsError> {
    to_js(orbit_series(a, e, nu0, samples))
}

#[wasm_bindgen(js_name = sparsityDemo)]
pub fn sparsity_demo_js(rows: usize, blocks: usize, seed: u32) -> Result<String, JsError> {
    to_js(sparsity_demo(rows, blocks, seed.into()))
}

#[wasm_bindgen(js_name = planLinear)]
pub fn plan_linear_js(a: f64, e: f64, nu0: f64, x0: &[f64], horizon: usize, step: f64) -> Result<String, JsError> {
    let x0: [f64; 6] = x0
        .try_into()
        .map_err(|_| JsError::new(&format!("x0 needs 6 entries, got {}", x0.len())))?;
    to_js(plan_linear(a, e, nu0, x0, horizon, step))
}
