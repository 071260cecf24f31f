//! Nonlinear relative-motion plant in the LVLH frame.
//!
//! `x` and `z` span the orbital plane (`z` points from the target towards the
//! planet's centre, which sits at `(0, 0, R)`), `y` is normal to the plane.
//! The plant is the exact two-body gravity difference written in the rotating
//! frame; the discrete map is classical RK4 with the control held constant
//! across all four stages.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orbit::{OrbitClock, OrbitError, OrbitSample};

pub const DEFAULT_SINGULARITY_EPS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("chaser within {eps} m of the planet centre (|R + r| = {distance})")]
    Singularity { distance: f64, eps: f64 },
    #[error("non-finite state or control")]
    NonFinite,
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error("expected {expected} controls, got {got}")]
    Length { expected: usize, got: usize },
    #[error("step size must be positive, got {0}")]
    StepSize(f64),
}

/// Chaser position (m) and velocity (m/s) relative to the target, LVLH axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativeState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl RelativeState {
    pub const ZERO: Self = Self {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        vx: 0.0,
        vy: 0.0,
        vz: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, vx: f64, vy: f64, vz: f64) -> Self {
        Self { x, y, z, vx, vy, vz }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.vx, self.vy, self.vz]
    }

    pub fn to_vector(self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Commanded acceleration, m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
}

impl ControlInput {
    pub const ZERO: Self = Self {
        ux: 0.0,
        uy: 0.0,
        uz: 0.0,
    };

    pub fn new(ux: f64, uy: f64, uz: f64) -> Self {
        Self { ux, uy, uz }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.ux, self.uy, self.uz)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Stacked controls `u(0), …, u(N−1)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<ControlInput>);

impl ControlSequence {
    pub fn zeros(n: usize) -> Self {
        Self(vec![ControlInput::ZERO; n])
    }

    /// Builds from a stacked `3N` vector.
    pub fn from_stacked(values: &[f64]) -> Self {
        assert!(values.len().is_multiple_of(3), "stacked control length must be a multiple of 3");
        Self(
            values
                .chunks_exact(3)
                .map(|c| ControlInput::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn to_stacked(&self) -> Vec<f64> {
        self.0.iter().flat_map(|u| [u.ux, u.uy, u.uz]).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fuel index `J₂,₁ = Σ ‖u(i)‖₂`.
    pub fn l21_cost(&self) -> f64 {
        self.0.iter().map(ControlInput::norm).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(
            self.0
                .iter()
                .map(|u| ControlInput::new(u.ux * factor, u.uy * factor, u.uz * factor))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<RelativeState>,
    pub controls: ControlSequence,
    pub t_grid: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> RelativeState {
        *self.states.last().expect("trajectory always holds the initial state")
    }

    /// CSV with header `k,t,x,y,z,vx,vy,vz,ux,uy,uz`; the final row leaves the
    /// control fields empty. Values use 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("k,t,x,y,z,vx,vy,vz,ux,uy,uz\n");
        for (k, s) in self.states.iter().enumerate() {
            let _ = write!(out, "{k},{}", fmt17(self.t_grid[k]));
            for v in s.to_array() {
                let _ = write!(out, ",{}", fmt17(v));
            }
            match self.controls.0.get(k) {
                Some(u) => {
                    let _ = writeln!(out, ",{},{},{}", fmt17(u.ux), fmt17(u.uy), fmt17(u.uz));
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())
    }

    /// Parses the format written by [`Trajectory::to_csv_string`].
    pub fn from_csv_str(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("k,t,x,y,z,vx,vy,vz,ux,uy,uz") => {}
            other => return Err(format!("unexpected trajectory header {other:?}")),
        }
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut t_grid = Vec::new();
        for (row, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(format!("row {row}: expected 11 fields, got {}", fields.len()));
            }
            let num = |i: usize| -> Result<f64, String> {
                fields[i]
                    .parse::<f64>()
                    .map_err(|e| format!("row {row}, field {i}: {e}"))
            };
            t_grid.push(num(1)?);
            states.push(RelativeState::new(num(2)?, num(3)?, num(4)?, num(5)?, num(6)?, num(7)?));
            if !fields[8].is_empty() {
                controls.push(ControlInput::new(num(8)?, num(9)?, num(10)?));
            }
        }
        if states.is_empty() || controls.len() + 1 != states.len() {
            return Err("trajectory needs N + 1 states and N controls".into());
        }
        Ok(Self {
            states,
            controls: ControlSequence(controls),
            t_grid,
        })
    }
}

/// 17 significant digits in scientific notation (round-trips exactly).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Time derivative of the relative state under the nonlinear gravity
/// difference, given the target's orbit sample at the same instant.
pub fn vector_field(
    state: &Vector6<f64>,
    u: &Vector3<f64>,
    orbit: &OrbitSample,
    mu: f64,
    singularity_eps: f64,
) -> Result<Vector6<f64>, DynamicsError> {
    let (x, y, z) = (state[0], state[1], state[2]);
    let (vx, vy, vz) = (state[3], state[4], state[5]);
    let r = orbit.radius;
    let dz = z - r;
    let dist2 = x * x + y * y + dz * dz;
    let dist = dist2.sqrt();
    if !dist.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    if dist <= singularity_eps {
        return Err(DynamicsError::Singularity {
            distance: dist,
            eps: singularity_eps,
        });
    }
    let inv3 = 1.0 / (dist2 * dist);
    let w = orbit.omega;
    let wd = orbit.omega_dot;
    let ax = 2.0 * w * vz + wd * z + w * w * x - mu * x * inv3 + u[0];
    let ay = -mu * y * inv3 + u[1];
    let az = w * w * z - 2.0 * w * vx - wd * x - mu * (dz * inv3 + 1.0 / (r * r)) + u[2];
    Ok(Vector6::new(vx, vy, vz, ax, ay, az))
}

/// One classical RK4 step of size `h` for a non-autonomous field `f(t, x)`.
pub fn rk4<const N: usize, F, E>(
    f: F,
    t: f64,
    x: &nalgebra::SVector<f64, N>,
    h: f64,
) -> Result<nalgebra::SVector<f64, N>, E>
where
    F: Fn(f64, &nalgebra::SVector<f64, N>) -> Result<nalgebra::SVector<f64, N>, E>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// The ground-truth discrete plant `x(k+1) = h(x(k), u(k))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub clock: OrbitClock,
    pub singularity_eps: f64,
}

impl Plant {
    pub fn new(clock: OrbitClock) -> Self {
        Self {
            clock,
            singularity_eps: DEFAULT_SINGULARITY_EPS,
        }
    }

    pub fn derivative(
        &self,
        state: &Vector6<f64>,
        u: &Vector3<f64>,
        t: f64,
    ) -> Result<Vector6<f64>, DynamicsError> {
        let s = self.clock.sample(t)?;
        vector_field(state, u, &s, self.clock.elements.mu(), self.singularity_eps)
    }

    /// Advances `state` from `t` to `t + step`; the orbit is sampled at the
    /// stage times `t`, `t + step/2` and `t + step`.
    pub fn step(
        &self,
        state: &Vector6<f64>,
        u: &Vector3<f64>,
        t: f64,
        step: f64,
    ) -> Result<Vector6<f64>, DynamicsError> {
        if !(step != 0.0 && step.is_finite()) {
            return Err(DynamicsError::StepSize(step));
        }
        if !state.iter().chain(u.iter()).all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        let mu = self.clock.elements.mu();
        let s0 = self.clock.sample(t)?;
        let sh = self.clock.sample(t + 0.5 * step)?;
        let s1 = self.clock.sample(t + step)?;
        rk4(
            |tau, x| {
                let orbit = if tau == t {
                    &s0
                } else if tau == t + step {
                    &s1
                } else {
                    &sh
                };
                vector_field(x, u, orbit, mu, self.singularity_eps)
            },
            t,
            state,
            step,
        )
    }

    pub fn rk4_step(
        &self,
        state: &RelativeState,
        u: &ControlInput,
        t: f64,
        step: f64,
    ) -> Result<RelativeState, DynamicsError> {
        if step <= 0.0 {
            return Err(DynamicsError::StepSize(step));
        }
        self.step(&state.to_vector(), &u.to_vector(), t, step)
            .map(|v| RelativeState::from_vector(&v))
    }

    /// Rolls the plant forward over `controls.len()` steps of size `step`
    /// starting at `t = 0`.
    pub fn rollout(
        &self,
        x0: &RelativeState,
        controls: &ControlSequence,
        step: f64,
    ) -> Result<Trajectory, DynamicsError> {
        if step <= 0.0 || !step.is_finite() {
            return Err(DynamicsError::StepSize(step));
        }
        let n = controls.len();
        let mut states = Vec::with_capacity(n + 1);
        let mut t_grid = Vec::with_capacity(n + 1);
        states.push(*x0);
        t_grid.push(0.0);
        let mut x = x0.to_vector();
        for (k, u) in controls.0.iter().enumerate() {
            let t = step * k as f64;
            x = self
                .step(&x, &u.to_vector(), t, step)
                .map_err(|e| DynamicsError::Step {
                    step: k,
                    source: Box::new(e),
                })?;
            states.push(RelativeState::from_vector(&x));
            t_grid.push(step * (k + 1) as f64);
        }
        Ok(Trajectory {
            states,
            controls: controls.clone(),
            t_grid,
        })
    }

    /// Rollout with an explicit horizon check.
    pub fn rollout_n(
        &self,
        x0: &RelativeState,
        controls: &ControlSequence,
        step: f64,
        horizon: usize,
    ) -> Result<Trajectory, DynamicsError> {
        if controls.len() != horizon {
            return Err(DynamicsError::Length {
                expected: horizon,
                got: controls.len(),
            });
        }
        self.rollout(x0, controls, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{OrbitalElements, MU_EARTH};
    use approx::assert_relative_eq;

    fn paper_plant() -> Plant {
        Plant::new(OrbitClock::new(OrbitalElements::earth(6763e3, 0.73074).unwrap(), false))
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let p = paper_plant();
        let s = p.clock.sample(0.0).unwrap();
        let d = vector_field(&Vector6::zeros(), &Vector3::zeros(), &s, MU_EARTH, 1.0).unwrap();
        // gravity terms are ~μ/R² ≈ 120 m/s²; the residual is pure rounding
        assert!(d.amax() < 1e-9 * MU_EARTH / (s.radius * s.radius), "{d}");
        let next = p.rk4_step(&RelativeState::ZERO, &ControlInput::ZERO, 10.0, 1.0).unwrap();
        assert!(next.position().amax() < 1e-9, "{next:?}");
    }

    #[test]
    fn out_of_plane_row_structure() {
        let p = paper_plant();
        let s = p.clock.sample(0.0).unwrap();
        let y = 500.0;
        let d = vector_field(&Vector6::new(0.0, y, 0.0, 0.0, 0.0, 0.0), &Vector3::zeros(), &s, MU_EARTH, 1.0).unwrap();
        let dist = (y * y + s.radius * s.radius).sqrt();
        assert_relative_eq!(d[4], -MU_EARTH * y / dist.powi(3), max_relative = 1e-12);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn vector_field_matches_hand_evaluation() {
        // Straight transcription of the three acceleration rows with the orbit
        // quantities rebuilt from the elements, not from OrbitSample.
        let el = OrbitalElements::earth(6763e3, 0.73074).unwrap();
        let h = (MU_EARTH * 6763e3 * (1.0 - 0.73074f64.powi(2))).sqrt();
        let k = MU_EARTH / h.powf(1.5);
        let rho: f64 = 1.73074;
        let w = k * k * rho * rho;
        let big_r = (h / w).sqrt();
        let (x, y, z, vx, vy, vz) = (1e3, -1e3, 1e3, 3.0, 3.0, -3.0);
        let d3 = (x * x + y * y + (z - big_r) * (z - big_r)).powf(1.5);
        let ax = 2.0 * w * vz + w * w * x - MU_EARTH * x / d3;
        let ay = -MU_EARTH * y / d3;
        let az = w * w * z - 2.0 * w * vx - MU_EARTH * ((z - big_r) / d3 + 1.0 / (big_r * big_r));
        let s = el.sample(0.0).unwrap();
        let d = vector_field(&Vector6::new(x, y, z, vx, vy, vz), &Vector3::zeros(), &s, MU_EARTH, 1.0).unwrap();
        assert_eq!(&d.as_slice()[..3], &[vx, vy, vz]);
        assert_relative_eq!(d[3], ax, max_relative = 1e-9);
        assert_relative_eq!(d[4], ay, max_relative = 1e-10);
        assert_relative_eq!(d[5], az, max_relative = 1e-6, epsilon = 1e-9);
    }

    #[test]
    fn singularity_is_reported() {
        let p = paper_plant();
        let s = p.clock.sample(0.0).unwrap();
        let at_centre = Vector6::new(0.0, 0.0, s.radius, 0.0, 0.0, 0.0);
        assert!(matches!(
            vector_field(&at_centre, &Vector3::zeros(), &s, MU_EARTH, 1.0),
            Err(DynamicsError::Singularity { .. })
        ));
    }

    #[test]
    fn rk4_scalar_self_test() {
        let x = nalgebra::SVector::<f64, 1>::new(1.0);
        let y = rk4::<1, _, ()>(|_, x| Ok(*x), 0.0, &x, 1.0).unwrap();
        assert_relative_eq!(y[0], 1.0 + 1.0 + 0.5 + 1.0 / 6.0 + 1.0 / 24.0, max_relative = 1e-15);
    }

    #[test]
    fn rollout_lengths_and_trivial_cases() {
        let p = paper_plant();
        let x0 = RelativeState::new(1e3, -1e3, 1e3, 3.0, 3.0, -3.0);
        let tr = p.rollout(&x0, &ControlSequence::zeros(0), 1.0).unwrap();
        assert_eq!(tr.states, vec![x0]);
        let tr = p.rollout(&RelativeState::ZERO, &ControlSequence::zeros(20), 1.0).unwrap();
        assert_eq!(tr.states.len(), 21);
        assert_eq!(tr.t_grid[20], 20.0);
        assert!(tr.states.iter().all(|s| s.position().amax() < 1e-8));
        assert!(p.rollout_n(&x0, &ControlSequence::zeros(3), 1.0, 4).is_err());
    }

    #[test]
    fn rollout_reports_failing_step() {
        let p = paper_plant();
        let r = p.clock.sample(0.0).unwrap().radius;
        // start right next to the planet centre
        let x0 = RelativeState::new(0.0, 0.0, r - 0.5, 0.0, 0.0, 0.0);
        match p.rollout(&x0, &ControlSequence::zeros(3), 1.0) {
            Err(DynamicsError::Step { step: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let p = paper_plant();
        let x0 = RelativeState::new(1e3, -1e3, 1e3, 3.0, 3.0, -3.0);
        let u = ControlSequence::from_stacked(&[0.1, 0.0, -0.2, 0.0, 0.3, 0.0]);
        let tr = p.rollout(&x0, &u, 1.0).unwrap();
        let csv = tr.to_csv_string();
        assert!(csv.starts_with("k,t,x,y,z,vx,vy,vz,ux,uy,uz\n"));
        assert!(csv.trim_end().ends_with(",,,"));
        let back = Trajectory::from_csv_str(&csv).unwrap();
        assert_eq!(back, tr);
    }

    #[test]
    fn l21_cost() {
        let u = ControlSequence::from_stacked(&[3.0, 4.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(u.l21_cost(), 7.0);
    }
}
