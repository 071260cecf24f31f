//! Keplerian propagation of the target orbit.
//!
//! The LVLH frame rotates with the target, so the relative dynamics need the
//! target's orbital rate `ω`, its derivative `ω̇` and the radius `R` at every
//! evaluation time. All three follow from the true anomaly, which is obtained
//! from time through Kepler's equation.
//!
//! Derived constants: `h = √(μ a (1 − e²))`, `k = μ / h^{3/2}`, and with
//! `ρ = 1 + e cos ν`:
//!
//! ```text
//! ω  = k² ρ²
//! ω̇  = d(k² ρ²)/dt = 2 k² ρ ρ̇ = −2 k⁴ ρ³ e sin ν      (ν̇ = ω)
//! R  = h² / (μ ρ)                                      (so R² ω = h)
//! ```
//!
//! Note that the reference mission orbit (a = 6763 km, e = 0.73074) has a
//! perigee radius of about 1821 km, i.e. below the Earth's surface. It is
//! propagated as stated; nothing here checks for surface intersection.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth's gravitational parameter, m³/s².
pub const MU_EARTH: f64 = 3.986004418e14;

const KEPLER_TOL: f64 = 1e-14;
const KEPLER_MAX_NEWTON: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("invalid orbital elements: {0}")]
    InvalidElements(String),
    #[error("Kepler's equation did not converge (M = {mean_anomaly}, e = {eccentricity}, residual = {residual:e})")]
    KeplerNonConvergence {
        mean_anomaly: f64,
        eccentricity: f64,
        residual: f64,
    },
}

/// Geometry of the target orbit plus the constants derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ElementsRepr", into = "ElementsRepr")]
pub struct OrbitalElements {
    semimajor_axis_m: f64,
    eccentricity: f64,
    mu: f64,
    nu0: f64,
    h: f64,
    k: f64,
    mean_motion: f64,
    mean_anomaly0: f64,
}

#[derive(Serialize, Deserialize)]
struct ElementsRepr {
    semimajor_axis_m: f64,
    eccentricity: f64,
    #[serde(default = "default_mu")]
    mu: f64,
    #[serde(default)]
    nu0: f64,
}

fn default_mu() -> f64 {
    MU_EARTH
}

impl TryFrom<ElementsRepr> for OrbitalElements {
    type Error = OrbitError;

    fn try_from(r: ElementsRepr) -> Result<Self, Self::Error> {
        OrbitalElements::new(r.semimajor_axis_m, r.eccentricity, r.mu, r.nu0)
    }
}

impl From<OrbitalElements> for ElementsRepr {
    fn from(e: OrbitalElements) -> Self {
        ElementsRepr {
            semimajor_axis_m: e.semimajor_axis_m,
            eccentricity: e.eccentricity,
            mu: e.mu,
            nu0: e.nu0,
        }
    }
}

impl OrbitalElements {
    pub fn new(semimajor_axis_m: f64, eccentricity: f64, mu: f64, nu0: f64) -> Result<Self, OrbitError> {
        if !(semimajor_axis_m.is_finite() && semimajor_axis_m > 0.0) {
            return Err(OrbitError::InvalidElements(format!(
                "semimajor axis must be positive and finite, got {semimajor_axis_m}"
            )));
        }
        if !(0.0..1.0).contains(&eccentricity) {
            return Err(OrbitError::InvalidElements(format!(
                "eccentricity must lie in [0, 1), got {eccentricity}"
            )));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(OrbitError::InvalidElements(format!(
                "gravitational parameter must be positive and finite, got {mu}"
            )));
        }
        if !nu0.is_finite() {
            return Err(OrbitError::InvalidElements("initial true anomaly must be finite".into()));
        }
        let h = (mu * semimajor_axis_m * (1.0 - eccentricity * eccentricity)).sqrt();
        let k = mu / h.powf(1.5);
        if !(h > 0.0 && k.is_finite() && k > 0.0) {
            return Err(OrbitError::InvalidElements(format!(
                "derived constants degenerate (h = {h}, k = {k})"
            )));
        }
        let mean_motion = (mu / semimajor_axis_m.powi(3)).sqrt();
        let e0 = eccentric_from_true(nu0, eccentricity);
        let mean_anomaly0 = e0 - eccentricity * e0.sin();
        Ok(Self {
            semimajor_axis_m,
            eccentricity,
            mu,
            nu0,
            h,
            k,
            mean_motion,
            mean_anomaly0,
        })
    }

    /// Earth-centred orbit with the true anomaly at epoch set to zero (periapsis).
    pub fn earth(semimajor_axis_m: f64, eccentricity: f64) -> Result<Self, OrbitError> {
        Self::new(semimajor_axis_m, eccentricity, MU_EARTH, 0.0)
    }

    pub fn semimajor_axis(&self) -> f64 {
        self.semimajor_axis_m
    }

    pub fn eccentricity(&self) -> f64 {
        self.eccentricity
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    /// Specific angular momentum `h`.
    pub fn angular_momentum(&self) -> f64 {
        self.h
    }

    /// `k = μ / h^{3/2}`.
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn mean_motion(&self) -> f64 {
        self.mean_motion
    }

    pub fn period(&self) -> f64 {
        TAU / self.mean_motion
    }

    pub fn mean_anomaly_at(&self, t: f64) -> f64 {
        self.mean_anomaly0 + self.mean_motion * t
    }

    /// Propagates the target to `t` seconds after epoch.
    pub fn sample(&self, t: f64) -> Result<OrbitSample, OrbitError> {
        let e = self.eccentricity;
        let big_e = solve_kepler(self.mean_anomaly_at(t), e)?;
        let nu = true_from_eccentric(big_e, e);
        let rho = 1.0 + e * nu.cos();
        let k2 = self.k * self.k;
        let omega = k2 * rho * rho;
        let omega_dot = -2.0 * k2 * k2 * rho.powi(3) * e * nu.sin();
        let radius = self.h * self.h / (self.mu * rho);
        Ok(OrbitSample {
            t,
            nu,
            eccentric_anomaly: big_e,
            rho,
            omega,
            omega_dot,
            radius,
        })
    }
}

/// Target orbit state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub t: f64,
    pub nu: f64,
    pub eccentric_anomaly: f64,
    /// `1 + e cos ν`
    pub rho: f64,
    pub omega: f64,
    pub omega_dot: f64,
    /// Target radius `R`, metres.
    pub radius: f64,
}

/// Solves `E − e sin E = M` for the eccentric anomaly.
///
/// `M` is reduced into `[0, 2π)` for the iteration and the whole revolutions
/// are added back, so the result is continuous in `M`. Newton's method starts
/// from `M` (or `π` for `e ≥ 0.8`); if it fails to reach the tolerance within
/// the iteration cap the root is bracketed and bisected instead.
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, OrbitError> {
    if !(0.0..1.0).contains(&e) || !mean_anomaly.is_finite() {
        return Err(OrbitError::KeplerNonConvergence {
            mean_anomaly,
            eccentricity: e,
            residual: f64::NAN,
        });
    }
    let m = mean_anomaly.rem_euclid(TAU);
    let offset = mean_anomaly - m;
    if e == 0.0 {
        return Ok(mean_anomaly);
    }
    let residual = |x: f64| x - e * x.sin() - m;

    let mut x = if e < 0.8 { m } else { PI };
    let mut converged = false;
    for _ in 0..KEPLER_MAX_NEWTON {
        let f = residual(x);
        let step = f / (1.0 - e * x.cos());
        x -= step;
        if step.abs() <= KEPLER_TOL * (1.0 + x.abs()) {
            converged = true;
            break;
        }
    }
    if !converged || !x.is_finite() || residual(x).abs() >= 1e-12 {
        x = bisect_kepler(m, e);
    }
    let r = residual(x);
    if r.abs() >= 1e-12 {
        return Err(OrbitError::KeplerNonConvergence {
            mean_anomaly,
            eccentricity: e,
            residual: r,
        });
    }
    Ok(x + offset)
}

// f(E) = E − e sin E − M is monotone on [0, 2π] with f(0) ≤ 0 ≤ f(2π).
fn bisect_kepler(m: f64, e: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, TAU);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - e * mid.sin() - m < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// True anomaly from eccentric anomaly, on the same revolution as `E`.
pub fn true_from_eccentric(big_e: f64, e: f64) -> f64 {
    let beta = (1.0 - e * e).sqrt();
    let raw = (beta * big_e.sin()).atan2(big_e.cos() - e);
    big_e + wrap_pi(raw - big_e)
}

/// Eccentric anomaly from true anomaly, on the same revolution as `ν`.
pub fn eccentric_from_true(nu: f64, e: f64) -> f64 {
    let beta = (1.0 - e * e).sqrt();
    let raw = (beta * nu.sin()).atan2(e + nu.cos());
    nu + wrap_pi(raw - nu)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_pi(angle: f64) -> f64 {
    let a = (angle + PI).rem_euclid(TAU) - PI;
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Supplies orbit samples to the plant and the linearized model, optionally
/// freezing the anomaly at its epoch value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitClock {
    pub elements: OrbitalElements,
    pub freeze_anomaly: bool,
}

impl OrbitClock {
    pub fn new(elements: OrbitalElements, freeze_anomaly: bool) -> Self {
        Self {
            elements,
            freeze_anomaly,
        }
    }

    pub fn sample(&self, t: f64) -> Result<OrbitSample, OrbitError> {
        if self.freeze_anomaly {
            let mut s = self.elements.sample(0.0)?;
            s.t = t;
            Ok(s)
        } else {
            self.elements.sample(t)
        }
    }

    /// Mean orbital rate over `[0, horizon]`, averaged on `steps + 1` equally
    /// spaced samples.
    pub fn mean_rate(&self, horizon: f64, steps: usize) -> Result<f64, OrbitError> {
        let steps = steps.max(1);
        let mut acc = 0.0;
        for i in 0..=steps {
            acc += self.sample(horizon * i as f64 / steps as f64)?.omega;
        }
        Ok(acc / (steps + 1) as f64)
    }
}
