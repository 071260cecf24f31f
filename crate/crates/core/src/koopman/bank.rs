use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, CENTER_STREAM};
use super::KoopmanError;
use crate::dynamics::{ControlInput, RelativeState};

/// Number of fixed (non-RBF) observables preceding the radial terms.
pub const FIXED_OBSERVABLES: usize = 19;
pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 3;

/// Diagonal state scaling applied before lifting: positions by `l_ref`,
/// velocities by `v_ref`, accelerations by `v_ref² / l_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    #[serde(rename = "L_ref")]
    pub l_ref: f64,
    #[serde(rename = "V_ref")]
    pub v_ref: f64,
}

impl Normalization {
    pub fn new(l_ref: f64, v_ref: f64) -> Result<Self, KoopmanError> {
        if !(l_ref.is_finite() && l_ref > 0.0 && v_ref.is_finite() && v_ref > 0.0) {
            return Err(KoopmanError::Config(format!(
                "normalization scales must be positive, got L_ref = {l_ref}, V_ref = {v_ref}"
            )));
        }
        Ok(Self { l_ref, v_ref })
    }

    pub fn identity() -> Self {
        Self { l_ref: 1.0, v_ref: 1.0 }
    }

    pub fn a_ref(&self) -> f64 {
        self.v_ref * self.v_ref / self.l_ref
    }

    pub fn normalize(&self, s: &RelativeState) -> [f64; 6] {
        let (l, v) = (self.l_ref, self.v_ref);
        [s.x / l, s.y / l, s.z / l, s.vx / v, s.vy / v, s.vz / v]
    }

    pub fn denormalize(&self, n: &[f64]) -> RelativeState {
        let (l, v) = (self.l_ref, self.v_ref);
        RelativeState::new(n[0] * l, n[1] * l, n[2] * l, n[3] * v, n[4] * v, n[5] * v)
    }

    pub fn normalize_control(&self, u: &ControlInput) -> [f64; 3] {
        let a = self.a_ref();
        [u.ux / a, u.uy / a, u.uz / a]
    }

    pub fn denormalize_control(&self, n: &[f64]) -> ControlInput {
        let a = self.a_ref();
        ControlInput::new(n[0] * a, n[1] * a, n[2] * a)
    }
}

/// The lifting `g = [g₁ … g_{N_k}]`, evaluated on normalized states
/// `s = [x y z ẋ ẏ ż]`:
///
/// ```text
/// g₁…g₆    s
/// g₇…g₁₃   [1, ẋ, ẏ, ż, x, y, z] / (1 + x² + y² + z²)^{3/2}
/// g₁₄…g₁₆  [x²ẋ, y²ẏ, z(z − r̂)ż] / D^{5/2},   D = x² + y² + (z − r̂)²
/// g₁₇…g₁₉  [x, y, z] / D^{3/2}
/// g₂₀…     1/√(1 + αᵢ²),   αᵢ = Σⱼ (s_j² − c_{i,j}²)
/// ```
///
/// A bank with `n_lift < 19` keeps the first `n_lift` entries of that list.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableBank {
    n_lift: usize,
    /// Reference length in metres; `r̂ = r_ref / L_ref`.
    r_ref: f64,
    normalization: Normalization,
    rbf_seed: u64,
    rbf_centers: Vec<[f64; 6]>,
}

impl ObservableBank {
    /// Draws the `n_lift − 19` centres from `U[−1, 1]⁶` using `rbf_seed`.
    pub fn new(
        n_lift: usize,
        normalization: Normalization,
        r_ref: f64,
        rbf_seed: u64,
    ) -> Result<Self, KoopmanError> {
        use rand::Rng;
        let mut rng = stream_rng(rbf_seed, CENTER_STREAM);
        let n_rbf = n_lift.saturating_sub(FIXED_OBSERVABLES);
        let centers = (0..n_rbf)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        Self::from_parts(n_lift, normalization, r_ref, rbf_seed, centers)
    }

    /// Bank for a mission starting at `x0`: `r̂` is the Euclidean norm of the
    /// normalized initial state, or 1 when `x0` is the origin (where `r̂ = 0`
    /// would put the singular point of `g₁₄…g₁₉` on the start state).
    pub fn for_mission(
        n_lift: usize,
        normalization: Normalization,
        x0: &RelativeState,
        rbf_seed: u64,
    ) -> Result<Self, KoopmanError> {
        let n = normalization.normalize(x0);
        let mut r_hat = n.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_hat == 0.0 {
            r_hat = 1.0;
        }
        Self::new(n_lift, normalization, r_hat * normalization.l_ref, rbf_seed)
    }

    pub fn from_parts(
        n_lift: usize,
        normalization: Normalization,
        r_ref: f64,
        rbf_seed: u64,
        rbf_centers: Vec<[f64; 6]>,
    ) -> Result<Self, KoopmanError> {
        if n_lift < STATE_DIM {
            return Err(KoopmanError::Config(format!(
                "n_lift must be at least {STATE_DIM}, got {n_lift}"
            )));
        }
        if rbf_centers.len() != n_lift.saturating_sub(FIXED_OBSERVABLES) {
            return Err(KoopmanError::Schema(format!(
                "{} RBF centres for n_lift = {n_lift}",
                rbf_centers.len()
            )));
        }
        if !r_ref.is_finite() {
            return Err(KoopmanError::Config("r_ref must be finite".into()));
        }
        Ok(Self {
            n_lift,
            r_ref,
            normalization,
            rbf_seed,
            rbf_centers,
        })
    }

    pub fn n_lift(&self) -> usize {
        self.n_lift
    }

    pub fn r_ref(&self) -> f64 {
        self.r_ref
    }

    pub fn r_hat(&self) -> f64 {
        self.r_ref / self.normalization.l_ref
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn rbf_seed(&self) -> u64 {
        self.rbf_seed
    }

    pub fn rbf_centers(&self) -> &[[f64; 6]] {
        &self.rbf_centers
    }

    /// Lifts a normalized state into `out` (length `n_lift`).
    pub fn lift_normalized_into(&self, s: &[f64; 6], out: &mut [f64]) -> Result<(), KoopmanError> {
        debug_assert_eq!(out.len(), self.n_lift);
        let [x, y, z, vx, vy, vz] = *s;
        let mut put = Filler { out, at: 0 };
        for v in s {
            put.push(*v);
        }
        if put.full() {
            return Ok(());
        }
        let q = (1.0 + x * x + y * y + z * z).powf(1.5);
        for v in [1.0, vx, vy, vz, x, y, z] {
            put.push(v / q);
        }
        if put.full() {
            return Ok(());
        }
        let r_hat = self.r_hat();
        let dz = z - r_hat;
        let d = x * x + y * y + dz * dz;
        let d32 = d.powf(1.5);
        let d52 = d.powf(2.5);
        if !(d32 > 0.0 && d52 > 0.0) {
            return Err(KoopmanError::SingularObservable { state: *s, r_hat });
        }
        for v in [x * x * vx / d52, y * y * vy / d52, z * dz * vz / d52, x / d32, y / d32, z / d32] {
            put.push(v);
        }
        let norm2: f64 = s.iter().map(|v| v * v).sum();
        for c in &self.rbf_centers {
            let alpha = norm2 - c.iter().map(|v| v * v).sum::<f64>();
            put.push(1.0 / (1.0 + alpha * alpha).sqrt());
        }
        let out = put.out;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(KoopmanError::SingularObservable { state: *s, r_hat });
        }
        Ok(())
    }

    pub fn lift_normalized(&self, s: &[f64; 6]) -> Result<DVector<f64>, KoopmanError> {
        let mut out = DVector::zeros(self.n_lift);
        self.lift_normalized_into(s, out.as_mut_slice())?;
        Ok(out)
    }

    /// Lifts a physical state (normalizing first).
    pub fn lift(&self, state: &RelativeState) -> Result<DVector<f64>, KoopmanError> {
        self.lift_normalized(&self.normalization.normalize(state))
    }
}

struct Filler<'a> {
    out: &'a mut [f64],
    at: usize,
}

impl Filler<'_> {
    fn push(&mut self, v: f64) {
        if self.at < self.out.len() {
            self.out[self.at] = v;
            self.at += 1;
        }
    }

    fn full(&self) -> bool {
        self.at == self.out.len()
    }
}
