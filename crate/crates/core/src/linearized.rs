//! Tschauner–Hempel baseline: the time-varying linearization of the plant
//! about the target, its discrete state-transition matrices and the affine
//! terminal map `x(N) = C_N u + β`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4, ControlSequence, RelativeState};
use crate::orbit::{OrbitClock, OrbitError, OrbitSample};
use crate::sparse_solver::{irls_solve, IrlsConfig, IrlsError, IrlsResult};

/// RK4 substeps per sample interval for the state-transition matrix; also the
/// number of Simpson subintervals for the input integral.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// `A_c(t) = [0 I; A₁ A₂]` evaluated from an orbit sample; `k` is `μ/h^{3/2}`.
pub fn continuous_matrices(sample: &OrbitSample, k: f64) -> (Matrix6<f64>, Matrix6x3<f64>) {
    let w = sample.omega;
    let wd = sample.omega_dot;
    let kw = k * w.powf(1.5);
    let a1 = Matrix3::new(
        w * w - kw, 0.0, wd, //
        0.0, -kw, 0.0, //
        -wd, 0.0, w * w + 2.0 * kw,
    );
    let a2 = Matrix3::new(
        0.0, 0.0, 2.0 * w, //
        0.0, 0.0, 0.0, //
        -2.0 * w, 0.0, 0.0,
    );
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&a1);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&a2);
    (a, input_matrix())
}

/// `B_c = [0₃ₓ₃; I₃]`.
pub fn input_matrix() -> Matrix6x3<f64> {
    let mut b = Matrix6x3::zeros();
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLinearModel {
    /// `A(k) = Φ(t_{k+1}, t_k)`
    pub a_seq: Vec<Matrix6<f64>>,
    /// `B(k) = ∫ Φ(t_{k+1}, σ) B_c dσ`
    pub b_seq: Vec<Matrix6x3<f64>>,
    pub step: f64,
}

impl DiscreteLinearModel {
    pub fn horizon(&self) -> usize {
        self.a_seq.len()
    }

    /// Discrete transition `Φ_d(k, m) = A(k−1)⋯A(m)`, identity for `k = m`.
    pub fn transition(&self, k: usize, m: usize) -> Matrix6<f64> {
        assert!(k >= m && k <= self.horizon(), "transition({k}, {m}) out of range");
        let mut phi = Matrix6::identity();
        for a in &self.a_seq[m..k] {
            phi = a * phi;
        }
        phi
    }

    /// Step-by-step propagation of `x(k+1) = A(k)x(k) + B(k)u(k)`.
    pub fn propagate(&self, x0: &Vector6<f64>, controls: &ControlSequence) -> Vec<Vector6<f64>> {
        let mut out = Vec::with_capacity(controls.len() + 1);
        let mut x = *x0;
        out.push(x);
        for (k, u) in controls.0.iter().enumerate() {
            x = self.a_seq[k] * x + self.b_seq[k] * u.to_vector();
            out.push(x);
        }
        out
    }

    /// Structured text dump for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrices always serialize")
    }
}

/// Discretizes the linearized model over `horizon` intervals of length `step`
/// starting at `t = 0`.
///
/// Each `A(k)` integrates `Φ̇ = A_c(t)Φ` from the identity with `substeps` RK4
/// steps. The same pass records `Φ(σ_j, t_k)` at the substep nodes, from which
/// `Φ(t_{k+1}, σ_j) = A(k) Φ(σ_j, t_k)⁻¹` feeds a composite Simpson rule for
/// `B(k)`. `substeps` is rounded up to an even number.
pub fn discretize(
    clock: &OrbitClock,
    step: f64,
    horizon: usize,
    substeps: usize,
) -> Result<DiscreteLinearModel, OrbitError> {
    assert!(step > 0.0, "step must be positive");
    let substeps = substeps.max(2).next_multiple_of(2);
    let k_const = clock.elements.k();
    let a_of = |t: f64| -> Result<Matrix6<f64>, OrbitError> {
        Ok(continuous_matrices(&clock.sample(t)?, k_const).0)
    };
    let bc = input_matrix();

    let intervals: Vec<usize> = (0..horizon).collect();
    let one = |k: usize| -> Result<(Matrix6<f64>, Matrix6x3<f64>), OrbitError> {
        let t0 = step * k as f64;
        let h = step / substeps as f64;
        let mut nodes = Vec::with_capacity(substeps + 1);
        let mut phi = Matrix6::<f64>::identity();
        nodes.push(phi);
        for j in 0..substeps {
            let t = t0 + h * j as f64;
            phi = rk4_matrix(&a_of, t, &phi, h)?;
            nodes.push(phi);
        }
        let a_k = phi;
        let mut b_k = Matrix6x3::zeros();
        for (j, node) in nodes.iter().enumerate() {
            let weight = if j == 0 || j == substeps {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let inv = node.try_inverse().expect("state-transition matrices are invertible");
            b_k += (a_k * inv * bc) * weight;
        }
        b_k *= h / 3.0;
        Ok((a_k, b_k))
    };

    #[cfg(feature = "parallel")]
    let parts: Vec<_> = {
        use rayon::prelude::*;
        intervals.par_iter().map(|&k| one(k)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = intervals.iter().map(|&k| one(k)).collect();

    let mut a_seq = Vec::with_capacity(horizon);
    let mut b_seq = Vec::with_capacity(horizon);
    for p in parts {
        let (a, b) = p?;
        a_seq.push(a);
        b_seq.push(b);
    }
    Ok(DiscreteLinearModel { a_seq, b_seq, step })
}

fn rk4_matrix<F>(a_of: &F, t: f64, phi: &Matrix6<f64>, h: f64) -> Result<Matrix6<f64>, OrbitError>
where
    F: Fn(f64) -> Result<Matrix6<f64>, OrbitError>,
{
    // Φ is integrated column by column through the shared RK4 kernel.
    let a0 = a_of(t)?;
    let ah = a_of(t + 0.5 * h)?;
    let a1 = a_of(t + h)?;
    let mut out = Matrix6::zeros();
    for c in 0..6 {
        let col: Vector6<f64> = phi.column(c).into();
        let next = rk4::<6, _, OrbitError>(
            |tau, x| {
                let a = if tau == t {
                    &a0
                } else if tau == t + h {
                    &a1
                } else {
                    &ah
                };
                Ok(a * x)
            },
            t,
            &col,
            h,
        )?;
        out.set_column(c, &next);
    }
    Ok(out)
}

/// Terminal map `x(N) = C_N u + β` with `C_N = [Φ_d(N,1)B(0), …, B(N−1)]` and
/// `β = Φ_d(N,0) x₀`.
pub fn terminal_map(model: &DiscreteLinearModel, x0: &RelativeState) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.horizon();
    let mut c = DMatrix::zeros(6, 3 * n);
    let mut tail = Matrix6::<f64>::identity();
    for tau in (0..n).rev() {
        let block = tail * model.b_seq[tau];
        c.view_mut((0, 3 * tau), (6, 3)).copy_from(&block);
        tail *= model.a_seq[tau];
    }
    let beta = tail * x0.to_vector();
    (c, DVector::from_column_slice(beta.as_slice()))
}

/// Minimum-fuel controller on the linearized model: IRLS on
/// `C_N u + β = x_f`.
pub fn solve_linear_controller(
    c: &DMatrix<f64>,
    beta: &DVector<f64>,
    x_f: &RelativeState,
    config: &IrlsConfig,
) -> Result<(ControlSequence, IrlsResult), IrlsError> {
    let target = DVector::from_column_slice(&x_f.to_array());
    let result = irls_solve(c, beta, &target, config)?;
    Ok((ControlSequence::from_stacked(result.u.as_slice()), result))
}
