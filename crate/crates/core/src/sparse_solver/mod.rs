//! Sparse minimum-fuel solvers for underdetermined terminal constraints.
//!
//! [`irls_solve`] approximates the minimum `ℓ2/ℓ1` (or entrywise `ℓ1`)
//! solution of `C u + β = z_f` by iteratively reweighted minimum-norm solves.
//! [`l1_oracle`] is an exact enumeration over basic solutions, used to check
//! the iteration on small problems.

mod irls;
mod oracle;
#[cfg(test)]
mod properties;

pub use irls::{
    irls_solve, min_l2_solution, weighted_min_norm, EpsilonRule, IrlsConfig, IrlsError, IrlsResult,
    SolveFormula, StopReason, WeightMode,
};
pub use oracle::{l1_oracle, OracleError, OracleSolution};

/// `Σ_i ‖u(i)‖₂` over consecutive blocks of `block` entries.
pub fn l21_norm(u: &[f64], block: usize) -> f64 {
    u.chunks(block.max(1))
        .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}
