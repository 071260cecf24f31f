use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::l21_norm;

const WEIGHT_CEIL: f64 = 1e30;
const WEIGHT_FLOOR: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrlsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entries in the constraint data")]
    NonFinite,
    #[error("weights must be positive and finite")]
    Weights,
    #[error("weighted normal matrix is ill-conditioned beyond ridge repair (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// One weight per entry: drives the iteration towards the entrywise `ℓ1`
    /// minimizer.
    #[default]
    Entrywise,
    /// One weight per block, shared across its entries: targets `Σ‖u(i)‖₂`.
    Blockwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// `ε ← min(ε, ‖u‖∞)`. The smoothing stays at the size of the largest
    /// entry, so the limit is a smoothed `ℓ1` solution rather than the exact
    /// minimizer.
    InfNorm,
    /// `ε ← min(ε, ‖u‖∞, r_{p+1}(u)/n)` where `r_{p+1}` is the `(p+1)`-th
    /// largest magnitude (entry or block) and `n` the number of entries or
    /// blocks. Drives `ε → 0` as the iterate becomes `p`-sparse, which can
    /// lock onto the first vertex it approaches.
    Sparsity,
    /// Holds `ε` until the certified duality gap of the iterate drops below
    /// `continuation_tol · n · ε` (`n` entries or blocks), then shrinks it by
    /// `continuation_factor`; capped by `‖u‖∞`. Each stage minimizes the
    /// convex `Σ √(u² + ε²)`, so the limit is the global `ℓ1` (or `ℓ2/ℓ1`)
    /// minimizer. Here `ε` starts at, and `ε̄` is read relative to, `‖u‖∞` of
    /// the first (minimum-`ℓ2`) iterate; success also needs a settled final
    /// stage.
    #[default]
    Continuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolveFormula {
    /// `u = D Cᵀ (C D Cᵀ + λI)⁻¹ (z_f − β)` with `D = 𝒲⁻²`.
    #[default]
    Kkt,
    /// `u = 𝒲⁻¹ Aᵀ (A Aᵀ + I)⁻¹ β` with `A = C 𝒲⁻¹`: unit Tikhonov term and
    /// `β` as right-hand side. Does not enforce `C u + β = z_f`; kept for
    /// comparison only.
    PaperPrinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrlsConfig {
    pub j_max: usize,
    /// Success threshold `ε̄` on the smoothing parameter.
    pub eps_bar: f64,
    /// Ridge added to the unit-diagonal (Jacobi-scaled) `C D Cᵀ`.
    pub ridge_lambda: f64,
    pub weight_mode: WeightMode,
    pub block_size: usize,
    pub epsilon_rule: EpsilonRule,
    pub formula: SolveFormula,
    /// Secondary stop on `‖u⁺ − u‖ ≤ stall_tol ‖u⁺‖`.
    pub stall_tol: f64,
    /// Duality gap, in units of `n · ε`, that ends a `Continuation` stage.
    pub continuation_tol: f64,
    /// Shrink factor applied to `ε` between `Continuation` stages.
    pub continuation_factor: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            j_max: 1000,
            eps_bar: 1e-6,
            ridge_lambda: 1e-10,
            weight_mode: WeightMode::Entrywise,
            block_size: 3,
            epsilon_rule: EpsilonRule::Continuation,
            formula: SolveFormula::Kkt,
            stall_tol: 1e-9,
            continuation_tol: 1.0,
            continuation_factor: 0.1,
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.j_max < 1 {
            return Err("j_max must be at least 1".into());
        }
        if !(self.eps_bar > 0.0) {
            return Err("eps_bar must be positive".into());
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err("ridge_lambda must be non-negative".into());
        }
        if self.block_size < 1 {
            return Err("block_size must be at least 1".into());
        }
        if !(self.stall_tol >= 0.0) {
            return Err("stall_tol must be non-negative".into());
        }
        if !(self.continuation_tol > 0.0) {
            return Err("continuation_tol must be positive".into());
        }
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return Err("continuation_factor must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `ε ≤ ε̄`.
    Epsilon,
    /// Relative iterate change fell below `stall_tol`.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrlsResult {
    pub u: DVector<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    pub eps_final: f64,
    /// `ε` after every iteration.
    pub eps_history: Vec<f64>,
    /// `Σ_i ‖u(i)‖₂` with the configured block size.
    pub cost_l21: f64,
    pub cost_l1: f64,
    /// `‖C u + β − z_f‖₂`
    pub constraint_residual: f64,
    /// Ridge used in the last solve.
    pub lambda: f64,
    /// Certified bound on `J(u) − J*` from the last KKT multiplier; `None`
    /// for the printed formula.
    pub duality_gap: Option<f64>,
}

/// Minimizes `Σ w_ℓ² u_ℓ²` subject to `C u = b` (ridge-regularized):
/// `u = D Cᵀ (C D Cᵀ + λI)⁻¹ b` with `D = diag(w)⁻²`.
pub fn weighted_min_norm(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, IrlsError> {
    let d = inverse_square(weights)?;
    Ok(solve_with_metric(c, b, &d, lambda)?.0)
}

/// Unweighted minimum-`ℓ2` solution `Cᵀ(CCᵀ)⁻¹b`.
pub fn min_l2_solution(c: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, IrlsError> {
    weighted_min_norm(c, b, &DVector::from_element(c.ncols(), 1.0), 0.0)
}

fn inverse_square(weights: &DVector<f64>) -> Result<DVector<f64>, IrlsError> {
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(IrlsError::Weights);
    }
    Ok(weights.map(|w| 1.0 / (w * w)))
}

fn scaled_columns(c: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut cd = c.clone();
    for (j, mut col) in cd.column_iter_mut().enumerate() {
        col *= d[j];
    }
    cd
}

/// Solves `u = D Cᵀ (C D Cᵀ + λI)⁻¹ b` on the Jacobi-scaled Gram matrix
/// `S (C D Cᵀ) S` (unit diagonal), so the ridge `lambda` is relative and acts
/// evenly on rows of very different magnitude. Also returns the multiplier
/// `y` with `u = D Cᵀ y`.
fn solve_with_metric(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    d: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, DVector<f64>), IrlsError> {
    let cd = scaled_columns(c, d);
    let mut gram = &cd * c.transpose();
    let p = gram.nrows();
    let s: DVector<f64> = DVector::from_fn(p, |i, _| {
        let g = gram[(i, i)];
        if g > 0.0 && g.is_finite() {
            1.0 / g.sqrt()
        } else {
            1.0
        }
    });
    for i in 0..p {
        for j in 0..p {
            gram[(i, j)] *= s[i] * s[j];
        }
        gram[(i, i)] += lambda;
    }
    let y = solve_spd(gram, &b.component_mul(&s))?.component_mul(&s);
    Ok((cd.transpose() * &y, y))
}

/// Certified suboptimality of a feasible `u` for `min Σ‖u(i)‖ s.t. C u = b`.
/// Scales the multiplier `y` into the dual feasible set
/// `max_i ‖(Cᵀy)(i)‖ ≤ 1`; weak duality bounds `J(u) − J*` by `J(u) − bᵀŷ`.
fn duality_gap(
    c: &DMatrix<f64>,
    b: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    mode: WeightMode,
    block: usize,
) -> f64 {
    let cost: f64 = magnitudes(u, mode, block).iter().sum();
    let dual_norm = magnitudes(&(c.transpose() * y), mode, block)
        .into_iter()
        .fold(0.0, f64::max);
    if dual_norm == 0.0 {
        return cost;
    }
    (cost - b.dot(y) / dual_norm.max(1.0)).max(0.0)
}

fn solve_spd(gram: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, IrlsError> {
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
        let hi = diag.iter().cloned().fold(0.0, f64::max);
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let estimate = (hi / lo).powi(2);
        if estimate.is_finite() && estimate < 1e17 {
            let y = chol.solve(rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Ok(y);
            }
        }
    }
    if let Some(y) = gram.clone().lu().solve(rhs) {
        if y.iter().all(|v| v.is_finite()) {
            let check = (&gram * &y - rhs).norm();
            if check <= 1e-6 * rhs.norm().max(f64::MIN_POSITIVE) {
                return Ok(y);
            }
        }
    }
    let sv = gram.singular_values();
    let hi = sv.max();
    let lo = sv.min();
    Err(IrlsError::IllConditioned {
        condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

fn paper_printed_solve(
    c: &DMatrix<f64>,
    beta: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<DVector<f64>, IrlsError> {
    let winv = weights.map(|w| 1.0 / w);
    let a = scaled_columns(c, &winv);
    let mut gram = &a * a.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += 1.0;
    }
    let y = solve_spd(gram, beta)?;
    let v = a.transpose() * y;
    Ok(v.component_mul(&winv))
}

/// Magnitudes the sparsity rule ranks: entries, or block norms.
fn magnitudes(u: &DVector<f64>, mode: WeightMode, block: usize) -> Vec<f64> {
    match mode {
        WeightMode::Entrywise => u.iter().map(|v| v.abs()).collect(),
        WeightMode::Blockwise => u
            .as_slice()
            .chunks(block)
            .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
    }
}

fn update_weights(u: &DVector<f64>, eps: f64, mode: WeightMode, block: usize, w: &mut DVector<f64>) {
    let clamp = |x: f64| {
        if x.is_nan() {
            WEIGHT_CEIL
        } else {
            x.clamp(WEIGHT_FLOOR, WEIGHT_CEIL)
        }
    };
    match mode {
        WeightMode::Entrywise => {
            for (wi, ui) in w.iter_mut().zip(u.iter()) {
                *wi = clamp((ui * ui + eps * eps).powf(-0.25));
            }
        }
        WeightMode::Blockwise => {
            for (start, chunk) in u.as_slice().chunks(block).enumerate() {
                let n2: f64 = chunk.iter().map(|v| v * v).sum();
                let wb = clamp((n2 + eps * eps).powf(-0.25));
                for j in 0..chunk.len() {
                    w[start * block + j] = wb;
                }
            }
        }
    }
}

/// Iteratively reweighted least squares for
/// `min Σ‖u(i)‖ s.t. C u + β = z_f`.
///
/// Starts from unit weights and `ε = 1` (continuation: `ε = ‖u‖∞` of the
/// first iterate). Each pass solves the weighted
/// minimum-norm problem, shrinks `ε` according to the configured rule
/// (never increasing it), and resets the weights to `(u² + ε²)^{−1/4}`.
/// Stops on `ε ≤ ε̄`, on a stalled iterate, or after `j_max` passes; the last
/// iterate is returned in every case.
pub fn irls_solve(
    c: &DMatrix<f64>,
    beta: &DVector<f64>,
    z_f: &DVector<f64>,
    config: &IrlsConfig,
) -> Result<IrlsResult, IrlsError> {
    config.validate().map_err(IrlsError::Shape)?;
    let (p, n) = c.shape();
    if beta.len() != p || z_f.len() != p {
        return Err(IrlsError::Shape(format!(
            "C is {p}×{n} but β has {} rows and z_f {}",
            beta.len(),
            z_f.len()
        )));
    }
    if n < p {
        return Err(IrlsError::Shape(format!("system is overdetermined ({p}×{n})")));
    }
    if config.weight_mode == WeightMode::Blockwise && n % config.block_size != 0 {
        return Err(IrlsError::Shape(format!(
            "{n} columns do not split into blocks of {}",
            config.block_size
        )));
    }
    if c.iter().chain(beta.iter()).chain(z_f.iter()).any(|v| !v.is_finite()) {
        return Err(IrlsError::NonFinite);
    }

    let rhs = z_f - beta;
    let mut w = DVector::from_element(n, 1.0);
    let mut eps = 1.0_f64;
    // Continuation measures ε in units of the first iterate's ‖u‖∞.
    let mut scale: Option<f64> = None;
    let mut eps_history = Vec::new();
    let mut u = DVector::zeros(n);
    let mut prev: Option<DVector<f64>> = None;
    let mut stop = StopReason::MaxIterations;
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut gap: Option<f64> = None;
    let groups = match config.weight_mode {
        WeightMode::Entrywise => n,
        WeightMode::Blockwise => n / config.block_size,
    } as f64;

    for _ in 0..config.j_max {
        iterations += 1;
        u = match config.formula {
            SolveFormula::Kkt => {
                let d = inverse_square(&w)?;
                lambda = config.ridge_lambda;
                let (u, y) = solve_with_metric(c, &rhs, &d, lambda)?;
                gap = Some(duality_gap(c, &rhs, &u, &y, config.weight_mode, config.block_size));
                u
            }
            SolveFormula::PaperPrinted => {
                lambda = 1.0;
                paper_printed_solve(c, beta, &w)?
            }
        };

        let inf = u.amax();
        if config.epsilon_rule == EpsilonRule::Continuation && scale.is_none() {
            scale = Some(inf);
            eps = inf;
        }
        let floor = config.eps_bar * scale.unwrap_or(1.0);
        let change = prev.as_ref().map(|prev| (&u - prev).norm() / u.norm().max(f64::MIN_POSITIVE));
        let settled = gap.is_some_and(|g| g <= config.continuation_tol * groups * eps);
        let next_eps = match config.epsilon_rule {
            EpsilonRule::InfNorm => eps.min(inf),
            EpsilonRule::Sparsity => {
                let mut mags = magnitudes(&u, config.weight_mode, config.block_size);
                mags.sort_by(|a, b| b.total_cmp(a));
                let r = mags.get(p).copied().unwrap_or(0.0);
                eps.min(inf).min(r / mags.len() as f64)
            }
            EpsilonRule::Continuation if settled && eps > floor => {
                (eps * config.continuation_factor).min(inf)
            }
            EpsilonRule::Continuation => eps.min(inf),
        };
        debug_assert!(next_eps <= eps);
        // Under continuation the iterate must also have settled at the final ε,
        // or already carry a gap certificate that tight.
        let done = match config.epsilon_rule {
            // A square system has a single feasible point.
            _ if n == p => true,
            EpsilonRule::Continuation => {
                let certified = gap.is_some_and(|g| g <= config.continuation_tol * groups * floor);
                next_eps == 0.0 || certified || (settled && eps <= floor)
            }
            _ => next_eps <= config.eps_bar,
        };
        eps = next_eps;
        eps_history.push(eps);
        update_weights(&u, eps, config.weight_mode, config.block_size, &mut w);

        if done {
            stop = StopReason::Epsilon;
            break;
        }
        if change.is_some_and(|c| c <= config.stall_tol) {
            stop = StopReason::Stalled;
            break;
        }
        prev = Some(u.clone());
    }

    let residual = (c * &u - &rhs).norm();
    let converged = stop != StopReason::MaxIterations;
    match stop {
        StopReason::Stalled => log::debug!("IRLS stalled at ε = {eps:e} after {iterations} iterations"),
        StopReason::MaxIterations => log::warn!("IRLS hit j_max = {} with ε = {eps:e}", config.j_max),
        StopReason::Epsilon => {}
    }
    Ok(IrlsResult {
        cost_l21: l21_norm(u.as_slice(), config.block_size),
        cost_l1: u.iter().map(|v| v.abs()).sum(),
        u,
        converged,
        stop_reason: stop,
        iterations,
        eps_final: eps,
        eps_history,
        constraint_residual: residual,
        lambda,
        duality_gap: gap,
    })
}
