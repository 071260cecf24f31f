//! Least-squares fit of the lifted linear predictor.
//!
//! The regression `Y_lift ≈ A X_lift + B U` is solved row-wise as
//! `min ‖M Θᵀ − Y‖` with design `M = [X_liftᵀ U]` (one row per snapshot).
//! `M` is never formed in full: rows are lifted in fixed-size chunks, each
//! chunk is reduced to its `R` factor, and the factors are merged in a fixed
//! order (tall-skinny QR). The result is independent of thread count.

use nalgebra::{DMatrix, DVector};

use super::bank::{ObservableBank, CONTROL_DIM};
use super::data::TrainingData;
use super::model::KoopmanModel;
use super::KoopmanError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Singular values of the design factor below `rcond · σ_max` are dropped.
    pub rcond: f64,
    /// Snapshot rows per leaf factorization.
    pub chunk_rows: usize,
    /// Leaves reduced together before folding into the running factor.
    pub group_leaves: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rcond: 1e-10,
            chunk_rows: 1024,
            group_leaves: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    /// Frobenius norm of `Y_lift − A X_lift − B U`.
    pub residual: f64,
    /// `residual / ‖Y_lift‖_F`.
    pub relative_residual: f64,
    /// Numerical rank of the design `[X_lift; U]`.
    pub rank: usize,
    pub columns: usize,
    pub max_singular_value: f64,
    pub min_singular_value: f64,
}

/// Fits `[A B] = Y_lift · pinv([X_lift; U])` with default options.
pub fn fit(data: &TrainingData, bank: ObservableBank) -> Result<(KoopmanModel, FitDiagnostics), KoopmanError> {
    fit_with(data, bank, &FitOptions::default())
}

pub fn fit_with(
    data: &TrainingData,
    bank: ObservableBank,
    opts: &FitOptions,
) -> Result<(KoopmanModel, FitDiagnostics), KoopmanError> {
    let nk = bank.n_lift();
    let q = nk + CONTROL_DIM;
    let d = data.len();
    if d < q {
        return Err(KoopmanError::Precondition(format!(
            "{d} snapshots cannot determine {q} regressors; need at least N_k + m"
        )));
    }
    if opts.chunk_rows == 0 || opts.group_leaves == 0 || !(opts.rcond >= 0.0) {
        return Err(KoopmanError::Config("invalid fit options".into()));
    }
    let width = q + nk;
    let chunks = d.div_ceil(opts.chunk_rows);
    let leaf = |c: usize| -> Result<DMatrix<f64>, KoopmanError> {
        let lo = c * opts.chunk_rows;
        let hi = (lo + opts.chunk_rows).min(d);
        let mut block = DMatrix::zeros(hi - lo, width);
        let mut buf = vec![0.0; nk];
        for (r, j) in (lo..hi).enumerate() {
            bank.lift_normalized_into(&data.x[j], &mut buf)?;
            for (i, v) in buf.iter().enumerate() {
                block[(r, i)] = *v;
            }
            for i in 0..CONTROL_DIM {
                block[(r, nk + i)] = data.u[j][i];
            }
            bank.lift_normalized_into(&data.y[j], &mut buf)?;
            for (i, v) in buf.iter().enumerate() {
                block[(r, q + i)] = *v;
            }
        }
        Ok(r_factor(block))
    };

    let mut acc: Option<DMatrix<f64>> = None;
    let mut start = 0;
    while start < chunks {
        let end = (start + opts.group_leaves).min(chunks);
        #[cfg(feature = "parallel")]
        let leaves: Vec<_> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(leaf).collect::<Result<_, _>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let leaves: Vec<_> = (start..end).map(leaf).collect::<Result<_, _>>()?;
        let group = tree_reduce(leaves);
        acc = Some(match acc {
            None => group,
            Some(prev) => merge(&prev, &group),
        });
        start = end;
    }
    let r = acc.expect("at least one chunk");
    solve_from_r(&r, nk, opts.rcond).and_then(|(a, b, diag)| {
        let model = KoopmanModel::new(bank, a, b, diag.residual, data.meta)?;
        Ok((model, diag))
    })
}

fn r_factor(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().r()
}

fn merge(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = top.ncols();
    let mut stacked = DMatrix::zeros(top.nrows() + bottom.nrows(), cols);
    stacked.rows_mut(0, top.nrows()).copy_from(top);
    stacked.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    r_factor(stacked)
}

/// Pairwise reduction in index order.
fn tree_reduce(mut level: Vec<DMatrix<f64>>) -> DMatrix<f64> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(&a, &b)),
                None => next.push(a),
            }
        }
        level = next;
    }
    level.pop().expect("non-empty level")
}

/// Given the `R` factor of `[M Y]`, returns `A`, `B` and diagnostics.
fn solve_from_r(
    r: &DMatrix<f64>,
    nk: usize,
    rcond: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, FitDiagnostics), KoopmanError> {
    let q = nk + CONTROL_DIM;
    let rows = r.nrows();
    if !r.iter().all(|v| v.is_finite()) {
        return Err(KoopmanError::NonFinite("design factor".into()));
    }
    let r11 = r.view((0, 0), (q, q)).into_owned();
    let r12 = r.view((0, q), (q, nk)).into_owned();
    let svd = r11.clone().svd(true, true);
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) {
        return Err(KoopmanError::Precondition("design matrix is zero".into()));
    }
    let cut = rcond * smax;
    let inv: DVector<f64> = svd.singular_values.map(|s| if s > cut { 1.0 / s } else { 0.0 });
    let rank = inv.iter().filter(|v| **v != 0.0).count();
    if rank < q {
        log::warn!("lifted design is rank deficient: rank {rank} of {q}");
    }
    // Θᵀ = V Σ⁺ Uᵀ R12
    let ut_r12 = u.transpose() * &r12;
    let scaled = DMatrix::from_fn(q, nk, |i, j| inv[i] * ut_r12[(i, j)]);
    let theta_t = vt.transpose() * scaled;
    let fitted = &r11 * &theta_t - &r12;
    let mut res2 = fitted.norm_squared();
    if rows > q {
        res2 += r.view((q, q), (rows - q, nk)).norm_squared();
    }
    let y_norm = r.view((0, q), (rows, nk)).norm();
    let theta = theta_t.transpose();
    let a = theta.columns(0, nk).into_owned();
    let b = theta.columns(nk, CONTROL_DIM).into_owned();
    let residual = res2.sqrt();
    Ok((
        a,
        b,
        FitDiagnostics {
            residual,
            relative_residual: if y_norm > 0.0 { residual / y_norm } else { 0.0 },
            rank,
            columns: q,
            max_singular_value: smax,
            min_singular_value: smin,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::bank::Normalization;
    use crate::koopman::rng::stream_rng;
    use rand::Rng;

    fn small_bank(n_lift: usize) -> ObservableBank {
        ObservableBank::new(n_lift, Normalization::identity(), 5.0, 3).unwrap()
    }

    fn random_data(n: usize, seed: u64) -> TrainingData {
        let mut rng = stream_rng(seed, 9);
        let mut x = Vec::new();
        let mut u = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            x.push(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            u.push(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            y.push(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        }
        TrainingData::from_columns(x, u, y).unwrap()
    }

    /// Dense normal-equation solution of the same regression.
    fn normal_equations(data: &TrainingData, bank: &ObservableBank) -> DMatrix<f64> {
        let nk = bank.n_lift();
        let q = nk + 3;
        let d = data.len();
        let mut m = DMatrix::zeros(d, q);
        let mut yl = DMatrix::zeros(d, nk);
        for j in 0..d {
            let gx = bank.lift_normalized(&data.x[j]).unwrap();
            let gy = bank.lift_normalized(&data.y[j]).unwrap();
            for i in 0..nk {
                m[(j, i)] = gx[i];
                yl[(j, i)] = gy[i];
            }
            for i in 0..3 {
                m[(j, nk + i)] = data.u[j][i];
            }
        }
        let mtm = m.transpose() * &m;
        let rhs = m.transpose() * yl;
        mtm.cholesky().unwrap().solve(&rhs).transpose()
    }

    #[test]
    fn matches_normal_equations_across_chunkings() {
        let bank = small_bank(24);
        let data = random_data(500, 1);
        let oracle = normal_equations(&data, &bank);
        for (chunk, group) in [(1000, 1), (37, 2), (64, 3)] {
            let opts = FitOptions {
                chunk_rows: chunk,
                group_leaves: group,
                ..FitOptions::default()
            };
            let (model, diag) = fit_with(&data, bank.clone(), &opts).unwrap();
            assert_eq!(diag.rank, 27);
            let a = model.a();
            let b = model.b();
            for i in 0..24 {
                for j in 0..24 {
                    assert!((a[(i, j)] - oracle[(i, j)]).abs() < 1e-8 * (1.0 + oracle[(i, j)].abs()));
                }
                for j in 0..3 {
                    assert!((b[(i, j)] - oracle[(i, 24 + j)]).abs() < 1e-8 * (1.0 + oracle[(i, 24 + j)].abs()));
                }
            }
        }
    }

    #[test]
    fn residual_matches_direct_evaluation() {
        let bank = small_bank(21);
        let data = random_data(200, 2);
        let opts = FitOptions {
            chunk_rows: 50,
            ..FitOptions::default()
        };
        let (model, diag) = fit_with(&data, bank.clone(), &opts).unwrap();
        let mut direct = 0.0;
        for j in 0..data.len() {
            let gx = bank.lift_normalized(&data.x[j]).unwrap();
            let gy = bank.lift_normalized(&data.y[j]).unwrap();
            let u = DVector::from_column_slice(&data.u[j]);
            direct += (gy - model.a() * gx - model.b() * u).norm_squared();
        }
        assert!((diag.residual - direct.sqrt()).abs() < 1e-9 * direct.sqrt());
    }

    #[test]
    fn too_few_snapshots() {
        let bank = small_bank(20);
        let data = random_data(22, 3);
        assert!(matches!(fit(&data, bank), Err(KoopmanError::Precondition(_))));
    }

    #[test]
    fn deterministic_refit() {
        let bank = small_bank(22);
        let data = random_data(300, 4);
        let (a, _) = fit(&data, bank.clone()).unwrap();
        let (b, _) = fit(&data, bank).unwrap();
        assert_eq!(a.a(), b.a());
        assert_eq!(a.b(), b.b());
    }
}
