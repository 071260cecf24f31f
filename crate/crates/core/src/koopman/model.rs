use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bank::{Normalization, ObservableBank, CONTROL_DIM, STATE_DIM};
use super::data::TrainingMeta;
use super::KoopmanError;
use crate::dynamics::{ControlSequence, RelativeState};
use crate::sparse_solver::{irls_solve, IrlsConfig, IrlsResult};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Lifted LTI predictor `z(k+1) = A z(k) + B u(k)` with `z = g(x)`.
///
/// `A` and `B` act on normalized quantities: `u` is in units of the bank's
/// `a_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    bank: ObservableBank,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    fit_residual: f64,
    training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    n_lift: usize,
    m: usize,
    normalization: Normalization,
    r_ref: f64,
    rbf_seed: u64,
    rbf_centers: Vec<[f64; 6]>,
    #[serde(rename = "A_koop")]
    a_koop: Vec<Vec<f64>>,
    #[serde(rename = "B_koop")]
    b_koop: Vec<Vec<f64>>,
    fit_residual: f64,
    training_meta: TrainingMeta,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, KoopmanError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(KoopmanError::Schema(format!("{name} is not {nrows}×{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl KoopmanModel {
    pub fn new(
        bank: ObservableBank,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        fit_residual: f64,
        training_meta: TrainingMeta,
    ) -> Result<Self, KoopmanError> {
        let n = bank.n_lift();
        if a.shape() != (n, n) || b.shape() != (n, CONTROL_DIM) {
            return Err(KoopmanError::Schema(format!(
                "matrix shapes {:?} and {:?} do not match n_lift = {n}",
                a.shape(),
                b.shape()
            )));
        }
        if !(fit_residual >= 0.0) {
            return Err(KoopmanError::Schema(format!("fit residual {fit_residual} is negative")));
        }
        Ok(Self {
            bank,
            a,
            b,
            fit_residual,
            training_meta,
        })
    }

    pub fn bank(&self) -> &ObservableBank {
        &self.bank
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn training_meta(&self) -> &TrainingMeta {
        &self.training_meta
    }

    pub fn n_lift(&self) -> usize {
        self.bank.n_lift()
    }

    /// `C = [A^{N−1}B … AB B]` and `β = A^N z₀`, built with one running
    /// product.
    pub fn lifted_terminal_map(&self, z0: &DVector<f64>, horizon: usize) -> (DMatrix<f64>, DVector<f64>) {
        assert!(horizon >= 1, "horizon must be at least 1");
        let n = self.n_lift();
        let mut c = DMatrix::zeros(n, CONTROL_DIM * horizon);
        let mut p = self.b.clone();
        for k in (0..horizon).rev() {
            c.columns_mut(CONTROL_DIM * k, CONTROL_DIM).copy_from(&p);
            if k > 0 {
                p = &self.a * p;
            }
        }
        let mut beta = z0.clone();
        for _ in 0..horizon {
            beta = &self.a * beta;
        }
        (c, beta)
    }

    /// Lifted rollout from `z0` under normalized controls.
    pub fn rollout_lifted(&self, z0: &DVector<f64>, controls_n: &[[f64; 3]]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(controls_n.len() + 1);
        out.push(z0.clone());
        for u in controls_n {
            let z = &self.a * out.last().unwrap() + &self.b * DVector::from_column_slice(u);
            out.push(z);
        }
        out
    }

    /// Predicted physical states read back through the identity observables.
    pub fn predict(&self, x0: &RelativeState, controls: &ControlSequence) -> Result<Vec<RelativeState>, KoopmanError> {
        let norm = self.bank.normalization();
        let z0 = self.bank.lift(x0)?;
        let un: Vec<[f64; 3]> = controls.0.iter().map(|u| norm.normalize_control(u)).collect();
        Ok(self
            .rollout_lifted(&z0, &un)
            .iter()
            .map(|z| norm.denormalize(&z.as_slice()[..STATE_DIM]))
            .collect())
    }

    /// Minimum-fuel controls for a `horizon`-step manoeuvre from `x0` to
    /// `x_f`. Returned controls are in physical units.
    pub fn solve(
        &self,
        x0: &RelativeState,
        x_f: &RelativeState,
        horizon: usize,
        terminal: TerminalConstraint,
        config: &IrlsConfig,
    ) -> Result<KoopmanSolution, KoopmanError> {
        let z0 = self.bank.lift(x0)?;
        let zf = self.bank.lift(x_f)?;
        let (c, beta) = self.lifted_terminal_map(&z0, horizon);
        let irls = match terminal {
            TerminalConstraint::Lifted => irls_solve(&c, &beta, &zf, config)?,
            TerminalConstraint::State => irls_solve(
                &c.rows(0, STATE_DIM).into_owned(),
                &beta.rows(0, STATE_DIM).into_owned(),
                &zf.rows(0, STATE_DIM).into_owned(),
                config,
            )?,
        };
        let a_ref = self.bank.normalization().a_ref();
        let controls = ControlSequence::from_stacked(irls.u.as_slice()).scaled(a_ref);
        Ok(KoopmanSolution { controls, irls })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            n_lift: self.n_lift(),
            m: CONTROL_DIM,
            normalization: *self.bank.normalization(),
            r_ref: self.bank.r_ref(),
            rbf_seed: self.bank.rbf_seed(),
            rbf_centers: self.bank.rbf_centers().to_vec(),
            a_koop: rows_of(&self.a),
            b_koop: rows_of(&self.b),
            fit_residual: self.fit_residual,
            training_meta: self.training_meta,
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KoopmanError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(KoopmanError::UnsupportedVersion(v)),
            None => return Err(KoopmanError::Schema("missing schema_version".into())),
        }
        let f: ModelFile = serde_json::from_value(value)?;
        if f.m != CONTROL_DIM {
            return Err(KoopmanError::Schema(format!("m = {} but the plant has 3 inputs", f.m)));
        }
        let bank = ObservableBank::from_parts(f.n_lift, f.normalization, f.r_ref, f.rbf_seed, f.rbf_centers)?;
        let a = from_rows("A_koop", &f.a_koop, f.n_lift, f.n_lift)?;
        let b = from_rows("B_koop", &f.b_koop, f.n_lift, CONTROL_DIM)?;
        Self::new(bank, a, b, f.fit_residual, f.training_meta)
    }

    pub fn save(&self, path: &Path) -> Result<(), KoopmanError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KoopmanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Which part of the lifted terminal state the manoeuvre must hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalConstraint {
    /// All `N_k` observables: `z(N) = g(x_f)`.
    #[default]
    Lifted,
    /// The identity observables only: the projected state equals `x_f`.
    State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanSolution {
    pub controls: ControlSequence,
    pub irls: IrlsResult,
}
