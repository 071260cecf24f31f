use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Column count above which enumeration is refused.
pub const ORACLE_MAX_COLUMNS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle supports at most {ORACLE_MAX_COLUMNS} columns, got {0}")]
    TooLarge(usize),
    #[error("need more columns than rows (C is {rows}×{cols})")]
    Shape { rows: usize, cols: usize },
    #[error("no basic solution satisfies the constraints")]
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub u: DVector<f64>,
    pub l1: f64,
    /// Column subset of the optimal basic solution.
    pub support: Vec<usize>,
}

/// Exact minimum-`ℓ1` solution of `C u = b` by enumerating basic solutions.
///
/// A linear program attains its optimum at a vertex, and the vertices of
/// `{u : Cu = b}` written in split form are the basic solutions supported on
/// `p` columns. Singular column subsets are skipped.
pub fn l1_oracle(c: &DMatrix<f64>, b: &DVector<f64>) -> Result<OracleSolution, OracleError> {
    let (p, n) = c.shape();
    if n > ORACLE_MAX_COLUMNS {
        return Err(OracleError::TooLarge(n));
    }
    if p == 0 || p > n || b.len() != p {
        return Err(OracleError::Shape { rows: p, cols: n });
    }
    let tol = 1e-10 * (1.0 + b.norm());
    let mut best: Option<OracleSolution> = None;
    for subset in Combinations::new(n, p) {
        let sub = DMatrix::from_fn(p, p, |i, j| c[(i, subset[j])]);
        let Some(x) = sub.clone().lu().solve(b) else {
            continue;
        };
        if !x.iter().all(|v| v.is_finite()) || (&sub * &x - b).norm() > tol {
            continue;
        }
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        if best.as_ref().is_none_or(|s| l1 < s.l1) {
            let mut u = DVector::zeros(n);
            for (j, &col) in subset.iter().enumerate() {
                u[col] = x[j];
            }
            best = Some(OracleSolution {
                u,
                l1,
                support: subset.clone(),
            });
        }
    }
    best.ok_or(OracleError::Infeasible)
}

/// Lexicographic `k`-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}
