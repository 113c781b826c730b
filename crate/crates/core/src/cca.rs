//! Covariance blocks, symmetric whitening and leading canonical pairs.
//!
//! Blocks are small (a few dozen columns at most), so everything is dense
//! and exact: symmetric eigendecomposition for `M^{-1/2}`, one SVD of the
//! whitened cross-covariance for the canonical pairs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{ExcirError, Result};

/// Smallest eigenvalue accepted after the ridge is added.
pub const MIN_EIGENVALUE: f64 = 1e-12;

/// Ridge added to both covariance diagonals before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `1e-6 * (tr(Sigma_x) + tr(Sigma_y)) / (k_b + p)`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlocks {
    pub sigma_x: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    /// Cross-covariance, `k_b x p`.
    pub cross: DMatrix<f64>,
    pub ridge: f64,
}

impl CovarianceBlocks {
    pub fn block_dim(&self) -> usize {
        self.sigma_x.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.sigma_y.nrows()
    }

    pub fn regularized_x(&self) -> DMatrix<f64> {
        add_ridge(&self.sigma_x, self.ridge)
    }

    pub fn regularized_y(&self) -> DMatrix<f64> {
        add_ridge(&self.sigma_y, self.ridge)
    }
}

fn add_ridge(m: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += ridge;
    }
    out
}

/// Column means of `m`.
pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Population cross-covariance `(A - 1a')'(B - 1b') / n`.
pub fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    let ma = column_means(a);
    let mb = column_means(b);
    let ca = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] - ma[c]);
    let cb = DMatrix::from_fn(b.nrows(), b.ncols(), |r, c| b[(r, c)] - mb[c]);
    (ca.transpose() * cb) / n
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Assembles `Sigma_x`, `Sigma_y` and the cross-covariance, and checks that
/// both ridged diagonals are positive definite.
pub fn covariance_blocks(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: Ridge) -> Result<CovarianceBlocks> {
    if x.nrows() != y.nrows() {
        return Err(ExcirError::mismatch("block/output rows", x.nrows(), y.nrows()));
    }
    if x.nrows() < 2 {
        return Err(ExcirError::invalid("covariance needs at least 2 rows"));
    }
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(ExcirError::Empty("covariance block has no columns".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ExcirError::NonFinite {
            row: 0,
            column: "covariance input".into(),
        });
    }
    let sigma_x = covariance(x, x);
    let sigma_y = covariance(y, y);
    let cross = covariance(x, y);
    let lambda = match ridge {
        Ridge::Auto => 1e-6 * (sigma_x.trace() + sigma_y.trace()) / (x.ncols() + y.ncols()) as f64,
        Ridge::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Ridge::Fixed(l) => return Err(ExcirError::invalid(format!("ridge must be >= 0, got {l}"))),
    };
    let cov = CovarianceBlocks {
        sigma_x,
        sigma_y,
        cross,
        ridge: lambda,
    };
    for (m, what) in [
        (cov.regularized_x(), "within-block covariance"),
        (cov.regularized_y(), "output covariance"),
    ] {
        let ev = smallest_eigenvalue(&m);
        if ev <= MIN_EIGENVALUE {
            return Err(ExcirError::Singular {
                eigenvalue: ev,
                context: what.into(),
            });
        }
    }
    Ok(cov)
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(ExcirError::mismatch("square matrix columns", m.nrows(), m.ncols()));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(ExcirError::invalid("matrix is not symmetric"));
    }
    Ok(())
}

fn spectral_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= MIN_EIGENVALUE {
        return Err(ExcirError::Singular {
            eigenvalue: min,
            context: "symmetric matrix power".into(),
        });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `M^{-1/2}` of a symmetric positive-definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_power(m, -0.5)
}

/// `M^{1/2}` of a symmetric positive-definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spectral_power(m, 0.5)
}

/// Leading input/output directions and their canonical correlation.
///
/// Normalised so that `w' (Sigma_x + ridge I) w = 1` and
/// `u' (Sigma_y + ridge I) u = 1`, with `Cov(Xw, Yu) >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalPair {
    pub w_star: Vec<f64>,
    pub u_star: Vec<f64>,
    pub rho: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregation::Sum => values.iter().sum(),
            Aggregation::Max => values.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// The top `r` canonical pairs, strongest first.
pub fn canonical_pairs(cov: &CovarianceBlocks, r: usize) -> Result<Vec<CanonicalPair>> {
    let rx = sym_inv_sqrt(&cov.regularized_x())?;
    let ry = sym_inv_sqrt(&cov.regularized_y())?;
    let m = &rx * &cov.cross * &ry;
    let svd = SVD::new(m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(ExcirError::Consistency("SVD did not return singular vectors".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut out = Vec::with_capacity(r.min(order.len()));
    for &idx in order.iter().take(r) {
        let sigma = svd.singular_values[idx];
        if sigma > 1.0 + 1e-8 {
            return Err(ExcirError::Consistency(format!(
                "canonical correlation {sigma} exceeds 1"
            )));
        }
        let mut w = &rx * u.column(idx);
        let mut uu = &ry * v_t.row(idx).transpose();
        // sigma = w' Gamma u >= 0 already; only the all-zero case needs a tie-break.
        if sigma <= 1e-15 {
            if let Some(first) = w.iter().find(|v| v.abs() > 0.0) {
                if *first < 0.0 {
                    w = -w;
                    uu = -uu;
                }
            }
        }
        out.push(CanonicalPair {
            w_star: w.iter().copied().collect(),
            u_star: uu.iter().copied().collect(),
            rho: sigma.clamp(0.0, 1.0),
            ridge: cov.ridge,
        });
    }
    Ok(out)
}

pub fn top_canonical_pair(cov: &CovarianceBlocks) -> Result<CanonicalPair> {
    canonical_pairs(cov, 1)?
        .into_iter()
        .next()
        .ok_or_else(|| ExcirError::Empty("no canonical pair".into()))
}

/// Closed-form leading direction for a scalar output:
/// `w ∝ (Sigma_x + ridge I)^{-1} gamma`, unit variance, `w' gamma >= 0`.
pub fn scalar_output_direction(cov: &CovarianceBlocks) -> Result<Vec<f64>> {
    if cov.output_dim() != 1 {
        return Err(ExcirError::mismatch("output dimension", 1, cov.output_dim()));
    }
    let sx = cov.regularized_x();
    let gamma = cov.cross.column(0).into_owned();
    let chol = sx.clone().cholesky().ok_or_else(|| ExcirError::Singular {
        eigenvalue: smallest_eigenvalue(&sx),
        context: "within-block covariance".into(),
    })?;
    let mut w = chol.solve(&gamma);
    if w.amax() == 0.0 {
        w = DVector::zeros(sx.nrows());
        w[0] = 1.0;
    }
    let var = (w.transpose() * &sx * &w)[(0, 0)];
    w /= var.sqrt();
    if w.dot(&gamma) < 0.0 {
        w = -w;
    }
    Ok(w.iter().copied().collect())
}

/// Sample-wise variate `M w` (no centring).
pub fn variate(m: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let w = DVector::from_column_slice(w);
    (m * w).iter().copied().collect()
}

/// Spectral condition number `s_max / s_min`.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
