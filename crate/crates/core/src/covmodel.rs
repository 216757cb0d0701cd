//! Structured correlation matrices for the random-design model: construction,
//! membership checks for the matrix class used by the theory, and Cholesky
//! factorization (banded where the structure allows).

use serde::{Deserialize, Serialize};

use crate::error::{Result, UptError};
use crate::matrix::Matrix;

/// Correlation model for the design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// Identity: independent predictors.
    Identity { p: usize },
    /// Block diagonal with 2x2 blocks [[1, a], [a, 1]]. Requires even `p`.
    BlockDiag { p: usize, a: f64 },
    /// Penta-diagonal: 1 on the diagonal, `a1` at |i-j|=1, `a2` at |i-j|=2.
    PentaDiag { p: usize, a1: f64, a2: f64 },
    /// Arbitrary dense correlation matrix (must be symmetric PD with unit
    /// diagonal); loaded from CSV in the CLI path.
    #[serde(skip)]
    Custom { matrix: Matrix },
}

impl CovarianceSpec {
    pub fn penta_default(p: usize) -> Self {
        CovarianceSpec::PentaDiag {
            p,
            a1: 0.5,
            a2: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Identity { p } => *p,
            CovarianceSpec::BlockDiag { p, .. } => *p,
            CovarianceSpec::PentaDiag { p, .. } => *p,
            CovarianceSpec::Custom { matrix } => matrix.n_rows(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CovarianceSpec::Identity { .. } => "identity".into(),
            CovarianceSpec::BlockDiag { a, .. } => format!("block_diag(a={a})"),
            CovarianceSpec::PentaDiag { a1, a2, .. } => format!("penta_diag({a1},{a2})"),
            CovarianceSpec::Custom { .. } => "custom".into(),
        }
    }
}

/// Realized correlation matrix. Banded specs store only their bands.
#[derive(Debug, Clone)]
pub enum CovarianceMatrix {
    /// `bands[0]` is the diagonal, `bands[k][i]` = entry (i, i+k).
    Banded { p: usize, bands: Vec<Vec<f64>> },
    Dense(Matrix),
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        match self {
            CovarianceMatrix::Banded { p, .. } => *p,
            CovarianceMatrix::Dense(m) => m.n_rows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            CovarianceMatrix::Banded { p: _, bands } => {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                let k = hi - lo;
                if k < bands.len() {
                    bands[k][lo]
                } else {
                    0.0
                }
            }
            CovarianceMatrix::Dense(m) => m.get(i, j),
        }
    }

    /// Largest off-diagonal magnitude.
    pub fn delta0(&self) -> f64 {
        let p = self.dim();
        match self {
            CovarianceMatrix::Banded { bands, .. } => bands
                .iter()
                .skip(1)
                .flat_map(|b| b.iter())
                .fold(0.0f64, |m, v| m.max(v.abs())),
            CovarianceMatrix::Dense(_) => {
                let mut m = 0.0f64;
                for i in 0..p {
                    for j in i + 1..p {
                        m = m.max(self.entry(i, j).abs());
                    }
                }
                m
            }
        }
    }
}

/// Lower-triangular factor L with L L' = Omega.
#[derive(Debug, Clone)]
pub enum LowerTriangularFactor {
    /// `bands[0]` is the diagonal of L; `bands[k][i]` = L(i+k, i).
    Banded { p: usize, bands: Vec<Vec<f64>> },
    /// Row-major lower triangle.
    Dense { p: usize, l: Vec<f64> },
}

impl LowerTriangularFactor {
    pub fn dim(&self) -> usize {
        match self {
            LowerTriangularFactor::Banded { p, .. } => *p,
            LowerTriangularFactor::Dense { p, .. } => *p,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if j > i {
            return 0.0;
        }
        match self {
            LowerTriangularFactor::Banded { bands, .. } => {
                let k = i - j;
                if k < bands.len() {
                    bands[k][j]
                } else {
                    0.0
                }
            }
            LowerTriangularFactor::Dense { p, l } => l[i * *p + j],
        }
    }

    /// In-place y = L z.
    pub fn apply(&self, z: &mut [f64]) {
        let p = self.dim();
        debug_assert_eq!(z.len(), p);
        match self {
            LowerTriangularFactor::Banded { bands, .. } => {
                let w = bands.len() - 1;
                for i in (0..p).rev() {
                    let mut s = 0.0;
                    let kmax = w.min(i);
                    for k in 0..=kmax {
                        s += bands[k][i - k] * z[i - k];
                    }
                    z[i] = s;
                }
            }
            LowerTriangularFactor::Dense { p, l } => {
                for i in (0..*p).rev() {
                    let mut s = 0.0;
                    for j in 0..=i {
                        s += l[i * *p + j] * z[j];
                    }
                    z[i] = s;
                }
            }
        }
    }
}

/// Membership report for the row-power / weak-dependence matrix class.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixClassReport {
    pub gamma: f64,
    pub a_bound: f64,
    pub omega0: f64,
    pub max_row_power: f64,
    pub d_omega: f64,
    pub delta0: f64,
    pub in_class: bool,
    /// Signal-support slack constant; present when (theta, r) were supplied.
    pub eta: Option<f64>,
}

/// Reporting defaults; the pipeline never refuses to run on out-of-class
/// matrices, these only feed the audit report.
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_A_BOUND: f64 = 3.0;
pub const DEFAULT_OMEGA0: f64 = 0.45;

pub fn build_covariance(spec: &CovarianceSpec) -> Result<CovarianceMatrix> {
    match spec {
        CovarianceSpec::Identity { p } => {
            require(*p >= 1, "p must be at least 1")?;
            Ok(CovarianceMatrix::Banded {
                p: *p,
                bands: vec![vec![1.0; *p]],
            })
        }
        CovarianceSpec::BlockDiag { p, a } => {
            require(*p >= 1, "p must be at least 1")?;
            if *p % 2 != 0 {
                return Err(UptError::InvalidParameter(format!(
                    "block_diag requires even p, got {p}"
                )));
            }
            if a.abs() >= 1.0 {
                return Err(UptError::InvalidParameter(format!(
                    "block correlation must lie in (-1, 1), got {a}"
                )));
            }
            let mut band1 = vec![0.0; *p - 1];
            for i in (0..*p - 1).step_by(2) {
                band1[i] = *a;
            }
            Ok(CovarianceMatrix::Banded {
                p: *p,
                bands: vec![vec![1.0; *p], band1],
            })
        }
        CovarianceSpec::PentaDiag { p, a1, a2 } => {
            require(*p >= 1, "p must be at least 1")?;
            let bands = vec![
                vec![1.0; *p],
                vec![*a1; p.saturating_sub(1)],
                vec![*a2; p.saturating_sub(2)],
            ];
            let cov = CovarianceMatrix::Banded { p: *p, bands };
            // Positive definiteness is not automatic for arbitrary (a1, a2);
            // factorization is the check.
            banded_cholesky(&cov)?;
            Ok(cov)
        }
        CovarianceSpec::Custom { matrix } => {
            let p = matrix.n_rows();
            require(p >= 1, "p must be at least 1")?;
            if matrix.n_cols() != p {
                return Err(UptError::DimensionMismatch(format!(
                    "custom covariance must be square, got {p}x{}",
                    matrix.n_cols()
                )));
            }
            for i in 0..p {
                if (matrix.get(i, i) - 1.0).abs() > 1e-12 {
                    return Err(UptError::InvalidParameter(format!(
                        "custom covariance diagonal entry {i} is {}, expected 1",
                        matrix.get(i, i)
                    )));
                }
                for j in 0..i {
                    if (matrix.get(i, j) - matrix.get(j, i)).abs() > 1e-12 {
                        return Err(UptError::InvalidParameter(format!(
                            "custom covariance is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
            let cov = CovarianceMatrix::Dense(matrix.clone());
            dense_cholesky(&cov)?;
            Ok(cov)
        }
    }
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(UptError::InvalidParameter(msg.into()))
    }
}

/// Row-power and weak-dependence report. `theta_r` feeds the eta constant.
pub fn check_matrix_class(
    omega: &CovarianceMatrix,
    gamma: f64,
    a_bound: f64,
    omega0: f64,
    theta_r: Option<(f64, f64)>,
) -> MatrixClassReport {
    let p = omega.dim();
    let mut max_row_power = 0.0f64;
    let mut max_row_abs = 0.0f64; // ||U||_inf over the strict upper part
    let mut max_col_abs = 0.0f64; // ||U||_1
    let mut row_abs = vec![0.0f64; p];
    let mut col_abs = vec![0.0f64; p];
    let mut delta0 = 0.0f64;

    match omega {
        CovarianceMatrix::Banded { bands, .. } => {
            for i in 0..p {
                let mut s = 0.0;
                let w = bands.len() - 1;
                for k in 1..=w {
                    if i + k < p {
                        let v = bands[k][i].abs();
                        s += v.powf(gamma);
                        row_abs[i] += v;
                        col_abs[i + k] += v;
                        delta0 = delta0.max(v);
                    }
                    if i >= k {
                        s += bands[k][i - k].abs().powf(gamma);
                    }
                }
                s += 1.0; // unit diagonal
                max_row_power = max_row_power.max(s);
            }
        }
        CovarianceMatrix::Dense(_) => {
            for i in 0..p {
                let mut s = 0.0;
                for j in 0..p {
                    let v = omega.entry(i, j).abs();
                    s += v.powf(gamma);
                    if j > i {
                        row_abs[i] += v;
                        col_abs[j] += v;
                        delta0 = delta0.max(v);
                    }
                }
                max_row_power = max_row_power.max(s);
            }
        }
    }
    for i in 0..p {
        max_row_abs = max_row_abs.max(row_abs[i]);
        max_col_abs = max_col_abs.max(col_abs[i]);
    }
    let d_omega = max_row_abs.max(max_col_abs);
    let eta = theta_r.and_then(|(theta, r)| compute_eta(theta, r, omega0).ok());
    MatrixClassReport {
        gamma,
        a_bound,
        omega0,
        max_row_power,
        d_omega,
        delta0,
        in_class: max_row_power <= a_bound && d_omega <= omega0,
        eta,
    }
}

/// eta(theta, r, omega0) =
///   theta*r / ((theta+r) sqrt(1+2*omega0))
///     * min{ 2theta/r, 1 - theta/r, sqrt(2(1-omega0)) - 1 + theta/r }.
pub fn compute_eta(theta: f64, r: f64, omega0: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < r) {
        return Err(UptError::InvalidParameter(format!(
            "eta requires 0 < theta < r, got theta={theta}, r={r}"
        )));
    }
    if !(0.0..0.5).contains(&omega0) {
        return Err(UptError::InvalidParameter(format!(
            "eta requires omega0 in [0, 1/2), got {omega0}"
        )));
    }
    let ratio = theta / r;
    let prefactor = theta * r / ((theta + r) * (1.0 + 2.0 * omega0).sqrt());
    let m = (2.0 * ratio)
        .min(1.0 - ratio)
        .min((2.0 * (1.0 - omega0)).sqrt() - 1.0 + ratio);
    Ok(prefactor * m)
}

pub fn factorize(omega: &CovarianceMatrix) -> Result<LowerTriangularFactor> {
    match omega {
        CovarianceMatrix::Banded { .. } => banded_cholesky(omega),
        CovarianceMatrix::Dense(_) => dense_cholesky(omega),
    }
}

fn banded_cholesky(omega: &CovarianceMatrix) -> Result<LowerTriangularFactor> {
    let (p, bands) = match omega {
        CovarianceMatrix::Banded { p, bands } => (*p, bands),
        _ => unreachable!(),
    };
    let w = bands.len() - 1;
    let mut l: Vec<Vec<f64>> = (0..=w).map(|k| vec![0.0; p - k.min(p)]).collect();
    for j in 0..p {
        // L(j, j)
        let mut s = bands[0][j];
        for k in 1..=w.min(j) {
            s -= l[k][j - k] * l[k][j - k];
        }
        if s <= 0.0 {
            return Err(UptError::NotPositiveDefinite(format!(
                "pivot {j} is {s:.3e}"
            )));
        }
        let djj = s.sqrt();
        l[0][j] = djj;
        // L(i, j) for i in (j, j+w]
        for i in j + 1..p.min(j + w + 1) {
            let mut s = if i - j < bands.len() { bands[i - j][j] } else { 0.0 };
            // sum_k L(i,k) L(j,k) for k < j within band reach
            let kmin = i.saturating_sub(w);
            for k in kmin..j {
                s -= l[i - k][k] * l[j - k][k];
            }
            l[i - j][j] = s / djj;
        }
    }
    Ok(LowerTriangularFactor::Banded { p, bands: l })
}

fn dense_cholesky(omega: &CovarianceMatrix) -> Result<LowerTriangularFactor> {
    let p = omega.dim();
    let mut l = vec![0.0f64; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = omega.entry(i, j);
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(UptError::NotPositiveDefinite(format!(
                        "pivot {i} is {s:.3e}"
                    )));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(LowerTriangularFactor::Dense { p, l })
}

/// Parse a headerless p x p CSV of decimal floats.
pub fn load_custom_csv(path: &str, text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                UptError::parse(path, lineno + 1, format!("invalid float {field:?}"))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(UptError::parse(
                    path,
                    lineno + 1,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(UptError::parse(path, 1, "empty matrix"));
    }
    if rows.len() != rows[0].len() {
        return Err(UptError::parse(
            path,
            rows.len(),
            format!("matrix is {}x{}, expected square", rows.len(), rows[0].len()),
        ));
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
}
