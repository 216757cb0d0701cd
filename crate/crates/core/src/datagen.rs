//! Synthetic data generation for the rare/weak regression model: sparse
//! signed coefficient vectors, correlated Gaussian or uniform designs, and
//! Gaussian responses.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covmodel::LowerTriangularFactor;
use crate::error::{Result, UptError};
use crate::matrix::Matrix;

/// Signal strength given either as the exponent `r` (tau = sqrt(2 r log p))
/// or as an absolute magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Magnitude {
    StrengthExponent { r: f64 },
    Absolute { tau: f64 },
}

/// Sparse signed signal model: each coordinate is nonzero independently with
/// probability p^(-theta); nonzero magnitudes are tau plus an optional
/// Uniform[-u, u] perturbation, with an optional random sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub theta_exponent: f64,
    pub magnitude: Magnitude,
    /// Half-width of the additive uniform perturbation.
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default = "default_true")]
    pub signed: bool,
}

fn default_true() -> bool {
    true
}

impl SignalSpec {
    pub fn point_mass(theta_exponent: f64, tau: f64) -> Self {
        SignalSpec {
            theta_exponent,
            magnitude: Magnitude::Absolute { tau },
            perturbation: 0.0,
            signed: true,
        }
    }

    pub fn pi1(&self, p: usize) -> f64 {
        (p as f64).powf(-self.theta_exponent)
    }

    pub fn tau(&self, p: usize) -> f64 {
        match self.magnitude {
            Magnitude::Absolute { tau } => tau,
            Magnitude::StrengthExponent { r } => (2.0 * r * (p as f64).ln()).sqrt(),
        }
    }

    pub fn r_exponent(&self, p: usize) -> f64 {
        match self.magnitude {
            Magnitude::StrengthExponent { r } => r,
            Magnitude::Absolute { tau } => tau * tau / (2.0 * (p as f64).ln()),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.theta_exponent > 0.0) {
            return Err(UptError::InvalidParameter(
                "theta_exponent must be positive".into(),
            ));
        }
        let pi1 = self.pi1(p);
        if !(0.0..1.0).contains(&pi1) && p > 1 {
            return Err(UptError::InvalidParameter(format!(
                "pi1 = {pi1} out of (0, 1)"
            )));
        }
        if self.perturbation < 0.0 {
            return Err(UptError::InvalidParameter(
                "perturbation half-width must be nonnegative".into(),
            ));
        }
        if self.tau(p) < 0.0 {
            return Err(UptError::InvalidParameter("tau must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Seed provenance carried alongside generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master_seed: u64,
    pub replicate: u64,
}

/// A generated (or imported) dataset. Ground truth is present for synthetic
/// data and absent for imported real data.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub theta: Option<Vec<u8>>,
    pub seed: Option<SeedInfo>,
}

impl RegressionDataset {
    pub fn n(&self) -> usize {
        self.x.n_rows()
    }

    pub fn p(&self) -> usize {
        self.x.n_cols()
    }
}

/// Draw (beta, theta) from the mixture model.
pub fn draw_beta<R: Rng>(p: usize, spec: &SignalSpec, rng: &mut R) -> (Vec<f64>, Vec<u8>) {
    let pi1 = spec.pi1(p);
    let tau = spec.tau(p);
    let mut beta = vec![0.0; p];
    let mut theta = vec![0u8; p];
    for i in 0..p {
        if rng.gen::<f64>() < pi1 {
            let mut b = tau;
            if spec.perturbation > 0.0 {
                b += rng.gen_range(-spec.perturbation..=spec.perturbation);
            }
            if spec.signed && rng.gen::<bool>() {
                b = -b;
            }
            if b != 0.0 {
                beta[i] = b;
                theta[i] = 1;
            }
        }
    }
    (beta, theta)
}

/// Design with rows iid N(0, Omega / n): row = L z / sqrt(n), z ~ N(0, I).
pub fn draw_design_gaussian<R: Rng>(
    n: usize,
    p: usize,
    factor: &LowerTriangularFactor,
    rng: &mut R,
) -> Result<Matrix> {
    if factor.dim() != p {
        return Err(UptError::DimensionMismatch(format!(
            "factor dimension {} vs p = {p}",
            factor.dim()
        )));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut x = Matrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        factor.apply(&mut row);
        for j in 0..p {
            x.set(i, j, row[j] * scale);
        }
    }
    Ok(x)
}

/// Non-Gaussian design: entries of M iid Uniform(-sqrt 3, sqrt 3) (unit
/// variance), X = M L' / sqrt(n), so rows again have covariance Omega / n.
pub fn draw_design_uniform<R: Rng>(
    n: usize,
    p: usize,
    factor: &LowerTriangularFactor,
    rng: &mut R,
) -> Result<Matrix> {
    if factor.dim() != p {
        return Err(UptError::DimensionMismatch(format!(
            "factor dimension {} vs p = {p}",
            factor.dim()
        )));
    }
    let half = 3.0f64.sqrt();
    let scale = 1.0 / (n as f64).sqrt();
    let mut x = Matrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for v in row.iter_mut() {
            *v = rng.gen_range(-half..=half);
        }
        factor.apply(&mut row);
        for j in 0..p {
            x.set(i, j, row[j] * scale);
        }
    }
    Ok(x)
}

/// Optionally rescale every column to exact unit Euclidean norm.
pub fn normalize_columns(x: &mut Matrix) {
    for j in 0..x.n_cols() {
        let norm = x.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in x.col_mut(j) {
                *v /= norm;
            }
        }
    }
}

/// Y = X beta + eps with eps iid standard normal.
pub fn draw_response<R: Rng>(x: &Matrix, beta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut y = response_noiseless(x, beta)?;
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += e;
    }
    Ok(y)
}

/// Y = X beta exactly; the injectable-noise path for tests.
pub fn response_noiseless(x: &Matrix, beta: &[f64]) -> Result<Vec<f64>> {
    x.matvec(beta)
}

fn write_float(buf: &mut String, v: f64) {
    // Shortest round-trip representation keeps exports byte-stable.
    let _ = write!(buf, "{v}");
}

fn matrix_csv(x: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..x.n_rows() {
        for j in 0..x.n_cols() {
            if j > 0 {
                out.push(',');
            }
            write_float(&mut out, x.get(i, j));
        }
        out.push('\n');
    }
    out
}

fn vector_csv(v: &[f64]) -> String {
    let mut out = String::new();
    for &x in v {
        write_float(&mut out, x);
        out.push('\n');
    }
    out
}

/// Write X, Y and (when present) beta/theta plus a key=value metadata sidecar.
pub fn export_dataset(ds: &RegressionDataset, dir: &Path, stem: &str) -> Result<()> {
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| UptError::io(path.display().to_string(), e))
    };
    write(&format!("{stem}_x.csv"), matrix_csv(&ds.x))?;
    write(&format!("{stem}_y.csv"), vector_csv(&ds.y))?;
    if let Some(beta) = &ds.beta {
        write(&format!("{stem}_beta.csv"), vector_csv(beta))?;
    }
    if let Some(theta) = &ds.theta {
        let text: String = theta.iter().map(|t| format!("{t}\n")).collect();
        write(&format!("{stem}_theta.csv"), text)?;
    }
    let mut meta = String::new();
    meta.push_str(&format!("n={}\n", ds.n()));
    meta.push_str(&format!("p={}\n", ds.p()));
    if let Some(seed) = ds.seed {
        meta.push_str(&format!("master_seed={}\n", seed.master_seed));
        meta.push_str(&format!("replicate={}\n", seed.replicate));
    }
    write(&format!("{stem}_meta.txt"), meta)
}

pub fn parse_vector_csv(path: &str, text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| UptError::parse(path, lineno + 1, format!("invalid float {t:?}")))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(UptError::parse(path, 1, "empty vector"));
    }
    Ok(out)
}

pub fn parse_matrix_csv(path: &str, text: &str) -> Result<Matrix> {
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
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
}
