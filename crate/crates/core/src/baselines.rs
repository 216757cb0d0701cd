//! Marginal-regression t statistics and the BH / BY step-up procedures.

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::clean::{DecisionVector, Provenance};
use crate::error::{Result, UptError};
use crate::matrix::Matrix;

/// Two-sided p-values from per-predictor simple linear regression.
#[derive(Debug, Clone)]
pub struct PValueVector {
    pub pvals: Vec<f64>,
    pub tstats: Vec<f64>,
    pub dof: usize,
}

/// Upper tail of Student's t via the regularized incomplete beta function:
/// P(T > t) = I_x(nu/2, 1/2) / 2 with x = nu / (nu + t^2), for t >= 0.
/// Accurate deep into the tail, which is what step-up decisions consume.
pub fn student_t_sf(t_abs: f64, dof: f64) -> f64 {
    debug_assert!(t_abs >= 0.0);
    if !t_abs.is_finite() {
        return 0.0;
    }
    let x = dof / (dof + t_abs * t_abs);
    0.5 * beta_reg(dof / 2.0, 0.5, x)
}

/// Per predictor: OLS of Y on (1, X_col_i); t = slope / SE(slope); two-sided
/// p-value with n - 2 degrees of freedom. Zero-variance columns get p = 1.
pub fn marginal_pvalues(x: &Matrix, y: &[f64]) -> Result<PValueVector> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(UptError::DimensionMismatch(format!(
            "marginal_pvalues: X has {n} rows, Y has {}",
            y.len()
        )));
    }
    if n < 3 {
        return Err(UptError::InvalidParameter(
            "marginal regression needs n >= 3".into(),
        ));
    }
    let dof = n - 2;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let syy: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();

    let results: Vec<(f64, f64)> = (0..x.n_cols())
        .into_par_iter()
        .map(|j| {
            let col = x.col(j);
            let xbar = col.iter().sum::<f64>() / n as f64;
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for i in 0..n {
                let dx = col[i] - xbar;
                sxx += dx * dx;
                sxy += dx * (y[i] - ybar);
            }
            if sxx <= 0.0 {
                // Constant column carries no information.
                return (1.0, 0.0);
            }
            let slope = sxy / sxx;
            let rss = (syy - slope * sxy).max(0.0);
            let s2 = rss / dof as f64;
            if s2 == 0.0 {
                // Perfect fit: p-value underflows to zero.
                return (0.0, f64::INFINITY * slope.signum());
            }
            let se = (s2 / sxx).sqrt();
            let t = slope / se;
            let p = 2.0 * student_t_sf(t.abs(), dof as f64);
            (p.min(1.0), t)
        })
        .collect();

    Ok(PValueVector {
        pvals: results.iter().map(|r| r.0).collect(),
        tstats: results.iter().map(|r| r.1).collect(),
        dof,
    })
}

fn step_up(pvals: &[f64], level: f64) -> DecisionVector {
    let p = pvals.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut k_star = 0usize;
    for (rank0, &idx) in order.iter().enumerate() {
        let k = rank0 + 1;
        if pvals[idx] <= level * k as f64 / p as f64 {
            k_star = k;
        }
    }
    let mut delta = vec![0u8; p];
    let mut provenance = vec![Provenance::CleanedZero; p];
    for &idx in order.iter().take(k_star) {
        delta[idx] = 1;
        provenance[idx] = Provenance::Selected;
    }
    DecisionVector { delta, provenance }
}

/// Benjamini-Hochberg step-up at level alpha.
pub fn bh(pvals: &[f64], alpha: f64) -> Result<DecisionVector> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(UptError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(step_up(pvals, alpha))
}

/// Benjamini-Yekutieli: BH at level alpha / H_p, H_p = sum_{i<=p} 1/i.
pub fn by(pvals: &[f64], alpha: f64) -> Result<DecisionVector> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(UptError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let p = pvals.len();
    let h_p: f64 = (1..=p).map(|i| 1.0 / i as f64).sum();
    Ok(step_up(pvals, alpha / h_p))
}
