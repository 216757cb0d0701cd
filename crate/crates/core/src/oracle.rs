//! Exact posterior computations for tiny p: the local fdr vector
//! P(theta_i = 0 | Y) by enumeration over all coefficient configurations,
//! the threshold decision rule it induces, the weighted loss, and a Monte
//! Carlo check of the closed-form risk identity.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::clean::{DecisionVector, Provenance};
use crate::error::{Result, UptError};
use crate::matrix::Matrix;

/// Discrete two-group prior: beta_i = 0 with probability 1 - pi1, otherwise
/// an atom drawn from `atoms` (values with weights summing to one).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior {
    pub pi1: f64,
    pub atoms: Vec<(f64, f64)>,
}

impl DiscretePrior {
    pub fn symmetric(pi1: f64, tau: f64) -> Self {
        DiscretePrior {
            pi1,
            atoms: vec![(tau, 0.5), (-tau, 0.5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return Err(UptError::InvalidParameter(format!(
                "pi1 must lie in (0, 1), got {}",
                self.pi1
            )));
        }
        if self.atoms.is_empty() {
            return Err(UptError::InvalidParameter("prior needs atoms".into()));
        }
        let wsum: f64 = self.atoms.iter().map(|a| a.1).sum();
        if (wsum - 1.0).abs() > 1e-10 {
            return Err(UptError::InvalidParameter(format!(
                "atom weights sum to {wsum}, expected 1"
            )));
        }
        if self.atoms.iter().any(|a| a.0 == 0.0) {
            return Err(UptError::InvalidParameter(
                "atoms must not sit at zero; the null carries that mass".into(),
            ));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() >= self.pi1 {
            return 0.0;
        }
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for &(v, w) in &self.atoms {
            acc += w;
            if u < acc {
                return v;
            }
        }
        self.atoms.last().unwrap().0
    }
}

const MAX_ENUM_P: usize = 12;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Exact local fdr by enumerating all (1 + #atoms)^p coefficient
/// configurations in the log domain: fdr_i = posterior mass of
/// configurations with beta_i = 0.
pub fn exact_local_fdr(x: &Matrix, y: &[f64], prior: &DiscretePrior) -> Result<Vec<f64>> {
    prior.validate()?;
    let p = x.n_cols();
    let n = x.n_rows();
    if y.len() != n {
        return Err(UptError::DimensionMismatch(format!(
            "exact_local_fdr: X has {n} rows, Y has {}",
            y.len()
        )));
    }
    if p > MAX_ENUM_P {
        return Err(UptError::InvalidParameter(format!(
            "exact enumeration capped at p = {MAX_ENUM_P}, got {p}"
        )));
    }
    let choices = 1 + prior.atoms.len();
    let log_pi0 = (1.0 - prior.pi1).ln();
    let log_atom: Vec<f64> = prior
        .atoms
        .iter()
        .map(|&(_, w)| (prior.pi1 * w).ln())
        .collect();

    let mut log_total = f64::NEG_INFINITY;
    let mut log_null = vec![f64::NEG_INFINITY; p];

    // Odometer over configurations; residual maintained incrementally.
    let mut digits = vec![0usize; p];
    let mut resid: Vec<f64> = y.to_vec();
    loop {
        // log prior weight + Gaussian log likelihood (constants dropped).
        let mut log_w = 0.0;
        for &d in &digits {
            log_w += if d == 0 { log_pi0 } else { log_atom[d - 1] };
        }
        let ss: f64 = resid.iter().map(|v| v * v).sum();
        let log_post = log_w - 0.5 * ss;
        log_total = log_add(log_total, log_post);
        for i in 0..p {
            if digits[i] == 0 {
                log_null[i] = log_add(log_null[i], log_post);
            }
        }

        // Advance the odometer, updating the residual by column deltas.
        let mut pos = 0;
        loop {
            if pos == p {
                let fdr = log_null
                    .iter()
                    .map(|&ln| (ln - log_total).exp().clamp(0.0, 1.0))
                    .collect();
                return Ok(fdr);
            }
            let old = digits[pos];
            let new = (old + 1) % choices;
            digits[pos] = new;
            let old_v = if old == 0 { 0.0 } else { prior.atoms[old - 1].0 };
            let new_v = if new == 0 { 0.0 } else { prior.atoms[new - 1].0 };
            let dv = new_v - old_v;
            for (ri, xi) in resid.iter_mut().zip(x.col(pos)) {
                *ri -= xi * dv;
            }
            if new != 0 {
                break;
            }
            pos += 1;
        }
    }
}

/// Threshold rule: reject iff fdr_i <= 1 / (1 + lambda).
pub fn oracle_decide(fdr: &[f64], lambda: f64) -> Result<DecisionVector> {
    if !(lambda > 0.0) {
        return Err(UptError::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let cutoff = 1.0 / (1.0 + lambda);
    let delta: Vec<u8> = fdr.iter().map(|f| (*f <= cutoff) as u8).collect();
    let provenance = delta
        .iter()
        .map(|d| {
            if *d != 0 {
                Provenance::Selected
            } else {
                Provenance::CleanedZero
            }
        })
        .collect();
    Ok(DecisionVector { delta, provenance })
}

/// L(theta, delta) = sum_i lambda (1 - theta_i) delta_i + theta_i (1 - delta_i).
pub fn weighted_loss(theta: &[u8], delta: &[u8], lambda: f64) -> Result<f64> {
    if theta.len() != delta.len() {
        return Err(UptError::DimensionMismatch(format!(
            "weighted_loss: {} vs {}",
            theta.len(),
            delta.len()
        )));
    }
    let mut loss = 0.0;
    for (&t, &d) in theta.iter().zip(delta) {
        if t == 0 && d != 0 {
            loss += lambda;
        } else if t != 0 && d == 0 {
            loss += 1.0;
        }
    }
    Ok(loss)
}

/// Monte Carlo estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub se: f64,
}

impl MonteCarloEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        MonteCarloEstimate {
            value: mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Monte Carlo evaluation of the closed-form risk expression
///   sum_i E{ 1[fdr_i(Y) <= 1/(1+lambda)] ((lambda + 1) fdr_i(Y) - 1) + pi1 },
/// with the inner fdr computed exactly per draw.
pub fn oracle_risk_formula<R: Rng>(
    x: &Matrix,
    prior: &DiscretePrior,
    lambda: f64,
    reps: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    prior.validate()?;
    let p = x.n_cols();
    let cutoff = 1.0 / (1.0 + lambda);
    let mut samples = Vec::with_capacity(reps);
    let mut beta = vec![0.0; p];
    for _ in 0..reps {
        for b in beta.iter_mut() {
            *b = prior.draw(rng);
        }
        let mut y = x.matvec(&beta)?;
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += e;
        }
        let fdr = exact_local_fdr(x, &y, prior)?;
        let mut draw = 0.0;
        for &f in &fdr {
            if f <= cutoff {
                draw += (lambda + 1.0) * f - 1.0;
            }
            draw += prior.pi1;
        }
        samples.push(draw);
    }
    Ok(MonteCarloEstimate::from_samples(&samples))
}

/// Direct Monte Carlo of E L(theta, delta_opt): draw (beta, Y), apply the
/// oracle rule, score the realized loss. The independent side of the risk
/// identity check.
pub fn oracle_risk_direct<R: Rng>(
    x: &Matrix,
    prior: &DiscretePrior,
    lambda: f64,
    reps: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    prior.validate()?;
    let p = x.n_cols();
    let mut samples = Vec::with_capacity(reps);
    let mut beta = vec![0.0; p];
    for _ in 0..reps {
        for b in beta.iter_mut() {
            *b = prior.draw(rng);
        }
        let theta: Vec<u8> = beta.iter().map(|b| (*b != 0.0) as u8).collect();
        let mut y = x.matvec(&beta)?;
        for v in y.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += e;
        }
        let fdr = exact_local_fdr(x, &y, prior)?;
        let delta = oracle_decide(&fdr, lambda)?;
        samples.push(weighted_loss(&theta, &delta.delta, lambda)?);
    }
    Ok(MonteCarloEstimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{replicate_rng, Stream};
    use approx::assert_abs_diff_eq;

    fn phi(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn near_degenerate_prior_forces_fdr_one() {
        let x = Matrix::identity(2);
        let prior = DiscretePrior::symmetric(1e-12, 3.0);
        let fdr = exact_local_fdr(&x, &[0.1, -0.2], &prior).unwrap();
        for f in fdr {
            assert!(f > 1.0 - 1e-9);
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        // p = n = 1, X = (1): fdr(y) = pi0 phi(y) / (pi0 phi(y)
        //   + pi1 (phi(y - tau) + phi(y + tau)) / 2).
        let x = Matrix::identity(1);
        let tau = 2.5;
        let pi1 = 0.2;
        let prior = DiscretePrior::symmetric(pi1, tau);
        for y in [-3.0, -0.5, 0.0, 0.8, 2.5, 6.0] {
            let fdr = exact_local_fdr(&x, &[y], &prior).unwrap()[0];
            let f0 = (1.0 - pi1) * phi(y);
            let f1 = pi1 * 0.5 * (phi(y - tau) + phi(y + tau));
            let expected = f0 / (f0 + f1);
            assert_abs_diff_eq!(fdr, expected, epsilon = 1e-12);
        }
        // At y = 0 the closed form collapses to pi0 / (pi0 + pi1 e^{-tau^2/2}).
        let fdr0 = exact_local_fdr(&x, &[0.0], &prior).unwrap()[0];
        let expected0 = (1.0 - pi1) / ((1.0 - pi1) + pi1 * (-tau * tau / 2.0).exp());
        assert_abs_diff_eq!(fdr0, expected0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_design_factorizes() {
        // p = 3 orthogonal X: coordinate-wise fdr equals the univariate
        // formula applied per coordinate.
        let x = Matrix::identity(3);
        let prior = DiscretePrior::symmetric(0.3, 2.0);
        let y = [1.5, -0.3, 2.2];
        let joint = exact_local_fdr(&x, &y, &prior).unwrap();
        let x1 = Matrix::identity(1);
        for i in 0..3 {
            let single = exact_local_fdr(&x1, &y[i..=i], &prior).unwrap()[0];
            assert_abs_diff_eq!(joint[i], single, epsilon = 1e-10);
        }
    }

    #[test]
    fn fdr_values_lie_in_unit_interval() {
        let x = Matrix::from_rows(&[&[1.0, 0.4], &[0.0, 0.9]]).unwrap();
        let prior = DiscretePrior::symmetric(0.25, 1.5);
        let fdr = exact_local_fdr(&x, &[2.0, -1.0], &prior).unwrap();
        for f in fdr {
            assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn decide_thresholds() {
        let fdr = vec![0.2, 0.5, 0.9, 0.0];
        let d1 = oracle_decide(&fdr, 1.0).unwrap(); // cutoff 1/2
        assert_eq!(d1.delta, vec![1, 1, 0, 1]);
        let d_inf = oracle_decide(&fdr, 1e12).unwrap(); // only fdr ~ 0
        assert_eq!(d_inf.delta, vec![0, 0, 0, 1]);
        // lambda = p^{-zeta} < 1 pushes the cutoff toward 1: more rejections.
        let d_small = oracle_decide(&fdr, 0.05).unwrap();
        let r1: u8 = d1.delta.iter().sum();
        let rs: u8 = d_small.delta.iter().sum();
        assert!(rs >= r1);
    }

    #[test]
    fn loss_definition() {
        assert_eq!(weighted_loss(&[1, 0, 1], &[1, 0, 1], 2.0).unwrap(), 0.0);
        // theta = (1, 0), delta = (0, 1), lambda = 2: 1 + 2 = 3.
        assert_eq!(weighted_loss(&[1, 0], &[0, 1], 2.0).unwrap(), 3.0);
        assert!(weighted_loss(&[1], &[1, 0], 1.0).is_err());
    }

    #[test]
    fn loss_matches_naive_loop() {
        use rand::Rng as _;
        let mut rng = replicate_rng(61, 0, Stream::Extra(8));
        let theta: Vec<u8> = (0..500).map(|_| rng.gen_range(0..=1)).collect();
        let delta: Vec<u8> = (0..500).map(|_| rng.gen_range(0..=1)).collect();
        let lambda = 0.7;
        let fast = weighted_loss(&theta, &delta, lambda).unwrap();
        let mut slow = 0.0;
        for i in 0..500 {
            slow += lambda * (1.0 - theta[i] as f64) * delta[i] as f64
                + theta[i] as f64 * (1.0 - delta[i] as f64);
        }
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
    }

    #[test]
    fn risk_identity_p1() {
        // The closed-form risk expression agrees with the direct loss
        // simulation of the oracle rule within 3 combined SEs.
        let x = Matrix::identity(1);
        let prior = DiscretePrior::symmetric(0.3, 2.0);
        let mut rng = replicate_rng(62, 0, Stream::Extra(9));
        let reps = 20_000;
        let formula = oracle_risk_formula(&x, &prior, 1.0, reps, &mut rng).unwrap();
        let direct = oracle_risk_direct(&x, &prior, 1.0, reps, &mut rng).unwrap();
        let tol = 3.0 * (formula.se + direct.se);
        assert!(
            (formula.value - direct.value).abs() <= tol,
            "formula {} vs direct {} (tol {tol})",
            formula.value,
            direct.value
        );
    }

    #[test]
    fn risk_identity_p2_orthogonal() {
        let x = Matrix::identity(2);
        let prior = DiscretePrior::symmetric(0.25, 2.5);
        let mut rng = replicate_rng(63, 0, Stream::Extra(10));
        let reps = 10_000;
        let formula = oracle_risk_formula(&x, &prior, 1.0, reps, &mut rng).unwrap();
        let direct = oracle_risk_direct(&x, &prior, 1.0, reps, &mut rng).unwrap();
        let tol = 3.0 * (formula.se + direct.se);
        assert!(
            (formula.value - direct.value).abs() <= tol,
            "formula {} vs direct {}",
            formula.value,
            direct.value
        );
    }

    #[test]
    fn enumeration_cap_enforced() {
        let x = Matrix::identity(13);
        let prior = DiscretePrior::symmetric(0.2, 1.0);
        let y = vec![0.0; 13];
        assert!(exact_local_fdr(&x, &y, &prior).is_err());
    }

    #[test]
    fn prior_validation() {
        assert!(DiscretePrior::symmetric(0.0, 1.0).validate().is_err());
        let bad_atom = DiscretePrior {
            pi1: 0.3,
            atoms: vec![(0.0, 1.0)],
        };
        assert!(bad_atom.validate().is_err());
        let bad_weights = DiscretePrior {
            pi1: 0.3,
            atoms: vec![(1.0, 0.7)],
        };
        assert!(bad_weights.validate().is_err());
    }
}
