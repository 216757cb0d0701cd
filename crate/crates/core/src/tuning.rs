//! Threshold selection: the closed-form higher-order rule, a finite-sample
//! mFDR calibration, and data-driven estimation of the sparsity and strength
//! exponents from the marginal statistics.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::clean::PenaltyConvention;
use crate::error::{Result, UptError};

/// Upper tail of the standard normal, accurate deep into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Hazard phi(x) / Phi_bar(x); ~x for large x.
fn hazard(x: f64) -> f64 {
    let sf = normal_sf(x);
    if sf <= 1e-300 {
        x.max(0.0)
    } else {
        normal_pdf(x) / sf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningSource {
    Ideal,
    Estimated,
}

/// How t2 is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TuningRule {
    /// Closed-form higher-order threshold with constants (K, M).
    Eq14,
    /// Solve for the selection threshold whose predicted false/true discovery
    /// ratio meets the target mFDR level, using the empirical null scale of
    /// the marginal statistics. Default: robust at desk-scale p where the
    /// closed form's log-log correction overwhelms the leading term.
    #[default]
    Calibrated,
}

/// Complete tuning-parameter vector consumed by the decision pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub zeta: f64,
    pub q: f64,
    pub k: f64,
    /// The M constant of the closed-form rule; absent in calibrated mode.
    pub m_const: Option<f64>,
    pub alpha: f64,
    pub source: TuningSource,
    pub rule: TuningRule,
    pub theta_used: f64,
    pub r_used: f64,
    /// Empirical null scale of y_tilde used by the calibrated rule.
    pub noise_scale: Option<f64>,
    /// Implied singleton selection threshold on |y_tilde|.
    pub c_select: f64,
}

impl TuningParams {
    /// Minimal params for pipeline unit tests: direct thresholds.
    pub fn fixed_for_tests(t1: f64, t2: f64, t3: f64) -> Self {
        TuningParams {
            t1,
            t2,
            t3,
            zeta: 0.0,
            q: f64::NAN,
            k: 5.0,
            m_const: None,
            alpha: 0.05,
            source: TuningSource::Ideal,
            rule: TuningRule::Eq14,
            theta_used: f64::NAN,
            r_used: f64::NAN,
            noise_scale: None,
            c_select: PenaltyConvention::HalfTSquared.singleton_threshold(t2, t3),
        }
    }

    /// key=value audit block, one field per line.
    pub fn audit(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.12}"));
        format!(
            "source={:?}\nrule={:?}\nt1={:.12}\nt2={:.12}\nt3={:.12}\nzeta={:.12}\nq={:.12}\nK={}\nM={}\nalpha={}\ntheta_used={:.12}\nr_used={:.12}\nnoise_scale={}\nc_select={:.12}\n",
            self.source,
            self.rule,
            self.t1,
            self.t2,
            self.t3,
            self.zeta,
            self.q,
            self.k,
            fmt_opt(self.m_const),
            self.alpha,
            self.theta_used,
            self.r_used,
            fmt_opt(self.noise_scale),
            self.c_select,
        )
    }
}

/// zeta = (sqrt r - sqrt theta)^2, the rate-optimal type-I weight exponent.
pub fn zeta_exponent(theta: f64, r: f64) -> f64 {
    let d = r.sqrt() - theta.sqrt();
    d * d
}

fn validate_theta_r(theta: f64, r: f64) -> Result<()> {
    if !(theta > 0.0 && r > theta) {
        return Err(UptError::InvalidParameter(format!(
            "need 0 < theta < r, got theta = {theta}, r = {r}"
        )));
    }
    Ok(())
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(UptError::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// The closed-form t2 rule:
///   t2^2 = 2 (theta - zeta) log p
///          + 4r/(r + theta - zeta) * [(K - 1/2) log log p - log M],
///   M = alpha sqrt(pi) (r + theta - zeta) / ((2e)^K sqrt(r) (1 - alpha)).
pub fn eq14_t2(p: usize, theta: f64, r: f64, alpha: f64, k: f64, clamp: bool) -> Result<(f64, f64)> {
    validate_theta_r(theta, r)?;
    validate_alpha(alpha)?;
    let lp = (p as f64).ln();
    let zeta = zeta_exponent(theta, r);
    let rpz = r + theta - zeta;
    let m = alpha * std::f64::consts::PI.sqrt() * rpz
        / ((2.0 * std::f64::consts::E).powf(k) * r.sqrt() * (1.0 - alpha));
    let radicand =
        2.0 * (theta - zeta) * lp + 4.0 * r / rpz * ((k - 0.5) * lp.ln() - m.ln());
    if radicand < 0.0 {
        if clamp {
            return Ok((0.0, m));
        }
        return Err(UptError::NegativeRadicand { radicand });
    }
    Ok((radicand.sqrt(), m))
}

/// Ideal tuning from known (theta, r) via the closed-form rule.
/// `q` defaults to theta, the top of the admissible screening range.
pub fn ideal_params(
    p: usize,
    theta: f64,
    r: f64,
    alpha: f64,
    k: f64,
    q: Option<f64>,
    clamp_t2: bool,
) -> Result<TuningParams> {
    validate_theta_r(theta, r)?;
    validate_alpha(alpha)?;
    let lp = (p as f64).ln();
    let q = q.unwrap_or(theta);
    if q <= 0.0 {
        return Err(UptError::InvalidParameter("q must be positive".into()));
    }
    let (t2, m) = eq14_t2(p, theta, r, alpha, k, clamp_t2)?;
    let t3 = (2.0 * r * lp).sqrt();
    Ok(TuningParams {
        t1: (2.0 * q * lp).sqrt(),
        t2,
        t3,
        zeta: zeta_exponent(theta, r),
        q,
        k,
        m_const: Some(m),
        alpha,
        source: TuningSource::Ideal,
        rule: TuningRule::Eq14,
        theta_used: theta,
        r_used: r,
        noise_scale: None,
        c_select: PenaltyConvention::HalfTSquared.singleton_threshold(t2, t3),
    })
}

/// Solve for the singleton selection threshold c at which the predicted
/// false-discovery balance meets the mFDR target:
///   2 p pi0 PhiBar(c / s) = alpha/(1-alpha) * p^{1-theta} PhiBar((c - t3)/s).
/// The left side predicts false selections among nulls with empirical scale
/// s; the right side is the target fraction of predicted true selections.
pub fn selection_threshold_for_alpha(
    p: usize,
    theta: f64,
    t3: f64,
    alpha: f64,
    s_hat: f64,
) -> f64 {
    let pf = p as f64;
    let n_sig = pf.powf(1.0 - theta);
    let n_null = 2.0 * pf * (1.0 - pf.powf(-theta));
    let target = alpha / (1.0 - alpha) * n_sig / n_null;
    let ratio = |c: f64| {
        let den = normal_sf((c - t3) / s_hat).max(1e-300);
        normal_sf(c / s_hat) / den
    };
    let mut lo = 0.5 * t3;
    let mut hi = t3 + 10.0 * s_hat;
    if ratio(lo) <= target {
        return lo; // even the weakest admissible threshold over-controls
    }
    if ratio(hi) > target {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Tuning with t2 chosen by the mFDR calibration at the empirical null scale.
pub fn calibrated_params(
    p: usize,
    theta: f64,
    r: f64,
    alpha: f64,
    q: Option<f64>,
    s_hat: f64,
    convention: PenaltyConvention,
    source: TuningSource,
) -> Result<TuningParams> {
    validate_theta_r(theta, r)?;
    validate_alpha(alpha)?;
    if !(s_hat > 0.0) {
        return Err(UptError::InvalidParameter(format!(
            "noise scale must be positive, got {s_hat}"
        )));
    }
    let lp = (p as f64).ln();
    let q = q.unwrap_or(theta);
    let t3 = (2.0 * r * lp).sqrt();
    let c = selection_threshold_for_alpha(p, theta, t3, alpha, s_hat);
    let t2 = convention.t2_from_threshold(c, t3);
    Ok(TuningParams {
        t1: (2.0 * q * lp).sqrt(),
        t2,
        t3,
        zeta: zeta_exponent(theta, r),
        q,
        k: 5.0,
        m_const: None,
        alpha,
        source,
        rule: TuningRule::Calibrated,
        theta_used: theta,
        r_used: r,
        noise_scale: Some(s_hat),
        c_select: c,
    })
}

/// Exceedance counting side for the tail estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Count y_tilde_j > t, as printed.
    OneSided,
    /// Count |y_tilde_j| > t; the default under signed signals.
    #[default]
    TwoSided,
}

/// Survival fraction and exceedance mass at t1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimates {
    pub theta_hat: f64,
    pub r_hat: f64,
    pub f_bar: f64,
    pub mu_bar: f64,
}

/// Plug-in exponent estimates:
///   theta_hat = -log(F_bar(t1)) / log p,
///   r_hat = (mu_bar(t1) / F_bar(t1))^2 / (2 log p).
pub fn estimate_theta_r(
    y_tilde: &[f64],
    t1: f64,
    p: usize,
    sidedness: Sidedness,
) -> Result<TailEstimates> {
    if y_tilde.is_empty() {
        return Err(UptError::InvalidParameter("empty statistics".into()));
    }
    let pf = p as f64;
    let mut count = 0usize;
    let mut mass = 0.0f64;
    for &v in y_tilde {
        let x = match sidedness {
            Sidedness::OneSided => v,
            Sidedness::TwoSided => v.abs(),
        };
        if x > t1 {
            count += 1;
            mass += x;
        }
    }
    if count == 0 {
        return Err(UptError::NoExceedances { t1 });
    }
    let f_bar = count as f64 / pf;
    let mu_bar = mass / pf;
    let theta_hat = -f_bar.ln() / pf.ln();
    let mean_exceedance = mu_bar / f_bar;
    let r_hat = mean_exceedance * mean_exceedance / (2.0 * pf.ln());
    Ok(TailEstimates {
        theta_hat,
        r_hat,
        f_bar,
        mu_bar,
    })
}

/// Empirical null scale of y_tilde from the sub-threshold body: solves the
/// truncated-second-moment identity E[y^2 | |y| <= t1] = s^2 g(t1/s) with
/// g(a) = 1 - 2 a phi(a) / (2 Phi(a) - 1). Signals live above t1, so the
/// body is signal-free; falls back to the MAD when the body is too small.
pub fn null_scale(y_tilde: &[f64], t1: f64) -> f64 {
    let body: Vec<f64> = y_tilde.iter().copied().filter(|v| v.abs() <= t1).collect();
    if body.len() < 16 {
        return mad_scale(y_tilde);
    }
    let m2 = body.iter().map(|v| v * v).sum::<f64>() / body.len() as f64;
    let g = |a: f64| {
        let denom = 1.0 - 2.0 * normal_sf(a);
        if denom <= 1e-12 {
            1.0
        } else {
            1.0 - 2.0 * a * normal_pdf(a) / denom
        }
    };
    // h(s) = s^2 g(t1/s) is increasing in s.
    let mut lo = 1e-6;
    let mut hi = t1.max(m2.sqrt()) * 4.0 + 1e-6;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid * g(t1 / mid) < m2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn mad_scale(values: &[f64]) -> f64 {
    let median = |xs: &mut Vec<f64>| -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        }
    };
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    1.482_602_218_505_602 * median(&mut dev)
}

/// Exponent estimates refined by a two-component truncated mixture fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureEstimates {
    pub theta_hat: f64,
    pub r_hat: f64,
    pub tau_hat: f64,
    pub s_hat: f64,
    /// Posterior signal fraction among exceedances.
    pub weight: f64,
    pub n_exceed: usize,
}

/// EM fit of |y_tilde| exceedances above t1 as a mixture of a truncated
/// folded null N(0, s^2) and a truncated signal component N(tau, s^2), with
/// s fixed at the empirical null scale. The M-step inverts the truncation
/// bias of the weighted exceedance mean. Plug-in tail estimates are the
/// fallback when the fit degenerates.
pub fn estimate_mixture(y_tilde: &[f64], t1: f64, p: usize) -> Result<MixtureEstimates> {
    let exc: Vec<f64> = y_tilde
        .iter()
        .map(|v| v.abs())
        .filter(|v| *v > t1)
        .collect();
    if exc.is_empty() {
        return Err(UptError::NoExceedances { t1 });
    }
    let s = null_scale(y_tilde, t1);
    let pf = p as f64;
    let lp = pf.ln();

    let mut sorted = exc.clone();
    sorted.sort_by(f64::total_cmp);
    let q90 = sorted[((sorted.len() - 1) as f64 * 0.9).round() as usize];
    let mut tau = q90.max(t1 + s);
    let mut weight = 0.1f64;

    let null_norm = (2.0 * normal_sf(t1 / s)).max(1e-300);
    for _ in 0..80 {
        let sig_norm = (normal_sf((t1 - tau) / s) + normal_sf((t1 + tau) / s)).max(1e-300);
        let mut g_sum = 0.0;
        let mut gx_sum = 0.0;
        for &x in &exc {
            let f_null = 2.0 * normal_pdf(x / s) / s / null_norm;
            let f_sig =
                (normal_pdf((x - tau) / s) + normal_pdf((x + tau) / s)) / s / sig_norm;
            let num = weight * f_sig;
            let g = num / (num + (1.0 - weight) * f_null + 1e-300);
            g_sum += g;
            gx_sum += g * x;
        }
        weight = (g_sum / exc.len() as f64).clamp(1e-6, 1.0);
        if g_sum <= 1e-9 {
            break;
        }
        let m = gx_sum / g_sum;
        // Invert m = tau + s * hazard((t1 - tau)/s).
        let mut t = tau;
        for _ in 0..40 {
            let t_new = (m - s * hazard((t1 - t) / s)).max(0.05);
            if (t_new - t).abs() < 1e-10 {
                t = t_new;
                break;
            }
            t = t_new;
        }
        tau = t;
    }

    let n_sig = (weight * exc.len() as f64).clamp(0.5, pf - 1.0);
    if weight <= 2e-6 || tau <= t1 * 0.5 {
        // Degenerate fit: fall back to the plug-in tail estimates.
        let tail = estimate_theta_r(y_tilde, t1, p, Sidedness::TwoSided)?;
        return Ok(MixtureEstimates {
            theta_hat: tail.theta_hat,
            r_hat: tail.r_hat,
            tau_hat: (2.0 * tail.r_hat * lp).sqrt(),
            s_hat: s,
            weight,
            n_exceed: exc.len(),
        });
    }
    Ok(MixtureEstimates {
        theta_hat: -(n_sig / pf).ln() / lp,
        r_hat: tau * tau / (2.0 * lp),
        tau_hat: tau,
        s_hat: s,
        weight,
        n_exceed: exc.len(),
    })
}

/// How the screening exponent q is chosen in estimated mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    /// Fixed q.
    Fixed(f64),
    /// Pilot screen at q0, estimate theta, set q = theta_hat, re-estimate.
    TwoPass { q0: f64 },
}

impl Default for QRule {
    fn default() -> Self {
        QRule::TwoPass { q0: 0.25 }
    }
}

/// Data-driven tuning: estimate (theta, r) from y_tilde, then apply the
/// chosen t2 rule with the estimated exponents.
pub fn data_driven_params(
    y_tilde: &[f64],
    p: usize,
    alpha: f64,
    k: Option<f64>,
    q_rule: QRule,
    rule: TuningRule,
    convention: PenaltyConvention,
) -> Result<TuningParams> {
    validate_alpha(alpha)?;
    let lp = (p as f64).ln();
    let q = match q_rule {
        QRule::Fixed(q) => q,
        QRule::TwoPass { q0 } => {
            let t1_pilot = (2.0 * q0 * lp).sqrt();
            let pilot = estimate_mixture(y_tilde, t1_pilot, p)?;
            pilot.theta_hat.clamp(0.05, 1.0)
        }
    };
    let t1 = (2.0 * q * lp).sqrt();
    let est = estimate_mixture(y_tilde, t1, p)?;
    let theta = est.theta_hat.clamp(0.05, 1.5);
    let r = est.r_hat.max(theta * 1.0001 + 1e-6);
    match rule {
        TuningRule::Eq14 => {
            let kk = k.unwrap_or(5.0);
            let (t2, m) = eq14_t2(p, theta, r, alpha, kk, true)?;
            let t3 = (2.0 * r * lp).sqrt();
            Ok(TuningParams {
                t1,
                t2,
                t3,
                zeta: zeta_exponent(theta, r),
                q,
                k: kk,
                m_const: Some(m),
                alpha,
                source: TuningSource::Estimated,
                rule,
                theta_used: theta,
                r_used: r,
                noise_scale: Some(est.s_hat),
                c_select: PenaltyConvention::HalfTSquared.singleton_threshold(t2, t3),
            })
        }
        TuningRule::Calibrated => {
            let mut params = calibrated_params(
                p,
                theta,
                r,
                alpha,
                Some(q),
                est.s_hat,
                convention,
                TuningSource::Estimated,
            )?;
            params.k = k.unwrap_or(5.0);
            Ok(params)
        }
    }
}
