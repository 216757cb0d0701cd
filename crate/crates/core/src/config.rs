//! Experiment configuration: the schema behind config files and the named
//! presets used to reproduce the simulation tables.

use serde::{Deserialize, Serialize};

use crate::clean::{PenaltyConvention, SignMode};
use crate::covmodel::CovarianceSpec;
use crate::error::{Result, UptError};
use crate::tuning::{QRule, TuningRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bh,
    By,
    UptIdeal,
    UptEstimated,
    Oracle,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Bh => "BH",
            Method::By => "BY",
            Method::UptIdeal => "UPT*",
            Method::UptEstimated => "UPT",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    #[default]
    Gaussian,
    Uniform,
}

/// Either an explicit n or the exponent phi with n = round(p^phi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSize {
    N(usize),
    Phi(f64),
}

impl SampleSize {
    pub fn resolve(&self, p: usize) -> usize {
        match self {
            SampleSize::N(n) => *n,
            SampleSize::Phi(phi) => (p as f64).powf(*phi).round() as usize,
        }
    }
}

/// Signal shape shared across the tau grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalShape {
    pub theta_exponent: f64,
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default = "default_true")]
    pub signed: bool,
}

fn default_true() -> bool {
    true
}

/// Covariance section of a config file; resolved to a CovarianceSpec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Identity,
    BlockDiag { a: f64 },
    PentaDiag { a1: f64, a2: f64 },
    CustomCsv { path: String },
}

impl CovarianceConfig {
    pub fn resolve(&self, p: usize) -> Result<CovarianceSpec> {
        Ok(match self {
            CovarianceConfig::Identity => CovarianceSpec::Identity { p },
            CovarianceConfig::BlockDiag { a } => CovarianceSpec::BlockDiag { p, a: *a },
            CovarianceConfig::PentaDiag { a1, a2 } => CovarianceSpec::PentaDiag {
                p,
                a1: *a1,
                a2: *a2,
            },
            CovarianceConfig::CustomCsv { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UptError::io(path.clone(), e))?;
                let matrix = crate::covmodel::load_custom_csv(path, &text)?;
                if matrix.n_rows() != p {
                    return Err(UptError::Config(format!(
                        "custom covariance is {}x{} but p = {p}",
                        matrix.n_rows(),
                        matrix.n_cols()
                    )));
                }
                CovarianceSpec::Custom { matrix }
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            CovarianceConfig::Identity => "identity".into(),
            CovarianceConfig::BlockDiag { a } => format!("block(a={a})"),
            CovarianceConfig::PentaDiag { a1, a2 } => format!("penta({a1},{a2})"),
            CovarianceConfig::CustomCsv { path } => format!("custom({path})"),
        }
    }
}

/// Tuning and pipeline overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningOptions {
    /// Screening exponent; defaults to theta (ideal) / the estimated theta.
    pub q: Option<f64>,
    /// K constant for the closed-form t2 rule.
    pub k: Option<f64>,
    pub rule: TuningRule,
    pub sign_mode: SignMode,
    pub penalty: PenaltyConvention,
    /// z0 of the Gram noise floor; None = bare 1/ln^2(p).
    pub gram_noise_z0: Option<f64>,
    pub component_cap: usize,
    pub passes: usize,
    /// Clamp a negative closed-form t2 radicand to zero instead of erroring.
    pub clamp_t2: bool,
    /// Pilot screening exponent for the estimated two-pass q rule.
    pub q_pilot: f64,
    /// Use the literal plug-in tail estimates instead of the mixture fit.
    pub literal_estimates: bool,
}

impl Default for TuningOptions {
    fn default() -> Self {
        TuningOptions {
            q: None,
            k: None,
            rule: TuningRule::Calibrated,
            sign_mode: SignMode::Signed,
            penalty: PenaltyConvention::HalfTSquared,
            gram_noise_z0: Some(crate::clean::DEFAULT_GRAM_NOISE_Z0),
            component_cap: 12,
            passes: 1,
            clamp_t2: false,
            q_pilot: 0.25,
            literal_estimates: false,
        }
    }
}

impl TuningOptions {
    pub fn q_rule(&self) -> QRule {
        match self.q {
            Some(q) => QRule::Fixed(q),
            None => QRule::TwoPass { q0: self.q_pilot },
        }
    }

    pub fn pipeline(&self) -> crate::clean::PipelineOptions {
        crate::clean::PipelineOptions {
            sign_mode: self.sign_mode,
            penalty: self.penalty,
            gram_noise_z0: self.gram_noise_z0,
            component_cap: self.component_cap,
            passes: self.passes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub p: usize,
    pub sample_size: SampleSize,
    pub covariance: CovarianceConfig,
    pub signal: SignalShape,
    #[serde(default)]
    pub design: DesignKind,
    pub tau_grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub reps: usize,
    pub master_seed: u64,
    #[serde(default = "default_factor_grid")]
    pub t1_factor_grid: Vec<f64>,
    #[serde(default)]
    pub tuning: TuningOptions,
}

fn default_factor_grid() -> Vec<f64> {
    vec![1.0]
}

impl ExperimentConfig {
    pub fn n(&self) -> usize {
        self.sample_size.resolve(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(UptError::Config("reps must be at least 1".into()));
        }
        if self.tau_grid.is_empty() {
            return Err(UptError::Config("tau grid must be nonempty".into()));
        }
        if self.t1_factor_grid.is_empty() {
            return Err(UptError::Config("t1 factor grid must be nonempty".into()));
        }
        if self.methods.is_empty() {
            return Err(UptError::Config("at least one method required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(UptError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let SampleSize::Phi(phi) = self.sample_size {
            let lo = 1.0 - self.signal.theta_exponent;
            if !(phi > lo && phi < 1.0) {
                return Err(UptError::Config(format!(
                    "phi must lie in (1 - theta, 1) = ({lo}, 1), got {phi}"
                )));
            }
        }
        if self.methods.contains(&Method::Oracle) {
            if self.p > 12 {
                return Err(UptError::Config(
                    "oracle method requires p <= 12 (exact enumeration)".into(),
                ));
            }
            if self.signal.perturbation > 0.0 {
                return Err(UptError::Config(
                    "oracle method requires point-mass signals".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_toml(path: &str, text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| UptError::Config(format!("{path}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    /// Canonical fingerprint for the metadata sidecar.
    pub fn fingerprint(&self) -> String {
        crate::seeding::fingerprint(&format!("{self:?}"))
    }
}

pub const DEFAULT_MASTER_SEED: u64 = 171;

fn exp_base(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        p: 5000,
        sample_size: SampleSize::N(1000),
        covariance: CovarianceConfig::BlockDiag { a: 0.5 },
        signal: SignalShape {
            theta_exponent: 0.5,
            perturbation: 0.0,
            signed: true,
        },
        design: DesignKind::Gaussian,
        tau_grid: vec![2.0, 4.0, 6.0, 8.0],
        methods: vec![Method::Bh, Method::By, Method::UptIdeal, Method::UptEstimated],
        alpha: 0.05,
        reps: 100,
        master_seed: DEFAULT_MASTER_SEED,
        t1_factor_grid: vec![1.0],
        tuning: TuningOptions::default(),
    }
}

/// Block-diagonal design, point-mass signals.
pub fn exp1() -> ExperimentConfig {
    exp_base("EXP1")
}

/// Penta-diagonal design, perturbed signals.
pub fn exp2() -> ExperimentConfig {
    let mut c = exp_base("EXP2");
    c.covariance = CovarianceConfig::PentaDiag { a1: 0.5, a2: 0.1 };
    c.signal.perturbation = 0.5;
    c
}

/// Sensitivity of the screening threshold: factor grid around t1.
pub fn exp3() -> ExperimentConfig {
    let mut c = exp2();
    c.name = "EXP3".into();
    c.methods = vec![Method::UptIdeal];
    c.t1_factor_grid = vec![0.90, 0.95, 1.00, 1.05, 1.10];
    c
}

/// Uniform (non-Gaussian) design.
pub fn exp4() -> ExperimentConfig {
    let mut c = exp2();
    c.name = "EXP4".into();
    c.design = DesignKind::Uniform;
    c
}

/// Matched-mFDR comparison setting (same data process as EXP4).
pub fn exp5() -> ExperimentConfig {
    let mut c = exp4();
    c.name = "EXP5".into();
    c.methods = vec![Method::Bh, Method::UptIdeal, Method::UptEstimated];
    c
}

/// Desk-scale smoke preset.
pub fn smoke() -> ExperimentConfig {
    let mut c = exp_base("SMOKE");
    c.p = 1000;
    c.sample_size = SampleSize::N(300);
    c.reps = 20;
    c.tau_grid = vec![4.0, 6.0];
    c.methods = vec![Method::Bh, Method::By, Method::UptIdeal];
    c
}

/// BH-on-marginal-regression inflation study: block correlation sweep at
/// tau = sqrt(2 * 0.7 * log p).
pub fn table1(a: f64) -> ExperimentConfig {
    let p = 1000usize;
    let tau = (2.0 * 0.7 * (p as f64).ln()).sqrt();
    let mut c = exp_base(&format!("TABLE1(a={a})"));
    c.p = p;
    c.sample_size = SampleSize::N(200);
    c.covariance = if a == 0.0 {
        CovarianceConfig::Identity
    } else {
        CovarianceConfig::BlockDiag { a }
    };
    c.tau_grid = vec![tau];
    c.methods = vec![Method::Bh];
    c
}

pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    match name.to_ascii_uppercase().as_str() {
        "EXP1" => Ok(vec![exp1()]),
        "EXP2" => Ok(vec![exp2()]),
        "EXP3" => Ok(vec![exp3()]),
        "EXP4" => Ok(vec![exp4()]),
        "EXP5" => Ok(vec![exp5()]),
        "SMOKE" => Ok(vec![smoke()]),
        "TABLE1" => Ok([0.0, 0.3, 0.5, 0.7, 0.9].into_iter().map(table1).collect()),
        other => Err(UptError::Config(format!(
            "unknown preset {other}; expected EXP1..EXP5, SMOKE, or TABLE1"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["EXP1", "EXP2", "EXP3", "EXP4", "EXP5", "SMOKE", "TABLE1"] {
            for config in preset(name).unwrap() {
                config.validate().unwrap();
            }
        }
        assert!(preset("EXP9").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = exp2();
        let text = c.to_toml();
        let back = ExperimentConfig::from_toml("inline", &text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = exp1().to_toml();
        text.push_str("\nbogus_key = 3\n");
        let err = ExperimentConfig::from_toml("inline", &text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bogus_key"), "got: {msg}");
    }

    #[test]
    fn phi_resolution_and_range() {
        let mut c = exp1();
        c.sample_size = SampleSize::Phi(0.81);
        assert_eq!(c.n(), (5000f64.powf(0.81)).round() as usize);
        c.validate().unwrap();
        c.sample_size = SampleSize::Phi(0.4); // below 1 - theta = 0.5
        assert!(c.validate().is_err());
    }

    #[test]
    fn table1_tau_matches_strength_exponent() {
        let c = table1(0.5);
        let tau = c.tau_grid[0];
        let r = tau * tau / (2.0 * (c.p as f64).ln());
        assert!((r - 0.7).abs() < 1e-12);
    }

    #[test]
    fn oracle_method_guards() {
        let mut c = exp1();
        c.methods = vec![Method::Oracle];
        assert!(c.validate().is_err()); // p too large
        c.p = 8;
        c.sample_size = SampleSize::N(8);
        c.covariance = CovarianceConfig::Identity;
        c.validate().unwrap();
    }
}
