//! Replication harness: runs experiment configurations over replicated
//! synthetic data, aggregates error rates per method, matches observed mFDR
//! between methods, analyzes imported datasets, and renders result tables.

use std::path::Path;

use rayon::prelude::*;

use crate::baselines;
use crate::clean::{self, DecisionVector, PipelineOptions, PreparedPass};
use crate::config::{DesignKind, ExperimentConfig, Method, TuningOptions};
use crate::covmodel::{self, LowerTriangularFactor};
use crate::datagen::{self, SignalSpec};
use crate::error::{Result, UptError};
use crate::gram_graph::{self, MarginalStats};
use crate::matrix::Matrix;
use crate::metrics::{aggregate, confusion, ConfusionCounts, MetricsSummary};
use crate::oracle;
use crate::seeding::{replicate_rng, Stream};
use crate::tuning::{self, TuningParams, TuningRule, TuningSource};

/// Stride separating tau positions inside the replicate stream space.
const TAU_STRIDE: u64 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: String,
    pub method: Method,
    pub tau: f64,
    pub t1_factor: f64,
    pub nominal_alpha: f64,
    pub summary: MetricsSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub name: String,
    pub fingerprint: String,
    pub master_seed: u64,
    pub p: usize,
    pub n: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub meta: RunMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerRepRow {
    pub method: Method,
    pub tau: f64,
    pub t1_factor: f64,
    pub rep: usize,
    pub counts: ConfusionCounts,
}

/// Per-replicate pipeline diagnostics (first UPT method, unit factor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagRow {
    pub tau: f64,
    pub rep: usize,
    pub survivors: usize,
    pub max_component: usize,
    pub screening_loss: f64,
    pub theta_hat: Option<f64>,
    pub r_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepError {
    pub rep: usize,
    pub tau: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultsTable,
    pub per_rep: Vec<PerRepRow>,
    pub diagnostics: Vec<DiagRow>,
    pub errors: Vec<RepError>,
    /// Audit block of the tuning used on the first successful replicate of
    /// each (tau, method) cell.
    pub tuning_audit: String,
}

struct CellKey {
    method: Method,
    tau_idx: usize,
    factor_idx: usize,
}

struct RepCell {
    key: CellKey,
    counts: ConfusionCounts,
}

struct RepData {
    cells: Vec<RepCell>,
    diags: Vec<DiagRow>,
    audits: Vec<String>,
}

fn signal_spec(config: &ExperimentConfig, tau: f64) -> SignalSpec {
    SignalSpec {
        theta_exponent: config.signal.theta_exponent,
        magnitude: datagen::Magnitude::Absolute { tau },
        perturbation: config.signal.perturbation,
        signed: config.signal.signed,
    }
}

fn generate_dataset(
    config: &ExperimentConfig,
    factor: &LowerTriangularFactor,
    rep: usize,
    tau_idx: usize,
    tau: f64,
) -> Result<(Matrix, Vec<f64>, Vec<f64>, Vec<u8>)> {
    let p = config.p;
    let n = config.n();
    let rep_key = rep as u64 * TAU_STRIDE + tau_idx as u64;
    let spec = signal_spec(config, tau);
    spec.validate(p)?;
    let mut rng_beta = replicate_rng(config.master_seed, rep_key, Stream::Beta);
    let (beta, theta) = datagen::draw_beta(p, &spec, &mut rng_beta);
    let mut rng_design = replicate_rng(config.master_seed, rep_key, Stream::Design);
    let x = match config.design {
        DesignKind::Gaussian => datagen::draw_design_gaussian(n, p, factor, &mut rng_design)?,
        DesignKind::Uniform => datagen::draw_design_uniform(n, p, factor, &mut rng_design)?,
    };
    let mut rng_noise = replicate_rng(config.master_seed, rep_key, Stream::Noise);
    let y = datagen::draw_response(&x, &beta, &mut rng_noise)?;
    Ok((x, y, beta, theta))
}

fn ideal_tuning(
    config: &ExperimentConfig,
    tau: f64,
    y_tilde: &[f64],
) -> Result<TuningParams> {
    let p = config.p;
    let lp = (p as f64).ln();
    let theta = config.signal.theta_exponent;
    let r = tau * tau / (2.0 * lp);
    let opts = &config.tuning;
    match opts.rule {
        TuningRule::Eq14 => tuning::ideal_params(
            p,
            theta,
            r,
            config.alpha,
            opts.k.unwrap_or(5.0),
            opts.q,
            opts.clamp_t2,
        ),
        TuningRule::Calibrated => {
            let q = opts.q.unwrap_or(theta);
            let t1 = (2.0 * q * lp).sqrt();
            let s_hat = tuning::null_scale(y_tilde, t1);
            tuning::calibrated_params(
                p,
                theta,
                r,
                config.alpha,
                Some(q),
                s_hat,
                opts.penalty,
                TuningSource::Ideal,
            )
        }
    }
}

fn estimated_tuning(config: &ExperimentConfig, y_tilde: &[f64]) -> Result<TuningParams> {
    let opts = &config.tuning;
    if opts.literal_estimates {
        let lp = (config.p as f64).ln();
        let q = opts.q.unwrap_or(0.5);
        let t1 = (2.0 * q * lp).sqrt();
        let tail =
            tuning::estimate_theta_r(y_tilde, t1, config.p, tuning::Sidedness::TwoSided)?;
        let r = tail.r_hat.max(1e-6);
        let theta = tail.theta_hat.clamp(0.05, 1.5);
        return match opts.rule {
            TuningRule::Eq14 => {
                let (t2, m) = tuning::eq14_t2(
                    config.p,
                    theta,
                    r,
                    config.alpha,
                    opts.k.unwrap_or(5.0),
                    true,
                )?;
                let t3 = (2.0 * r * lp).sqrt();
                Ok(TuningParams {
                    t1,
                    t2,
                    t3,
                    zeta: tuning::zeta_exponent(theta, r),
                    q,
                    k: opts.k.unwrap_or(5.0),
                    m_const: Some(m),
                    alpha: config.alpha,
                    source: TuningSource::Estimated,
                    rule: TuningRule::Eq14,
                    theta_used: theta,
                    r_used: r,
                    noise_scale: None,
                    c_select: crate::clean::PenaltyConvention::HalfTSquared
                        .singleton_threshold(t2, t3),
                })
            }
            TuningRule::Calibrated => {
                let s_hat = tuning::null_scale(y_tilde, t1);
                tuning::calibrated_params(
                    config.p,
                    theta,
                    r,
                    config.alpha,
                    Some(q),
                    s_hat,
                    opts.penalty,
                    TuningSource::Estimated,
                )
            }
        };
    }
    tuning::data_driven_params(
        y_tilde,
        config.p,
        config.alpha,
        opts.k,
        opts.q_rule(),
        opts.rule,
        opts.penalty,
    )
}

fn oracle_decisions(
    config: &ExperimentConfig,
    x: &Matrix,
    y: &[f64],
    tau: f64,
) -> Result<DecisionVector> {
    let pi1 = (config.p as f64).powf(-config.signal.theta_exponent);
    let prior = if config.signal.signed {
        oracle::DiscretePrior::symmetric(pi1, tau)
    } else {
        oracle::DiscretePrior {
            pi1,
            atoms: vec![(tau, 1.0)],
        }
    };
    // Reject when the posterior null probability is at most alpha:
    // cutoff 1/(1+lambda) = alpha <=> lambda = (1-alpha)/alpha.
    let lambda = (1.0 - config.alpha) / config.alpha;
    let fdr = oracle::exact_local_fdr(x, y, &prior)?;
    oracle::oracle_decide(&fdr, lambda)
}

fn run_upt_cell(
    x: &Matrix,
    y: &[f64],
    stats: &MarginalStats,
    params: &TuningParams,
    t1_factor: f64,
    pipeline: &PipelineOptions,
    gram_threshold: f64,
) -> Result<(DecisionVector, Option<PreparedPass>)> {
    let t1 = params.t1 * t1_factor;
    if pipeline.passes <= 1 {
        let prepared = clean::prepare_pass(x, stats, t1, gram_threshold);
        let (dv, _) = clean::decide_prepared(&prepared, params.t2, params.t3, pipeline)?;
        Ok((dv, Some(prepared)))
    } else {
        let mut adjusted = *params;
        adjusted.t1 = t1;
        let dv = clean::upt_decide(x, y, &adjusted, pipeline)?;
        Ok((dv, None))
    }
}

fn run_replicate(
    config: &ExperimentConfig,
    factor: &LowerTriangularFactor,
    rep: usize,
) -> Result<RepData> {
    let mut data = RepData {
        cells: Vec::new(),
        diags: Vec::new(),
        audits: Vec::new(),
    };
    let pipeline = config.tuning.pipeline();
    let gram_threshold = pipeline.gram_threshold(config.p, config.n());
    let needs_pvalues = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::Bh | Method::By));
    let needs_stats = config
        .methods
        .iter()
        .any(|m| matches!(m, Method::UptIdeal | Method::UptEstimated));

    for (tau_idx, &tau) in config.tau_grid.iter().enumerate() {
        let (x, y, _beta, theta) = generate_dataset(config, factor, rep, tau_idx, tau)?;
        let pvalues = if needs_pvalues {
            Some(baselines::marginal_pvalues(&x, &y)?)
        } else {
            None
        };
        let stats = if needs_stats {
            Some(gram_graph::marginal_stats(&x, &y))
        } else {
            None
        };

        let mut diag_recorded = false;
        for &method in &config.methods {
            match method {
                Method::Bh | Method::By => {
                    let pv = pvalues.as_ref().unwrap();
                    let dv = match method {
                        Method::Bh => baselines::bh(&pv.pvals, config.alpha)?,
                        _ => baselines::by(&pv.pvals, config.alpha)?,
                    };
                    data.cells.push(RepCell {
                        key: CellKey {
                            method,
                            tau_idx,
                            factor_idx: 0,
                        },
                        counts: confusion(&theta, &dv.delta)?,
                    });
                }
                Method::Oracle => {
                    let dv = oracle_decisions(config, &x, &y, tau)?;
                    data.cells.push(RepCell {
                        key: CellKey {
                            method,
                            tau_idx,
                            factor_idx: 0,
                        },
                        counts: confusion(&theta, &dv.delta)?,
                    });
                }
                Method::UptIdeal | Method::UptEstimated => {
                    let stats = stats.as_ref().unwrap();
                    let params = match method {
                        Method::UptIdeal => ideal_tuning(config, tau, &stats.y_tilde)?,
                        _ => estimated_tuning(config, &stats.y_tilde)?,
                    };
                    if rep == 0 {
                        data.audits.push(format!(
                            "# tau={tau} method={}\n{}",
                            method.label(),
                            params.audit()
                        ));
                    }
                    for (factor_idx, &f) in config.t1_factor_grid.iter().enumerate() {
                        let (dv, prepared) = run_upt_cell(
                            &x,
                            &y,
                            stats,
                            &params,
                            f,
                            &pipeline,
                            gram_threshold,
                        )?;
                        if !diag_recorded {
                            if let Some(prep) = &prepared {
                                if (f - 1.0).abs() < 1e-12 {
                                    data.diags.push(DiagRow {
                                        tau,
                                        rep,
                                        survivors: prep.graph.survivors.len(),
                                        max_component: prep.graph.max_component_size,
                                        screening_loss: clean::screening_loss(
                                            stats, params.t1, &theta,
                                        ),
                                        theta_hat: (method == Method::UptEstimated)
                                            .then_some(params.theta_used),
                                        r_hat: (method == Method::UptEstimated)
                                            .then_some(params.r_used),
                                    });
                                    diag_recorded = true;
                                }
                            }
                        }
                        data.cells.push(RepCell {
                            key: CellKey {
                                method,
                                tau_idx,
                                factor_idx,
                            },
                            counts: confusion(&theta, &dv.delta)?,
                        });
                    }
                }
            }
        }
    }
    Ok(data)
}

/// Run all replicates of a configuration and aggregate per
/// (method, tau, t1 factor). Replicates execute in parallel; results are
/// independent of thread count. Aborts when more than 5% of replicates fail.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let spec = config.covariance.resolve(config.p)?;
    let omega = covmodel::build_covariance(&spec)?;
    let factor = covmodel::factorize(&omega)?;

    let outcomes: Vec<(usize, Result<RepData>)> = (0..config.reps)
        .into_par_iter()
        .map(|rep| (rep, run_replicate(config, &factor, rep)))
        .collect();

    let mut errors = Vec::new();
    let mut per_rep = Vec::new();
    let mut diagnostics = Vec::new();
    let mut audits = Vec::new();
    let mut cells: std::collections::BTreeMap<(usize, usize, usize), Vec<ConfusionCounts>> =
        Default::default();
    let method_index = |m: Method| config.methods.iter().position(|x| *x == m).unwrap();

    for (rep, outcome) in outcomes {
        match outcome {
            Ok(data) => {
                for cell in &data.cells {
                    let key = (
                        method_index(cell.key.method),
                        cell.key.tau_idx,
                        cell.key.factor_idx,
                    );
                    cells.entry(key).or_default().push(cell.counts);
                    per_rep.push(PerRepRow {
                        method: cell.key.method,
                        tau: config.tau_grid[cell.key.tau_idx],
                        t1_factor: config.t1_factor_grid[cell.key.factor_idx],
                        rep,
                        counts: cell.counts,
                    });
                }
                diagnostics.extend(data.diags);
                if !data.audits.is_empty() {
                    audits.extend(data.audits);
                }
            }
            Err(e) => errors.push(RepError {
                rep,
                tau: f64::NAN,
                message: format!("{e}"),
            }),
        }
    }

    if errors.len() * 20 > config.reps {
        return Err(UptError::Config(format!(
            "{} of {} replicates failed (> 5%); first error: {}",
            errors.len(),
            config.reps,
            errors[0].message
        )));
    }

    let mut rows = Vec::new();
    for ((mi, ti, fi), counts) in &cells {
        rows.push(ResultRow {
            variant: config.covariance.label(),
            method: config.methods[*mi],
            tau: config.tau_grid[*ti],
            t1_factor: config.t1_factor_grid[*fi],
            nominal_alpha: config.alpha,
            summary: aggregate(counts)?,
        });
    }

    Ok(RunOutput {
        table: ResultsTable {
            rows,
            meta: RunMetadata {
                name: config.name.clone(),
                fingerprint: config.fingerprint(),
                master_seed: config.master_seed,
                p: config.p,
                n: config.n(),
                reps: config.reps,
            },
        },
        per_rep,
        diagnostics,
        errors,
        tuning_audit: audits.join("\n"),
    })
}

/// Cached per-replicate artifacts for re-deciding a method at a new alpha
/// without regenerating data.
enum CachedTarget {
    Upt {
        prepared: PreparedPass,
        base: TuningParams,
    },
    StepUp {
        pvals: Vec<f64>,
        harmonic: bool,
    },
}

struct CachedRep {
    theta: Vec<u8>,
    target: CachedTarget,
    reference_counts: ConfusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedAlpha {
    pub tau: f64,
    pub reference_mfdr: f64,
    pub matched_alpha: f64,
    pub achieved_mfdr: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub table: ResultsTable,
    pub matches: Vec<MatchedAlpha>,
}

fn retuned(base: &TuningParams, alpha: f64, p: usize, opts: &TuningOptions) -> TuningParams {
    let mut params = *base;
    params.alpha = alpha;
    match base.rule {
        TuningRule::Calibrated => {
            let s = base.noise_scale.unwrap_or(1.0);
            let c = tuning::selection_threshold_for_alpha(
                p,
                base.theta_used,
                base.t3,
                alpha,
                s,
            );
            params.c_select = c;
            params.t2 = opts.penalty.t2_from_threshold(c, base.t3);
        }
        TuningRule::Eq14 => {
            if let Ok((t2, m)) =
                tuning::eq14_t2(p, base.theta_used, base.r_used, alpha, base.k, true)
            {
                params.t2 = t2;
                params.m_const = Some(m);
                params.c_select = opts.penalty.singleton_threshold(t2, base.t3);
            }
        }
    }
    params
}

/// Adjust the target method's nominal mFDR level until its observed mFDR
/// matches the reference method's, per tau. Bisection over (0, 0.5] with at
/// most 25 iterations and tolerance 0.005; when the target cannot reach the
/// reference level the closest endpoint is reported with `converged: false`.
pub fn match_mfdr(
    config: &ExperimentConfig,
    reference: Method,
    target: Method,
) -> Result<MatchOutput> {
    config.validate()?;
    if config.tuning.passes > 1 {
        return Err(UptError::Config(
            "mFDR matching caches single-pass artifacts; set passes = 1".into(),
        ));
    }
    if !config.methods.contains(&reference) || !config.methods.contains(&target) {
        return Err(UptError::Config(
            "reference and target must be listed in methods".into(),
        ));
    }
    let spec = config.covariance.resolve(config.p)?;
    let omega = covmodel::build_covariance(&spec)?;
    let factor = covmodel::factorize(&omega)?;
    let pipeline = config.tuning.pipeline();
    let gram_threshold = pipeline.gram_threshold(config.p, config.n());

    let mut rows = Vec::new();
    let mut matches = Vec::new();

    for (tau_idx, &tau) in config.tau_grid.iter().enumerate() {
        let reps: Vec<Result<CachedRep>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| -> Result<CachedRep> {
                let (x, y, _beta, theta) =
                    generate_dataset(config, &factor, rep, tau_idx, tau)?;
                let reference_counts = {
                    let dv = match reference {
                        Method::Bh => {
                            let pv = baselines::marginal_pvalues(&x, &y)?;
                            baselines::bh(&pv.pvals, config.alpha)?
                        }
                        Method::By => {
                            let pv = baselines::marginal_pvalues(&x, &y)?;
                            baselines::by(&pv.pvals, config.alpha)?
                        }
                        Method::Oracle => oracle_decisions(config, &x, &y, tau)?,
                        Method::UptIdeal | Method::UptEstimated => {
                            let stats = gram_graph::marginal_stats(&x, &y);
                            let params = match reference {
                                Method::UptIdeal => ideal_tuning(config, tau, &stats.y_tilde)?,
                                _ => estimated_tuning(config, &stats.y_tilde)?,
                            };
                            let (dv, _) = run_upt_cell(
                                &x,
                                &y,
                                &stats,
                                &params,
                                1.0,
                                &pipeline,
                                gram_threshold,
                            )?;
                            dv
                        }
                    };
                    confusion(&theta, &dv.delta)?
                };
                let target_cache = match target {
                    Method::Bh | Method::By => {
                        let pv = baselines::marginal_pvalues(&x, &y)?;
                        CachedTarget::StepUp {
                            pvals: pv.pvals,
                            harmonic: target == Method::By,
                        }
                    }
                    Method::Oracle => {
                        return Err(UptError::Config(
                            "oracle is not supported as a matching target".into(),
                        ))
                    }
                    Method::UptIdeal | Method::UptEstimated => {
                        let stats = gram_graph::marginal_stats(&x, &y);
                        let params = match target {
                            Method::UptIdeal => ideal_tuning(config, tau, &stats.y_tilde)?,
                            _ => estimated_tuning(config, &stats.y_tilde)?,
                        };
                        let prepared =
                            clean::prepare_pass(&x, &stats, params.t1, gram_threshold);
                        CachedTarget::Upt {
                            prepared,
                            base: params,
                        }
                    }
                };
                Ok(CachedRep {
                    theta,
                    target: target_cache,
                    reference_counts,
                })
            })
            .collect();
        let reps: Vec<CachedRep> = reps.into_iter().collect::<Result<_>>()?;

        let ref_counts: Vec<ConfusionCounts> = reps.iter().map(|r| r.reference_counts).collect();
        let ref_summary = aggregate(&ref_counts)?;
        let target_summary_at = |alpha: f64| -> Result<MetricsSummary> {
            let counts: Vec<ConfusionCounts> = reps
                .iter()
                .map(|rep| -> Result<ConfusionCounts> {
                    let dv = match &rep.target {
                        CachedTarget::StepUp { pvals, harmonic } => {
                            if *harmonic {
                                baselines::by(pvals, alpha)?
                            } else {
                                baselines::bh(pvals, alpha)?
                            }
                        }
                        CachedTarget::Upt { prepared, base } => {
                            let params = retuned(base, alpha, config.p, &config.tuning);
                            let (dv, _) = clean::decide_prepared(
                                prepared,
                                params.t2,
                                params.t3,
                                &pipeline,
                            )?;
                            dv
                        }
                    };
                    confusion(&rep.theta, &dv.delta)
                })
                .collect::<Result<_>>()?;
            aggregate(&counts)
        };

        let target_mfdr = ref_summary.mfdr;
        let (mut lo, mut hi) = (1e-4f64, 0.5f64);
        let m_lo = target_summary_at(lo)?.mfdr;
        let m_hi = target_summary_at(hi)?.mfdr;
        let mut converged = false;
        let mut chosen = config.alpha;
        if m_hi <= target_mfdr {
            chosen = hi; // cannot reach the reference level from below
        } else if m_lo >= target_mfdr {
            chosen = lo;
        } else {
            for _ in 0..25 {
                let mid = 0.5 * (lo + hi);
                let m = target_summary_at(mid)?.mfdr;
                if (m - target_mfdr).abs() <= 0.005 {
                    chosen = mid;
                    converged = true;
                    break;
                }
                if m < target_mfdr {
                    lo = mid;
                } else {
                    hi = mid;
                }
                chosen = 0.5 * (lo + hi);
            }
        }
        let final_summary = target_summary_at(chosen)?;
        if (final_summary.mfdr - target_mfdr).abs() <= 0.005 {
            converged = true;
        }
        matches.push(MatchedAlpha {
            tau,
            reference_mfdr: target_mfdr,
            matched_alpha: chosen,
            achieved_mfdr: final_summary.mfdr,
            converged,
        });
        rows.push(ResultRow {
            variant: config.covariance.label(),
            method: reference,
            tau,
            t1_factor: 1.0,
            nominal_alpha: config.alpha,
            summary: ref_summary,
        });
        rows.push(ResultRow {
            variant: config.covariance.label(),
            method: target,
            tau,
            t1_factor: 1.0,
            nominal_alpha: chosen,
            summary: final_summary,
        });
    }

    Ok(MatchOutput {
        table: ResultsTable {
            rows,
            meta: RunMetadata {
                name: format!("{}-matched", config.name),
                fingerprint: config.fingerprint(),
                master_seed: config.master_seed,
                p: config.p,
                n: config.n(),
                reps: config.reps,
            },
        },
        matches,
    })
}

/// Decision report for an imported dataset.
#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub decisions: DecisionVector,
    pub y_tilde: Vec<f64>,
    pub params: TuningParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyzeMode {
    Ideal { theta: f64, r: f64 },
    Estimated,
}

pub fn analyze(
    x: &Matrix,
    y: &[f64],
    alpha: f64,
    mode: AnalyzeMode,
    opts: &TuningOptions,
) -> Result<AnalyzeReport> {
    if y.len() != x.n_rows() {
        return Err(UptError::DimensionMismatch(format!(
            "analyze: X has {} rows, Y has {}",
            x.n_rows(),
            y.len()
        )));
    }
    let p = x.n_cols();
    let lp = (p as f64).ln();
    let stats = gram_graph::marginal_stats(x, y);
    let params = match mode {
        AnalyzeMode::Ideal { theta, r } => match opts.rule {
            TuningRule::Eq14 => tuning::ideal_params(
                p,
                theta,
                r,
                alpha,
                opts.k.unwrap_or(5.0),
                opts.q,
                opts.clamp_t2,
            )?,
            TuningRule::Calibrated => {
                let q = opts.q.unwrap_or(theta);
                let t1 = (2.0 * q * lp).sqrt();
                let s_hat = tuning::null_scale(&stats.y_tilde, t1);
                tuning::calibrated_params(
                    p,
                    theta,
                    r,
                    alpha,
                    Some(q),
                    s_hat,
                    opts.penalty,
                    TuningSource::Ideal,
                )?
            }
        },
        AnalyzeMode::Estimated => tuning::data_driven_params(
            &stats.y_tilde,
            p,
            alpha,
            opts.k,
            opts.q_rule(),
            opts.rule,
            opts.penalty,
        )?,
    };
    let pipeline = opts.pipeline();
    let decisions = clean::upt_decide(x, y, &params, &pipeline)?;
    Ok(AnalyzeReport {
        decisions,
        y_tilde: stats.y_tilde,
        params,
    })
}

impl AnalyzeReport {
    /// Per-index decisions plus the tuning audit block.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("index,decision,provenance,y_tilde\n");
        for (i, ((d, prov), yt)) in self
            .decisions
            .delta
            .iter()
            .zip(&self.decisions.provenance)
            .zip(&self.y_tilde)
            .enumerate()
        {
            out.push_str(&format!("{},{},{:?},{:.6}\n", i + 1, d, prov, yt));
        }
        out.push_str("\n# tuning\n");
        out.push_str(&self.params.audit());
        out
    }
}

fn fmt_rate(v: f64) -> String {
    format!("{v:.2}")
}

/// Markdown rendering: methods (x factor, when a grid is present) as rows,
/// tau values as column groups of "ATP AFP mFDR".
pub fn render_markdown(table: &ResultsTable) -> String {
    let mut taus: Vec<f64> = table.rows.iter().map(|r| r.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut out = String::new();
    out.push_str(&format!("# {}\n\n", table.meta.name));
    out.push_str("| method |");
    for t in &taus {
        out.push_str(&format!(" tau={t} (ATP AFP mFDR) |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &taus {
        out.push_str("---|");
    }
    out.push('\n');

    let mut labels: Vec<(String, Method, f64, String)> = table
        .rows
        .iter()
        .map(|r| (r.variant.clone(), r.method, r.t1_factor, label_of(r, table)))
        .collect();
    labels.dedup();
    for (variant, method, factor, label) in labels {
        out.push_str(&format!("| {label} |"));
        for &t in &taus {
            let cell = table.rows.iter().find(|r| {
                r.method == method
                    && r.variant == variant
                    && (r.t1_factor - factor).abs() < 1e-12
                    && (r.tau - t).abs() < 1e-12
            });
            match cell {
                Some(r) => out.push_str(&format!(
                    " {} {} {} |",
                    fmt_rate(r.summary.atp),
                    fmt_rate(r.summary.afp),
                    fmt_rate(r.summary.mfdr)
                )),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn label_of(row: &ResultRow, table: &ResultsTable) -> String {
    let mut label = row.method.label().to_string();
    let multi_factor = table
        .rows
        .iter()
        .any(|r| (r.t1_factor - 1.0).abs() > 1e-12);
    if multi_factor {
        label.push_str(&format!(" @{:.2}", row.t1_factor));
    }
    let multi_variant = table.rows.iter().any(|r| r.variant != table.rows[0].variant);
    if multi_variant {
        label.push_str(&format!(" [{}]", row.variant));
    }
    label
}

const CSV_HEADER: &str = "variant,method,tau,t1_factor,nominal_alpha,reps,atp,afp,fdr,fnr,mfdr,mfnr,fwer,mean_hamming,atp_se,afp_se,fdr_se,mfdr_se";

/// CSV rendering with every summary field and the Monte Carlo SEs.
pub fn render_csv(table: &ResultsTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.variant.replace(',', ";"),
            r.method.label(),
            r.tau,
            r.t1_factor,
            r.nominal_alpha,
            s.rep_count,
            s.atp,
            s.afp,
            s.fdr,
            s.fnr,
            s.mfdr,
            s.mfnr,
            s.fwer,
            s.mean_hamming,
            s.atp_se,
            s.afp_se,
            s.fdr_se,
            s.mfdr_se
        ));
    }
    out
}

/// Parse a results CSV back into rows (used by the `table` subcommand and
/// the round-trip test).
pub fn parse_results_csv(path: &str, text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, other)) => {
            return Err(UptError::parse(
                path,
                1,
                format!("unexpected header {other:?}"),
            ))
        }
        None => return Err(UptError::parse(path, 1, "empty file")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 18 {
            return Err(UptError::parse(
                path,
                lineno + 1,
                format!("expected 18 fields, found {}", fields.len()),
            ));
        }
        let parse_f = |idx: usize| -> Result<f64> {
            fields[idx].parse().map_err(|_| {
                UptError::parse(path, lineno + 1, format!("invalid float {:?}", fields[idx]))
            })
        };
        let method = match fields[1] {
            "BH" => Method::Bh,
            "BY" => Method::By,
            "UPT*" => Method::UptIdeal,
            "UPT" => Method::UptEstimated,
            "oracle" => Method::Oracle,
            other => {
                return Err(UptError::parse(
                    path,
                    lineno + 1,
                    format!("unknown method {other:?}"),
                ))
            }
        };
        rows.push(ResultRow {
            variant: fields[0].to_string(),
            method,
            tau: parse_f(2)?,
            t1_factor: parse_f(3)?,
            nominal_alpha: parse_f(4)?,
            summary: MetricsSummary {
                rep_count: fields[5].parse().map_err(|_| {
                    UptError::parse(path, lineno + 1, "invalid rep count".to_string())
                })?,
                atp: parse_f(6)?,
                afp: parse_f(7)?,
                fdr: parse_f(8)?,
                fnr: parse_f(9)?,
                mfdr: parse_f(10)?,
                mfnr: parse_f(11)?,
                fwer: parse_f(12)?,
                mean_hamming: parse_f(13)?,
                atp_se: parse_f(14)?,
                afp_se: parse_f(15)?,
                fdr_se: parse_f(16)?,
                mfdr_se: parse_f(17)?,
            },
        });
    }
    Ok(rows)
}

/// Write results.csv, table.md, counts.csv, tuning_audit.txt, metadata.txt.
pub fn write_outputs(run: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| UptError::io(dir.display().to_string(), e))?;
    let write = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| UptError::io(path.display().to_string(), e))
    };
    write("results.csv", render_csv(&run.table))?;
    write("table.md", render_markdown(&run.table))?;
    let mut counts = String::from("method,tau,t1_factor,rep,tp,fp,fn,tn\n");
    for r in &run.per_rep {
        counts.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method.label(),
            r.tau,
            r.t1_factor,
            r.rep,
            r.counts.tp,
            r.counts.fp,
            r.counts.fn_,
            r.counts.tn
        ));
    }
    write("counts.csv", counts)?;
    write("tuning_audit.txt", run.tuning_audit.clone())?;
    let meta = &run.table.meta;
    let mut metadata = String::new();
    metadata.push_str(&format!("name={}\n", meta.name));
    metadata.push_str(&format!("config_fingerprint={}\n", meta.fingerprint));
    metadata.push_str(&format!("master_seed={}\n", meta.master_seed));
    metadata.push_str(&format!("p={}\n", meta.p));
    metadata.push_str(&format!("n={}\n", meta.n));
    metadata.push_str(&format!("reps={}\n", meta.reps));
    metadata.push_str(&format!("replicate_errors={}\n", run.errors.len()));
    write("metadata.txt", metadata)
}
