//! The cleaning step: per-component exhaustive L0-penalized quadratic
//! minimization over mu coordinates in {-t3, 0, t3}, and the end-to-end
//! screen -> decompose -> clean decision pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UptError};
use crate::gram_graph::{self, ComponentGraph, MarginalStats};
use crate::matrix::{dot, Matrix, SymMatrix};
use crate::tuning::TuningParams;

/// Candidate coordinate values during cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// mu_i in {-t3, 0, +t3}; matches signed simulated signals.
    #[default]
    Signed,
    /// mu_i in {0, +t3}; the literal one-sided theory variant.
    OneSided,
}

/// Scaling of the L0 penalty in the cleaning objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyConvention {
    /// pen = t2^2 / 2, so a unit-diagonal singleton selects iff
    /// y_tilde > (t2^2 + t3^2) / (2 t3).
    #[default]
    HalfTSquared,
    /// pen = t2^2.
    TSquared,
}

impl PenaltyConvention {
    pub fn penalty(&self, t2: f64) -> f64 {
        match self {
            PenaltyConvention::HalfTSquared => 0.5 * t2 * t2,
            PenaltyConvention::TSquared => t2 * t2,
        }
    }

    /// Singleton selection threshold on y_tilde implied by (t2, t3) for a
    /// unit-diagonal Gram.
    pub fn singleton_threshold(&self, t2: f64, t3: f64) -> f64 {
        (t3 * t3 + 2.0 * self.penalty(t2)) / (2.0 * t3)
    }

    /// Inverse map: the t2 whose singleton threshold equals `c`.
    pub fn t2_from_threshold(&self, c: f64, t3: f64) -> f64 {
        let pen = ((2.0 * c * t3 - t3 * t3) / 2.0).max(0.0);
        match self {
            PenaltyConvention::HalfTSquared => (2.0 * pen).sqrt(),
            PenaltyConvention::TSquared => pen.sqrt(),
        }
    }
}

/// Result of cleaning one component.
#[derive(Debug, Clone)]
pub struct CleanResult {
    pub mu: Vec<f64>,
    pub objective_value: f64,
    pub decisions: Vec<u8>,
}

/// Per-index outcome trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ScreenedOut,
    CleanedZero,
    Selected,
}

#[derive(Debug, Clone)]
pub struct DecisionVector {
    pub delta: Vec<u8>,
    pub provenance: Vec<Provenance>,
}

impl DecisionVector {
    pub fn all_null(p: usize) -> Self {
        DecisionVector {
            delta: vec![0; p],
            provenance: vec![Provenance::ScreenedOut; p],
        }
    }

    pub fn selected_count(&self) -> usize {
        self.delta.iter().filter(|d| **d != 0).count()
    }
}

/// Exhaustively minimize
///   f(mu) = 1/2 (y - G mu)' G^{-1} (y - G mu) + pen * ||mu||_0
/// over mu with coordinates in {0, +-t3}. Ties break toward fewer nonzeros,
/// then lexicographically smallest support, then positive signs.
///
/// The search uses the equivalent form f(mu) - f(0) = -mu'y + 1/2 mu'G mu
/// + pen*||mu||_0, which needs no inverse; the reported objective value is
/// the quadratic form above evaluated through a Cholesky solve.
pub fn clean_component(
    y_tilde: &[f64],
    gram: &SymMatrix,
    t2: f64,
    t3: f64,
    sign_mode: SignMode,
    convention: PenaltyConvention,
    cap: usize,
) -> Result<CleanResult> {
    let k = y_tilde.len();
    if gram.n() != k {
        return Err(UptError::DimensionMismatch(format!(
            "clean_component: {k} statistics vs {}x{} Gram",
            gram.n(),
            gram.n()
        )));
    }
    if k > cap {
        return Err(UptError::ComponentTooLarge { size: k, cap });
    }
    if t3 <= 0.0 {
        return Err(UptError::InvalidParameter("t3 must be positive".into()));
    }
    // PD check up front; the reported objective needs the solve anyway.
    if gram.cholesky().is_none() {
        return Err(UptError::SingularGram((0..k).collect()));
    }

    let pen = convention.penalty(t2);
    let signs: &[f64] = match sign_mode {
        SignMode::Signed => &[0.0, 1.0, -1.0],
        SignMode::OneSided => &[0.0, 1.0],
    };
    let base = signs.len() as u64;
    let n_candidates = base.pow(k as u32);

    let mut best_code = 0u64;
    let mut best_val = 0.0f64; // candidate 0 has g(mu) = 0
    let mut mu = vec![0.0f64; k];
    for code in 1..n_candidates {
        let mut c = code;
        let mut nonzeros = 0u32;
        for slot in mu.iter_mut() {
            let d = (c % base) as usize;
            c /= base;
            *slot = signs[d] * t3;
            if d != 0 {
                nonzeros += 1;
            }
        }
        // g(mu) = -mu'y + 1/2 mu'G mu + pen * ||mu||_0
        let lin = dot(&mu, y_tilde);
        let quad = gram.quad_form(&mu);
        let val = -lin + 0.5 * quad + pen * nonzeros as f64;
        if val < best_val - 1e-12 {
            best_val = val;
            best_code = code;
        } else if (val - best_val).abs() <= 1e-12 && better_tie(code, best_code, base, k) {
            best_code = code;
        }
    }

    // Materialize the winner and its reported objective.
    let mut c = best_code;
    let mut nonzeros = 0usize;
    for slot in mu.iter_mut() {
        let d = (c % base) as usize;
        c /= base;
        *slot = signs[d] * t3;
        if d != 0 {
            nonzeros += 1;
        }
    }
    let gmu = gram.matvec(&mu);
    let resid: Vec<f64> = y_tilde.iter().zip(&gmu).map(|(y, g)| y - g).collect();
    let solved = gram
        .solve(&resid)
        .ok_or_else(|| UptError::SingularGram((0..k).collect()))?;
    let objective_value = 0.5 * dot(&resid, &solved) + pen * nonzeros as f64;
    let decisions = mu.iter().map(|m| (*m != 0.0) as u8).collect();
    Ok(CleanResult {
        mu,
        objective_value,
        decisions,
    })
}

/// Tie order: fewer nonzeros, then lexicographically smaller support, then
/// positive before negative sign coordinate-wise.
fn better_tie(a: u64, b: u64, base: u64, k: usize) -> bool {
    let digits = |mut code: u64| {
        let mut v = Vec::with_capacity(k);
        for _ in 0..k {
            v.push((code % base) as u8);
            code /= base;
        }
        v
    };
    let da = digits(a);
    let db = digits(b);
    let nz = |d: &[u8]| d.iter().filter(|x| **x != 0).count();
    let (na, nb) = (nz(&da), nz(&db));
    if na != nb {
        return na < nb;
    }
    let support = |d: &[u8]| d.iter().map(|x| (*x != 0) as u8).collect::<Vec<_>>();
    let (sa, sb) = (support(&da), support(&db));
    if sa != sb {
        // Lexicographically smallest support means earliest indices win.
        return sa > sb;
    }
    da < db
}

/// Screening plus Gram decomposition artifacts for one pass; the cleaning
/// threshold can then be varied cheaply (used by the mFDR matching loop).
#[derive(Debug, Clone)]
pub struct PreparedPass {
    pub p: usize,
    pub graph: ComponentGraph,
    /// Dense Gram block and statistics per component (global indices).
    pub blocks: Vec<ComponentBlock>,
}

#[derive(Debug, Clone)]
pub struct ComponentBlock {
    pub indices: Vec<usize>,
    pub gram: SymMatrix,
    pub y_tilde: Vec<f64>,
}

/// Pipeline knobs that are not part of the tuning-parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub sign_mode: SignMode,
    pub penalty: PenaltyConvention,
    /// z0 in the Gram noise floor max(1/ln^2 p, z0/sqrt(n)); `None` uses the
    /// bare asymptotic threshold.
    pub gram_noise_z0: Option<f64>,
    pub component_cap: usize,
    /// Number of screen/clean passes; passes > 1 re-run the pipeline on the
    /// residual Y - X mu_hat with tuning held fixed.
    pub passes: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            sign_mode: SignMode::Signed,
            penalty: PenaltyConvention::HalfTSquared,
            gram_noise_z0: Some(DEFAULT_GRAM_NOISE_Z0),
            component_cap: 12,
            passes: 1,
        }
    }
}

/// Default scale constant for the finite-sample Gram noise floor.
pub const DEFAULT_GRAM_NOISE_Z0: f64 = 5.0;

impl PipelineOptions {
    pub fn gram_threshold(&self, p: usize, n: usize) -> f64 {
        match self.gram_noise_z0 {
            Some(z0) => gram_graph::noise_floor_threshold(p, n, z0),
            None => gram_graph::default_gram_threshold(p),
        }
    }
}

/// Build the per-component dense blocks for survivors of `t1`-screening.
pub fn prepare_pass(
    x: &Matrix,
    stats: &MarginalStats,
    t1: f64,
    gram_threshold: f64,
) -> PreparedPass {
    let survivors = gram_graph::screen(stats, t1);
    let graph = gram_graph::restricted_gram(x, &survivors, gram_threshold);
    let blocks = graph
        .components
        .iter()
        .map(|comp| {
            let indices: Vec<usize> = comp.iter().map(|&l| graph.survivors[l]).collect();
            let k = indices.len();
            let mut gram = SymMatrix::zeros(k);
            for a in 0..k {
                for b in a..k {
                    // Full Gram entries on the block, sub-threshold included;
                    // the threshold only shapes the graph.
                    gram.set(a, b, dot(x.col(indices[a]), x.col(indices[b])));
                }
            }
            let y_tilde = indices.iter().map(|&i| stats.y_tilde[i]).collect();
            ComponentBlock {
                indices,
                gram,
                y_tilde,
            }
        })
        .collect();
    PreparedPass {
        p: x.n_cols(),
        graph,
        blocks,
    }
}

/// Clean every component of a prepared pass at (t2, t3).
pub fn decide_prepared(
    prepared: &PreparedPass,
    t2: f64,
    t3: f64,
    opts: &PipelineOptions,
) -> Result<(DecisionVector, Vec<f64>)> {
    let mut dv = DecisionVector::all_null(prepared.p);
    let mut mu_hat = vec![0.0; prepared.p];
    for block in &prepared.blocks {
        let result = clean_component(
            &block.y_tilde,
            &block.gram,
            t2,
            t3,
            opts.sign_mode,
            opts.penalty,
            opts.component_cap,
        )
        .map_err(|e| match e {
            UptError::SingularGram(_) => UptError::SingularGram(block.indices.clone()),
            other => other,
        })?;
        for (slot, &idx) in block.indices.iter().enumerate() {
            mu_hat[idx] = result.mu[slot];
            if result.decisions[slot] != 0 {
                dv.delta[idx] = 1;
                dv.provenance[idx] = Provenance::Selected;
            } else {
                dv.provenance[idx] = Provenance::CleanedZero;
            }
        }
    }
    Ok((dv, mu_hat))
}

/// Fraction of true signals lost at the screening step (diagnostic; needs
/// ground truth).
pub fn screening_loss(stats: &MarginalStats, t1: f64, theta: &[u8]) -> f64 {
    let total = theta.iter().filter(|t| **t != 0).count();
    if total == 0 {
        return 0.0;
    }
    let lost = theta
        .iter()
        .zip(&stats.y_tilde)
        .filter(|(t, y)| **t != 0 && y.abs() <= t1)
        .count();
    lost as f64 / total as f64
}

/// Full pipeline: screen, decompose, clean; `opts.passes > 1` repeats on the
/// residual with the tuning held fixed and unions the selections.
pub fn upt_decide(
    x: &Matrix,
    y: &[f64],
    params: &TuningParams,
    opts: &PipelineOptions,
) -> Result<DecisionVector> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(UptError::DimensionMismatch(format!(
            "upt_decide: X has {n} rows, Y has {}",
            y.len()
        )));
    }
    let threshold = opts.gram_threshold(p, n);
    let mut mu_all = vec![0.0f64; p];
    let mut final_dv = DecisionVector::all_null(p);
    let passes = opts.passes.max(1);
    for pass in 0..passes {
        let y_work: Vec<f64> = if pass == 0 {
            y.to_vec()
        } else {
            let shift = x.matvec(&mu_all)?;
            y.iter().zip(&shift).map(|(a, b)| a - b).collect()
        };
        let stats = gram_graph::marginal_stats(x, &y_work);
        let prepared = prepare_pass(x, &stats, params.t1, threshold);
        let (dv, mu_hat) = decide_prepared(&prepared, params.t2, params.t3, opts)?;
        if pass == 0 {
            final_dv = dv;
            mu_all = mu_hat;
        } else {
            for i in 0..p {
                if dv.delta[i] != 0 && final_dv.delta[i] == 0 {
                    final_dv.delta[i] = 1;
                    final_dv.provenance[i] = Provenance::Selected;
                    mu_all[i] = mu_hat[i];
                } else if final_dv.delta[i] == 0 {
                    final_dv.provenance[i] = dv.provenance[i];
                }
            }
        }
        if final_dv.selected_count() == 0 && passes > 1 {
            break; // nothing to residualize
        }
    }
    Ok(final_dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::{replicate_rng, Stream};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sym(vals: &[&[f64]]) -> SymMatrix {
        let n = vals.len();
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, vals[i][j]);
            }
        }
        m
    }

    /// Independent objective evaluator used as the brute-force oracle:
    /// f(mu) = 1/2 (y - G mu)' G^{-1} (y - G mu) + pen ||mu||_0 computed
    /// via the explicit solve, no shared code with the search path.
    fn objective_direct(
        y: &[f64],
        gram: &SymMatrix,
        mu: &[f64],
        t2: f64,
        convention: PenaltyConvention,
    ) -> f64 {
        let gmu = gram.matvec(mu);
        let r: Vec<f64> = y.iter().zip(&gmu).map(|(a, b)| a - b).collect();
        let s = gram.solve(&r).unwrap();
        let quad: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
        let nz = mu.iter().filter(|m| **m != 0.0).count();
        0.5 * quad + convention.penalty(t2) * nz as f64
    }

    fn enumerate_signed(k: usize, t3: f64) -> Vec<Vec<f64>> {
        let mut all = Vec::new();
        for code in 0..3u32.pow(k as u32) {
            let mut mu = vec![0.0; k];
            let mut c = code;
            for slot in mu.iter_mut() {
                *slot = [0.0, t3, -t3][(c % 3) as usize];
                c /= 3;
            }
            all.push(mu);
        }
        all
    }

    #[test]
    fn singleton_threshold_closed_form() {
        // t2 = 1, t3 = 2 => threshold (1 + 4) / 4 = 1.25; y = 2 selects.
        let g = sym(&[&[1.0]]);
        let r = clean_component(
            &[2.0],
            &g,
            1.0,
            2.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        assert_eq!(r.decisions, vec![1]);
        assert_eq!(r.mu, vec![2.0]);
        // Just below the threshold: not selected.
        let r2 = clean_component(
            &[1.24],
            &g,
            1.0,
            2.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        assert_eq!(r2.decisions, vec![0]);
        assert_abs_diff_eq!(
            PenaltyConvention::HalfTSquared.singleton_threshold(1.0, 2.0),
            1.25
        );
    }

    #[test]
    fn zero_data_selects_nothing() {
        let g = sym(&[&[1.0, 0.4], &[0.4, 1.0]]);
        let r = clean_component(
            &[0.0, 0.0],
            &g,
            1.0,
            1.5,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        assert_eq!(r.decisions, vec![0, 0]);
        assert_eq!(r.objective_value, 0.0);
    }

    #[test]
    fn negative_signal_needs_signed_mode() {
        let g = sym(&[&[1.0]]);
        let signed = clean_component(
            &[-3.0],
            &g,
            1.0,
            2.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        assert_eq!(signed.mu, vec![-2.0]);
        let one_sided = clean_component(
            &[-3.0],
            &g,
            1.0,
            2.0,
            SignMode::OneSided,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        assert_eq!(one_sided.decisions, vec![0]);
    }

    #[test]
    fn two_node_component_matches_brute_force() {
        let g = sym(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let mut rng = replicate_rng(41, 0, Stream::Extra(3));
        for _ in 0..200 {
            let y = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            let t2 = rng.gen_range(0.5..3.0);
            let t3 = rng.gen_range(1.0..4.0);
            let got = clean_component(
                &y,
                &g,
                t2,
                t3,
                SignMode::Signed,
                PenaltyConvention::HalfTSquared,
                12,
            )
            .unwrap();
            let mut best = f64::INFINITY;
            let mut best_mu = vec![0.0, 0.0];
            for mu in enumerate_signed(2, t3) {
                let v = objective_direct(&y, &g, &mu, t2, PenaltyConvention::HalfTSquared);
                if v < best - 1e-12 {
                    best = v;
                    best_mu = mu;
                }
            }
            assert_eq!(got.mu, best_mu, "y = {y:?}, t2 = {t2}, t3 = {t3}");
            assert_abs_diff_eq!(got.objective_value, best, epsilon = 1e-9);
        }
    }

    #[test]
    fn exhaustive_optimality_up_to_size_five() {
        let mut rng = replicate_rng(42, 0, Stream::Extra(4));
        for _ in 0..60 {
            let k = rng.gen_range(1..=5);
            // Random PD Gram: A A' / k + I/2 scaled to unit-ish diagonal.
            let mut g = SymMatrix::zeros(k);
            let a: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            for i in 0..k {
                for j in i..k {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += a[i][l] * a[j][l];
                    }
                    g.set(i, j, s / k as f64 + if i == j { 0.5 } else { 0.0 });
                }
            }
            let y: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let t2 = rng.gen_range(0.3..2.5);
            let t3 = rng.gen_range(0.8..3.0);
            let got = clean_component(
                &y,
                &g,
                t2,
                t3,
                SignMode::Signed,
                PenaltyConvention::HalfTSquared,
                12,
            )
            .unwrap();
            let got_val = objective_direct(&y, &g, &got.mu, t2, PenaltyConvention::HalfTSquared);
            for mu in enumerate_signed(k, t3) {
                let v = objective_direct(&y, &g, &mu, t2, PenaltyConvention::HalfTSquared);
                assert!(
                    got_val <= v + 1e-9,
                    "candidate {mu:?} beats reported optimum"
                );
            }
        }
    }

    #[test]
    fn oversized_component_rejected() {
        let g = sym(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let err = clean_component(
            &[1.0, 1.0],
            &g,
            1.0,
            1.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, UptError::ComponentTooLarge { size: 2, cap: 1 }));
    }

    #[test]
    fn singular_gram_rejected() {
        let g = sym(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let err = clean_component(
            &[1.0, 1.0],
            &g,
            1.0,
            1.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap_err();
        assert!(matches!(err, UptError::SingularGram(_)));
    }

    #[test]
    fn monotone_in_t2_on_singletons() {
        let g = sym(&[&[1.0]]);
        let y = [2.6];
        let mut prev_selected = true;
        for t2 in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            let r = clean_component(
                &y,
                &g,
                t2,
                2.0,
                SignMode::Signed,
                PenaltyConvention::HalfTSquared,
                12,
            )
            .unwrap();
            let sel = r.decisions[0] == 1;
            assert!(
                prev_selected || !sel,
                "selection reappeared as t2 grew (t2 = {t2})"
            );
            prev_selected = sel;
        }
    }

    #[test]
    fn penalty_convention_switch_shifts_threshold() {
        let g = sym(&[&[1.0]]);
        // Full t2^2 penalty doubles the L0 charge: (t3^2 + 2 t2^2) / (2 t3).
        let y = [1.4];
        let half = clean_component(
            &[y[0]],
            &g,
            1.0,
            2.0,
            SignMode::Signed,
            PenaltyConvention::HalfTSquared,
            12,
        )
        .unwrap();
        let full = clean_component(
            &[y[0]],
            &g,
            1.0,
            2.0,
            SignMode::Signed,
            PenaltyConvention::TSquared,
            12,
        )
        .unwrap();
        // 1.25 < 1.4 < 1.5
        assert_eq!(half.decisions, vec![1]);
        assert_eq!(full.decisions, vec![0]);
        assert_abs_diff_eq!(
            PenaltyConvention::TSquared.singleton_threshold(1.0, 2.0),
            1.5
        );
    }

    #[test]
    fn t2_threshold_round_trip() {
        for conv in [PenaltyConvention::HalfTSquared, PenaltyConvention::TSquared] {
            let t3 = 3.0;
            for c in [1.6, 2.5, 4.0] {
                let t2 = conv.t2_from_threshold(c, t3);
                assert_abs_diff_eq!(conv.singleton_threshold(t2, t3), c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pipeline_all_null_under_huge_t1() {
        let x = Matrix::identity(4);
        let y = vec![0.1, -0.2, 0.3, 0.0];
        let params = TuningParams::fixed_for_tests(1e12, 1.0, 1.0);
        let dv = upt_decide(&x, &y, &params, &PipelineOptions::default()).unwrap();
        assert_eq!(dv.delta, vec![0; 4]);
        assert!(dv.provenance.iter().all(|p| *p == Provenance::ScreenedOut));
    }

    #[test]
    fn pipeline_selects_single_strong_signal_noiseless() {
        // Orthogonal p = 4 design, one strong coordinate, noiseless response.
        let x = Matrix::identity(4);
        let beta = [0.0, 5.0, 0.0, 0.0];
        let y = crate::datagen::response_noiseless(&x, &beta).unwrap();
        // t1 = 1, t3 = 5, t2 such that the singleton threshold sits at 3.5.
        let conv = PenaltyConvention::HalfTSquared;
        let t2 = conv.t2_from_threshold(3.5, 5.0);
        let params = TuningParams::fixed_for_tests(1.0, t2, 5.0);
        let dv = upt_decide(&x, &y, &params, &PipelineOptions::default()).unwrap();
        assert_eq!(dv.delta, vec![0, 1, 0, 0]);
        assert_eq!(dv.provenance[1], Provenance::Selected);
        assert_eq!(dv.provenance[0], Provenance::ScreenedOut);
    }

    #[test]
    fn decomposition_consistency_on_orthogonal_blocks() {
        // Two exactly orthogonal blocks (disjoint row support): the pipeline
        // on the whole design equals independent runs per block.
        let x = Matrix::from_rows(&[
            &[1.0, 0.6, 0.0, 0.0],
            &[0.0, 0.8, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.7],
            &[0.0, 0.0, 0.0, 0.9],
        ])
        .unwrap();
        let y = vec![4.0, 1.0, -3.5, 0.5];
        let conv = PenaltyConvention::HalfTSquared;
        let t3 = 4.0;
        let t2 = conv.t2_from_threshold(2.8, t3);
        let params = TuningParams::fixed_for_tests(0.8, t2, t3);
        let opts = PipelineOptions {
            gram_noise_z0: None,
            ..Default::default()
        };
        let whole = upt_decide(&x, &y, &params, &opts).unwrap();

        // Block 1: columns 0-1 with rows 0-1; block 2: columns 2-3, rows 2-3.
        let x1 = Matrix::from_rows(&[&[1.0, 0.6], &[0.0, 0.8]]).unwrap();
        let x2 = Matrix::from_rows(&[&[1.0, 0.7], &[0.0, 0.9]]).unwrap();
        let d1 = upt_decide(&x1, &y[0..2].to_vec(), &params, &opts).unwrap();
        let d2 = upt_decide(&x2, &y[2..4].to_vec(), &params, &opts).unwrap();
        assert_eq!(&whole.delta[0..2], &d1.delta[..]);
        assert_eq!(&whole.delta[2..4], &d2.delta[..]);
    }

    #[test]
    fn screening_loss_counts_missed_signals() {
        let stats = MarginalStats {
            y_tilde: vec![0.5, 3.0, -0.2, -4.0],
        };
        let theta = [1, 1, 0, 1];
        let loss = screening_loss(&stats, 1.0, &theta);
        assert_abs_diff_eq!(loss, 1.0 / 3.0, epsilon = 1e-15);
    }
}
