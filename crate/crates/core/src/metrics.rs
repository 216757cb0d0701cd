//! Per-replicate confusion counts and cross-replicate error-rate summaries.
//!
//! FDR/FNR average per-replicate proportions (0/0 counted as 0); mFDR/mFNR
//! are ratios of replicate-summed counts, the plug-in for the
//! ratio-of-expectations definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn hamming(&self) -> usize {
        self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub atp: f64,
    pub afp: f64,
    pub fdr: f64,
    pub fnr: f64,
    pub mfdr: f64,
    pub mfnr: f64,
    pub fwer: f64,
    pub mean_hamming: f64,
    pub rep_count: usize,
    /// Monte Carlo standard errors (jackknife over replicates for the
    /// ratio-of-sums rates).
    pub atp_se: f64,
    pub afp_se: f64,
    pub fdr_se: f64,
    pub mfdr_se: f64,
}

pub fn confusion(theta: &[u8], delta: &[u8]) -> Result<ConfusionCounts> {
    if theta.len() != delta.len() {
        return Err(UptError::DimensionMismatch(format!(
            "confusion: theta has {} entries, delta has {}",
            theta.len(),
            delta.len()
        )));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&t, &d) in theta.iter().zip(delta) {
        match (t != 0, d != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn se_of_mean(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

fn ratio_of_sums(num: &[f64], den: &[f64]) -> f64 {
    let d: f64 = den.iter().sum();
    if d <= 0.0 {
        0.0
    } else {
        num.iter().sum::<f64>() / d
    }
}

/// Jackknife SE of a ratio-of-sums statistic.
fn jackknife_ratio_se(num: &[f64], den: &[f64]) -> f64 {
    let n = num.len();
    if n < 2 {
        return 0.0;
    }
    let tn: f64 = num.iter().sum();
    let td: f64 = den.iter().sum();
    let mut loo = Vec::with_capacity(n);
    for i in 0..n {
        let d = td - den[i];
        loo.push(if d <= 0.0 { 0.0 } else { (tn - num[i]) / d });
    }
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|x| (x - m) * (x - m)).sum();
    ((n as f64 - 1.0) / n as f64 * ss).sqrt()
}

pub fn aggregate(counts: &[ConfusionCounts]) -> Result<MetricsSummary> {
    if counts.is_empty() {
        return Err(UptError::InvalidParameter(
            "aggregate requires at least one replicate".into(),
        ));
    }
    let reps = counts.len();
    let tp: Vec<f64> = counts.iter().map(|c| c.tp as f64).collect();
    let fp: Vec<f64> = counts.iter().map(|c| c.fp as f64).collect();
    let fnn: Vec<f64> = counts.iter().map(|c| c.fn_ as f64).collect();
    let tn: Vec<f64> = counts.iter().map(|c| c.tn as f64).collect();

    let fdp: Vec<f64> = counts
        .iter()
        .map(|c| {
            let d = c.fp + c.tp;
            if d == 0 {
                0.0
            } else {
                c.fp as f64 / d as f64
            }
        })
        .collect();
    let fnp: Vec<f64> = counts
        .iter()
        .map(|c| {
            let d = c.fn_ + c.tn;
            if d == 0 {
                0.0
            } else {
                c.fn_ as f64 / d as f64
            }
        })
        .collect();
    let discoveries: Vec<f64> = tp.iter().zip(&fp).map(|(a, b)| a + b).collect();
    let accepts: Vec<f64> = fnn.iter().zip(&tn).map(|(a, b)| a + b).collect();

    let hamming: Vec<f64> = counts.iter().map(|c| c.hamming() as f64).collect();
    let fwer = hamming.iter().filter(|h| **h > 0.0).count() as f64 / reps as f64;

    Ok(MetricsSummary {
        atp: mean(&tp),
        afp: mean(&fp),
        fdr: mean(&fdp),
        fnr: mean(&fnp),
        mfdr: ratio_of_sums(&fp, &discoveries),
        mfnr: ratio_of_sums(&fnn, &accepts),
        fwer,
        mean_hamming: mean(&hamming),
        rep_count: reps,
        atp_se: se_of_mean(&tp),
        afp_se: se_of_mean(&fp),
        fdr_se: se_of_mean(&fdp),
        mfdr_se: jackknife_ratio_se(&fp, &discoveries),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn confusion_trivial_cases() {
        let c = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (2, 1, 0, 0));
        let c = confusion(&[0, 0], &[1, 1]).unwrap();
        assert_eq!(c.fp, 2);
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn confusion_matches_naive_loop() {
        use rand::Rng;
        let mut rng = crate::seeding::replicate_rng(21, 0, crate::seeding::Stream::Extra(0));
        let n = 10_000;
        let theta: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let delta: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let c = confusion(&theta, &delta).unwrap();
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        let mut tn = 0;
        for i in 0..n {
            match (theta[i], delta[i]) {
                (1, 1) => tp += 1,
                (0, 1) => fp += 1,
                (1, 0) => fn_ += 1,
                _ => tn += 1,
            }
        }
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        assert_eq!(c.total(), n);
    }

    #[test]
    fn aggregate_arithmetic_example() {
        // fp (1,3), tp (9,7): mfdr = 4/20, fdr = (0.1 + 0.3)/2.
        let counts = vec![
            ConfusionCounts {
                tp: 9,
                fp: 1,
                fn_: 0,
                tn: 0,
            },
            ConfusionCounts {
                tp: 7,
                fp: 3,
                fn_: 0,
                tn: 0,
            },
        ];
        let s = aggregate(&counts).unwrap();
        assert_abs_diff_eq!(s.mfdr, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.fdr, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.atp, 8.0);
        assert_abs_diff_eq!(s.afp, 2.0);
    }

    #[test]
    fn zero_discovery_guard() {
        let counts = vec![ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: 2,
            tn: 8,
        }];
        let s = aggregate(&counts).unwrap();
        assert_eq!(s.fdr, 0.0);
        assert_eq!(s.mfdr, 0.0);
        assert_abs_diff_eq!(s.mfnr, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn mfdr_equals_fdr_under_constant_denominator() {
        let counts = vec![
            ConfusionCounts {
                tp: 4,
                fp: 1,
                fn_: 0,
                tn: 5,
            },
            ConfusionCounts {
                tp: 3,
                fp: 2,
                fn_: 1,
                tn: 4,
            },
        ];
        let s = aggregate(&counts).unwrap();
        assert_abs_diff_eq!(s.mfdr, s.fdr, epsilon = 1e-15);
    }

    #[test]
    fn zero_fwer_forces_zero_error_rates() {
        let counts = vec![
            ConfusionCounts {
                tp: 5,
                fp: 0,
                fn_: 0,
                tn: 5,
            };
            3
        ];
        let s = aggregate(&counts).unwrap();
        assert_eq!(s.fwer, 0.0);
        assert_eq!(s.fdr, 0.0);
        assert_eq!(s.mfdr, 0.0);
        assert_eq!(s.mean_hamming, 0.0);
    }

    #[test]
    fn reorder_invariance() {
        let a = vec![
            ConfusionCounts {
                tp: 1,
                fp: 2,
                fn_: 3,
                tn: 4,
            },
            ConfusionCounts {
                tp: 4,
                fp: 0,
                fn_: 1,
                tn: 5,
            },
            ConfusionCounts {
                tp: 2,
                fp: 2,
                fn_: 2,
                tn: 4,
            },
        ];
        let mut b = a.clone();
        b.reverse();
        let sa = aggregate(&a).unwrap();
        let sb = aggregate(&b).unwrap();
        assert_eq!(sa.mfdr, sb.mfdr);
        assert_eq!(sa.fdr, sb.fdr);
        assert_eq!(sa.fwer, sb.fwer);
    }

    #[test]
    fn empty_rejected() {
        assert!(aggregate(&[]).is_err());
    }
}
