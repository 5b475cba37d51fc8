//! Seeded Monte Carlo replication.
//!
//! Round `r` draws from its own ChaCha8 stream (key from the base seed,
//! stream id `r`), so results do not depend on how rounds are scheduled
//! across threads. Per-round outcomes are gathered in round order and folded
//! sequentially.

mod dgp;

pub use dgp::{
    generate, group_labels, outlier_instruments, ErrorCov, GroupHetDesign, HomoskedasticDesign,
    OutlierDesign, RoundDraw, SimDesign, BETA_STAR, GROUP_PI, GROUP_SIZES, OUTLIER_SIZES,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IvError, Result};
use crate::estimators::{
    estimate_prepared, resolve_for, EstimateOptions, InputMode, NamedEstimator, PreparedData,
};

/// RNG for one round.
pub fn round_rng(base_seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(round);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `|mean - β*|`.
    pub bias: f64,
    /// Mean squared deviation from the mean (divisor `R`).
    pub variance: f64,
    /// Mean squared error against `β*`.
    pub mse: f64,
}

/// Bias, variance and MSE of a vector of estimates. Empty input yields NaNs.
pub fn summarize(estimates: &[f64], beta_true: f64) -> Moments {
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / r;
    let mse = estimates.iter().map(|e| (e - beta_true).powi(2)).sum::<f64>() / r;
    Moments {
        bias: (mean - beta_true).abs(),
        variance,
        mse,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Rounds in which estimation failed; excluded from the moments.
    pub failures: usize,
    /// Per-round estimates of `β*` (NaN where the round failed).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub estimates: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub design: String,
    pub rounds: usize,
    pub base_seed: u64,
    pub beta_true: f64,
    pub estimators: Vec<EstimatorSummary>,
}

impl MonteCarloSummary {
    pub fn get(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }
}

/// `β*` estimates of every requested estimator on one draw.
fn evaluate_round(
    design: &SimDesign,
    names: &[NamedEstimator],
    base_seed: u64,
    round: usize,
) -> Vec<Option<f64>> {
    let mut rng = round_rng(base_seed, round as u64);
    let Ok(draw) = generate(design, &mut rng) else {
        return vec![None; names.len()];
    };
    let resolved: Vec<_> = names.iter().map(|n| resolve_for(*n, &draw.data).ok()).collect();
    let need = |mode| resolved.iter().flatten().any(|r| r.spec.input_mode == mode);
    let raw = need(InputMode::Raw).then(|| PreparedData::new(&draw.data, true, false));
    let partialled =
        need(InputMode::Partialled).then(|| PreparedData::new(&draw.data, false, true));
    let inputs = |mode| match mode {
        InputMode::Raw => raw.as_ref().and_then(|p| p.as_ref().ok()),
        InputMode::Partialled => partialled.as_ref().and_then(|p| p.as_ref().ok()),
    };

    resolved
        .iter()
        .map(|res| {
            let res = res.as_ref()?;
            let prepared = inputs(res.spec.input_mode)?.for_mode(res.spec.input_mode).ok()?;
            estimate_prepared(res.spec.family, prepared, EstimateOptions::default())
                .ok()
                .map(|e| e.beta_hat[0])
                .filter(|b| b.is_finite())
        })
        .collect()
}

/// Runs `rounds` seeded replications of `design`, evaluating every estimator
/// on the same draw each round.
pub fn run(
    design: &SimDesign,
    names: &[NamedEstimator],
    rounds: usize,
    base_seed: u64,
    keep_estimates: bool,
) -> Result<MonteCarloSummary> {
    if rounds == 0 {
        return Err(IvError::Config("rounds must be at least 1".into()));
    }
    if names.is_empty() {
        return Err(IvError::Config("no estimators requested".into()));
    }
    design.validate()?;

    let per_round: Vec<Vec<Option<f64>>> = (0..rounds)
        .into_par_iter()
        .map(|r| evaluate_round(design, names, base_seed, r))
        .collect();

    let beta_true = design.beta_star();
    let estimators = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let column: Vec<Option<f64>> = per_round.iter().map(|row| row[j]).collect();
            let ok: Vec<f64> = column.iter().flatten().copied().collect();
            let m = summarize(&ok, beta_true);
            EstimatorSummary {
                label: name.label().to_string(),
                bias: m.bias,
                variance: m.variance,
                mse: m.mse,
                failures: rounds - ok.len(),
                estimates: keep_estimates
                    .then(|| column.iter().map(|v| v.unwrap_or(f64::NAN)).collect()),
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        design: design.label(),
        rounds,
        base_seed,
        beta_true,
        estimators,
    })
}

/// Equal-width histogram of the kept estimates over their pooled range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    /// `bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
    /// `counts[e][b]`: estimates of estimator `e` in bin `b`.
    pub counts: Vec<Vec<usize>>,
}

pub fn density_export(summary: &MonteCarloSummary, bins: usize) -> Result<DensityTable> {
    if bins == 0 {
        return Err(IvError::Config("bins must be at least 1".into()));
    }
    let mut series = Vec::with_capacity(summary.estimators.len());
    for e in &summary.estimators {
        let est = e.estimates.as_ref().ok_or_else(|| {
            IvError::State(format!("estimates for {} were not kept", e.label))
        })?;
        series.push(est);
    }
    let finite = || series.iter().flat_map(|s| s.iter()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        lo = summary.beta_true - 0.5;
        hi = summary.beta_true + 0.5;
    } else if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + b as f64 * width })
        .collect();
    let counts = series
        .iter()
        .map(|s| {
            let mut c = vec![0usize; bins];
            for v in s.iter().filter(|v| v.is_finite()) {
                let b = (((v - lo) / width).floor() as usize).min(bins - 1);
                c[b] += 1;
            }
            c
        })
        .collect();
    Ok(DensityTable {
        edges,
        labels: summary.estimators.iter().map(|e| e.label.clone()).collect(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_moments() {
        let m = summarize(&[0.4, 0.2], 0.3);
        assert!(m.bias.abs() < 1e-15);
        assert!((m.variance - 0.01).abs() < 1e-15);
        assert!((m.mse - 0.01).abs() < 1e-15);
    }

    #[test]
    fn constant_vector_moments() {
        let m = summarize(&[0.3; 7], 0.3);
        assert_eq!((m.bias, m.variance, m.mse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mse_identity_on_rounded_ols_row() {
        // 0.475² + 0.001 ≈ 0.226
        assert!((0.475f64.powi(2) + 0.001 - 0.226).abs() < 1e-3);
    }

    fn summary_with(estimates: Vec<Vec<f64>>) -> MonteCarloSummary {
        MonteCarloSummary {
            design: "t".into(),
            rounds: estimates[0].len(),
            base_seed: 0,
            beta_true: 0.3,
            estimators: estimates
                .into_iter()
                .enumerate()
                .map(|(i, e)| EstimatorSummary {
                    label: format!("e{i}"),
                    bias: 0.0,
                    variance: 0.0,
                    mse: 0.0,
                    failures: 0,
                    estimates: Some(e),
                })
                .collect(),
        }
    }

    #[test]
    fn density_constant_single_bin() {
        let t = density_export(&summary_with(vec![vec![0.3; 10]]), 5).unwrap();
        let occupied: Vec<_> = t.counts[0].iter().filter(|c| **c > 0).collect();
        assert_eq!(occupied, vec![&10]);
    }

    #[test]
    fn density_two_points() {
        let t = density_export(&summary_with(vec![vec![0.2, 0.4]]), 2).unwrap();
        assert_eq!(t.counts[0], vec![1, 1]);
        assert_eq!(t.edges.len(), 3);
    }

    #[test]
    fn density_needs_estimates() {
        let mut s = summary_with(vec![vec![0.1]]);
        s.estimators[0].estimates = None;
        assert!(matches!(density_export(&s, 3), Err(IvError::State(_))));
    }

    #[test]
    fn density_skips_failed_rounds() {
        let t = density_export(&summary_with(vec![vec![0.1, f64::NAN, 0.5]]), 4).unwrap();
        assert_eq!(t.counts[0].iter().sum::<usize>(), 2);
    }

    #[test]
    fn run_rejects_zero_rounds() {
        let d = SimDesign::outlier(26).unwrap();
        assert!(run(&d, &[NamedEstimator::Tsls], 0, 1, false).is_err());
    }

    #[test]
    fn run_is_deterministic() {
        let d = SimDesign::outlier(101).unwrap();
        let names = d.default_estimators();
        let a = run(&d, &names, 20, 42, true).unwrap();
        let b = run(&d, &names, 20, 42, true).unwrap();
        assert_eq!(a, b);
        let c = run(&d, &names, 20, 43, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_differ_by_round() {
        use rand::Rng;
        let a: u64 = round_rng(5, 0).random();
        let b: u64 = round_rng(5, 1).random();
        assert_ne!(a, b);
    }
}
