//! Approximate-bias coefficients `tr(C) - 𝓛 - 1`.
//!
//! An estimator's approximate bias is proportional to this dimensionless
//! coefficient, with `𝓛 = L` on raw inputs and `𝓛 = L1` on partialled
//! inputs. The proportionality factor involves unobservable error
//! covariances and is not computed.

use nalgebra::DVector;
use serde::Serialize;

use crate::design::{partial_out, project, stack, DesignData};
use crate::error::{IvError, Result};
use crate::estimators::{resolve_for, EstimatorFamily, InputMode, NamedEstimator, WEIGHT_FLOOR};

/// Tolerance for the families whose coefficient is exactly zero.
pub const EXACT_TOL: f64 = 1e-9;
/// Looser advisory tolerance for asymptotically vanishing families.
pub const VANISHING_TOL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasCoefficient {
    /// `trace_c - l_effective - 1`.
    pub value: f64,
    pub trace_c: f64,
    pub l_effective: usize,
}

/// Trace of `C` from the leverages alone.
pub fn trace_c(family: EstimatorFamily, leverages: &DVector<f64>) -> Result<f64> {
    let n = leverages.len() as f64;
    // tr(P_Z) is the rank, an integer; rounding removes the leverage noise.
    let k = leverages.sum().round();
    let trace = match family {
        EstimatorFamily::KClass(kk) => kk * k + (1.0 - kk) * n,
        EstimatorFamily::Lambda2(lambda) => k - lambda * k,
        EstimatorFamily::Omega2(omega) => n * omega,
        EstimatorFamily::Lambda1(lambda) => {
            let mut acc = 0.0;
            for (i, d) in leverages.iter().enumerate() {
                let den = 1.0 - lambda * d;
                if !(den > WEIGHT_FLOOR) {
                    return Err(IvError::SingularWeight {
                        row: i,
                        denominator: den,
                    });
                }
                acc += d / den;
            }
            (1.0 - lambda) * acc
        }
        EstimatorFamily::Omega1(omega) => {
            let mut acc = 0.0;
            for (i, d) in leverages.iter().enumerate() {
                let den = 1.0 - d + omega;
                if !(den > WEIGHT_FLOOR) {
                    return Err(IvError::SingularWeight {
                        row: i,
                        denominator: den,
                    });
                }
                acc += omega / den;
            }
            acc
        }
    };
    Ok(trace)
}

pub fn bias_coefficient(
    family: EstimatorFamily,
    leverages: &DVector<f64>,
    n: usize,
    l_effective: usize,
) -> Result<BiasCoefficient> {
    if leverages.len() != n {
        return Err(IvError::Dimension {
            block: "leverages",
            expected: n,
            found: leverages.len(),
        });
    }
    let trace = trace_c(family, leverages)?;
    Ok(BiasCoefficient {
        value: trace - l_effective as f64 - 1.0,
        trace_c: trace,
        l_effective,
    })
}

pub fn is_approximately_unbiased(coef: &BiasCoefficient, tol: f64) -> bool {
    coef.value.abs() <= tol
}

/// Coefficient of a named estimator on a dataset, using the leverages of
/// the input mode the name resolves to.
pub fn named_coefficient(name: NamedEstimator, data: &DesignData) -> Result<BiasCoefficient> {
    let spec = resolve_for(name, data)?.spec;
    let (leverages, l_eff) = match spec.input_mode {
        InputMode::Raw => {
            let s = stack(data);
            (project(&s.z)?.leverages().clone(), s.l)
        }
        InputMode::Partialled => {
            let p = partial_out(data)?;
            (project(&p.z_t)?.leverages().clone(), data.l1())
        }
    };
    bias_coefficient(spec.family, &leverages, data.n(), l_eff)
}

/// Coefficient path of `name` along designs of strictly increasing size.
pub fn vanishing_probe(
    name: NamedEstimator,
    design_sequence: &[DesignData],
) -> Result<Vec<(usize, BiasCoefficient)>> {
    if design_sequence.windows(2).any(|w| w[1].n() <= w[0].n()) {
        return Err(IvError::Config(
            "vanishing probe needs strictly increasing N".into(),
        ));
    }
    design_sequence
        .iter()
        .map(|d| named_coefficient(name, d).map(|c| (d.n(), c)))
        .collect()
}

/// Upper bound on `|tr(C) - L1 - 1|` for the ω1 coefficient at
/// `ω = (L1 + 1)/N`, with `m = 1 - max_leverage`:
/// `(K1 (L1 + 1) + (L1 + 1)²) / (m N + L1 + 1)`.
pub fn vanishing_bound(k1: usize, l1: usize, n: usize, max_leverage: f64) -> f64 {
    let a = l1 as f64 + 1.0;
    let m = 1.0 - max_leverage;
    (k1 as f64 * a + a * a) / (m * n as f64 + a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lev(n: usize, k: usize) -> DVector<f64> {
        DVector::from_element(n, k as f64 / n as f64)
    }

    #[test]
    fn ols_and_tsls_coefficients() {
        let c = bias_coefficient(EstimatorFamily::KClass(0.0), &lev(100, 10), 100, 3).unwrap();
        assert_eq!(c.value, 96.0);
        let c = bias_coefficient(EstimatorFamily::KClass(1.0), &lev(100, 10), 100, 3).unwrap();
        assert_eq!(c.value, 6.0);
        let c = bias_coefficient(EstimatorFamily::Lambda2(0.0), &lev(100, 10), 100, 3).unwrap();
        assert_eq!(c.value, 6.0);
    }

    #[test]
    fn jive2_is_minus_l_minus_one() {
        let c = bias_coefficient(EstimatorFamily::Omega2(0.0), &lev(50, 7), 50, 4).unwrap();
        assert_eq!(c.value, -5.0);
        assert!(!is_approximately_unbiased(&c, EXACT_TOL));
    }

    #[test]
    fn uojive2_cancels() {
        let n = 123;
        let l = 6;
        let c = bias_coefficient(
            EstimatorFamily::Omega2((l as f64 + 1.0) / n as f64),
            &lev(n, 17),
            n,
            l,
        )
        .unwrap();
        assert!(c.value.abs() < 1e-12);
    }

    #[test]
    fn jive1_coefficient_is_minus_l_minus_one() {
        let c = bias_coefficient(EstimatorFamily::Omega1(0.0), &lev(40, 5), 40, 2).unwrap();
        assert_eq!(c.value, -3.0);
    }

    #[test]
    fn lambda1_structure() {
        // λ = 0 is TSLS, λ = 1 is JIVE1.
        let d = DVector::from_vec(vec![0.1, 0.4, 0.2, 0.3, 0.5, 0.5]);
        let tsls = bias_coefficient(EstimatorFamily::Lambda1(0.0), &d, 6, 1).unwrap();
        assert!((tsls.value - 0.0).abs() < 1e-12);
        let jive = bias_coefficient(EstimatorFamily::Lambda1(1.0), &d, 6, 1).unwrap();
        assert!((jive.value + 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_weight_propagates() {
        let d = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(bias_coefficient(EstimatorFamily::Omega1(0.0), &d, 3, 1).is_err());
        assert!(bias_coefficient(EstimatorFamily::KClass(1.0), &d, 2, 1).is_err());
    }

    #[test]
    fn bound_shrinks_with_n() {
        let a = vanishing_bound(4, 1, 100, 0.2);
        let b = vanishing_bound(4, 1, 400, 0.2);
        assert!(b < a);
    }
}
