//! Closed-form JIVE1 against its leave-one-out definition on seeded random
//! instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::design::DesignData;
use crate::error::{IvError, Result};
use crate::estimators::{estimate, jive1_loo_oracle, EstimatorFamily, EstimatorSpec};
use crate::montecarlo::round_rng;

/// Largest sample the brute-force oracle is run on.
pub const ORACLE_MAX_N: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleShape {
    pub n: usize,
    pub l1: usize,
    pub l2: usize,
    pub k1: usize,
}

impl Default for OracleShape {
    fn default() -> Self {
        Self { n: 30, l1: 1, l2: 1, k1: 4 }
    }
}

/// Gaussian instruments and controls (intercept first), an endogenous block
/// sharing the structural error.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, shape: OracleShape) -> Result<DesignData> {
    let OracleShape { n, l1, l2, k1 } = shape;
    let mut normal = |r: usize, c: usize| DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let z = normal(n, k1);
    let mut w = normal(n, l2);
    if l2 > 0 {
        w.column_mut(0).fill(1.0);
    }
    let eps = normal(n, 1);
    let pi = normal(k1, l1) * 0.5;
    let x = &z * pi + normal(n, l1) + &eps * DMatrix::from_element(1, l1, 0.5);
    let mut y = (&x * DVector::from_element(l1, 0.3) + eps).column(0).into_owned();
    if l2 > 0 {
        y += &w * DVector::from_element(l2, 0.7);
    }
    DesignData::new(y, x, w, z)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub instance: usize,
    /// `max |closed - oracle| / max |oracle|`, absent when either path failed.
    pub discrepancy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub shape: OracleShape,
    pub seed: u64,
    pub instances: Vec<InstanceOutcome>,
}

impl OracleReport {
    /// Largest discrepancy over the instances where both paths succeeded.
    pub fn max_discrepancy(&self) -> Option<f64> {
        self.instances
            .iter()
            .filter_map(|o| o.discrepancy)
            .fold(None, |m, d| Some(m.map_or(d, |m: f64| m.max(d))))
    }
}

/// Runs `instances` comparisons; instance `i` draws from stream `i` of `seed`.
pub fn oracle_check(instances: usize, shape: OracleShape, seed: u64) -> Result<OracleReport> {
    if shape.n > ORACLE_MAX_N {
        return Err(IvError::Config(format!(
            "oracle check is limited to N <= {ORACLE_MAX_N}, got {}",
            shape.n
        )));
    }
    if instances == 0 {
        return Err(IvError::Config("at least one instance is required".into()));
    }
    let spec = EstimatorSpec::raw(EstimatorFamily::Omega1(0.0), "JIVE1");
    let mut out = Vec::with_capacity(instances);
    for i in 0..instances {
        let data = random_instance(&mut round_rng(seed, i as u64), shape)?;
        let outcome = match (estimate(&spec, &data), jive1_loo_oracle(&data)) {
            (Ok(closed), Ok(oracle)) => {
                let scale = oracle.amax().max(f64::MIN_POSITIVE);
                InstanceOutcome {
                    instance: i,
                    discrepancy: Some((closed.beta_hat - oracle).amax() / scale),
                    error: None,
                }
            }
            (closed, oracle) => InstanceOutcome {
                instance: i,
                discrepancy: None,
                error: Some(
                    [closed.err(), oracle.err()]
                        .into_iter()
                        .flatten()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join("; "),
                ),
            },
        };
        out.push(outcome);
    }
    Ok(OracleReport {
        shape,
        seed,
        instances: out,
    })
}
