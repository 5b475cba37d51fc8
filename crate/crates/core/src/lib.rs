//! Instrumental-variable estimators in C-matrix form, their approximate-bias
//! coefficients, and a seeded Monte Carlo harness for many-instrument,
//! heteroskedastic and high-leverage designs.

// `!(a > b)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx_bias;
pub mod design;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod montecarlo;
pub mod oracle;

pub use approx_bias::{bias_coefficient, is_approximately_unbiased, vanishing_probe, BiasCoefficient};
pub use design::{
    leverage_report, partial_out, project, project_with, stack, DesignData, LeverageReport,
    PartialledData, ProjectionDecomposition, StackedDesign,
};
pub use error::{IvError, Result};
pub use estimators::{
    apply_c, estimate, jive1_loo_oracle, resolve_named, standard_errors, EstimateResult,
    EstimatorFamily, EstimatorSpec, InputMode, NamedEstimator,
};
