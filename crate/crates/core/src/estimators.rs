//! The C-matrix estimator engine.
//!
//! Every estimator here has the closed form `(X'C'X)^{-1} X'C'y` with `C`
//! drawn from one of five one-parameter families:
//!
//! | family    | `C`                                   |
//! |-----------|---------------------------------------|
//! | k-class   | `(1-k) I + k P_Z`                     |
//! | λ1-class  | `(I - λD)^{-1} (P_Z - λD)`            |
//! | λ2-class  | `P_Z - λD`                            |
//! | ω1-class  | `(I - D + ωI)^{-1} (P_Z - D + ωI)`    |
//! | ω2-class  | `P_Z - D + ωI`                        |
//!
//! `D` is the diagonal of `P_Z`. `C` is applied through the orthonormal
//! basis and per-row scalings, so the cost is `O(N·K·c)` for an `N × c`
//! operand and nothing `N × N` is ever formed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{partial_out, project, stack, DesignData, ProjectionDecomposition};
use crate::error::{IvError, Result};
use crate::linalg::{invert_small, solve_small};

/// Row-weight denominators at or below this are treated as singular.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", content = "parameter")]
pub enum EstimatorFamily {
    KClass(f64),
    Lambda1(f64),
    Lambda2(f64),
    Omega1(f64),
    Omega2(f64),
}

impl EstimatorFamily {
    pub fn class_name(&self) -> &'static str {
        match self {
            Self::KClass(_) => "k",
            Self::Lambda1(_) => "lambda1",
            Self::Lambda2(_) => "lambda2",
            Self::Omega1(_) => "omega1",
            Self::Omega2(_) => "omega2",
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Self::KClass(v)
            | Self::Lambda1(v)
            | Self::Lambda2(v)
            | Self::Omega1(v)
            | Self::Omega2(v) => v,
        }
    }

    /// Per-row divisor of the row-wise division, if the family has one.
    fn denominator(&self, d: f64) -> Option<f64> {
        match *self {
            Self::Lambda1(lambda) => Some(1.0 - lambda * d),
            Self::Omega1(omega) => Some(1.0 - d + omega),
            _ => None,
        }
    }

    /// Validates the row divisors and returns their reciprocals.
    pub(crate) fn row_scale(&self, leverages: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        if self.denominator(0.0).is_none() {
            return Ok(None);
        }
        let mut out = DVector::zeros(leverages.len());
        for (i, d) in leverages.iter().enumerate() {
            let den = self.denominator(*d).expect("family has a divisor");
            if !(den > WEIGHT_FLOOR) {
                return Err(IvError::SingularWeight {
                    row: i,
                    denominator: den,
                });
            }
            out[i] = 1.0 / den;
        }
        Ok(Some(out))
    }
}

impl fmt::Display for EstimatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.class_name(), self.parameter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// `(y, X, Z)` with controls stacked into both `X` and `Z`.
    Raw,
    /// `(ỹ, X̃, Z̃)` after partialling out the controls.
    Partialled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub family: EstimatorFamily,
    pub input_mode: InputMode,
    pub label: String,
}

impl EstimatorSpec {
    pub fn raw(family: EstimatorFamily, label: impl Into<String>) -> Self {
        Self {
            family,
            input_mode: InputMode::Raw,
            label: label.into(),
        }
    }

    pub fn partialled(family: EstimatorFamily, label: impl Into<String>) -> Self {
        Self {
            family,
            input_mode: InputMode::Partialled,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NamedEstimator {
    Ols,
    Tsls,
    Nagar,
    Auk,
    Jive1,
    Jive2,
    Ijive1,
    Ijive2,
    Uijive1,
    Uijive2,
    Tsji1,
    Tsji2,
    Uojive1,
    Uojive2,
}

impl NamedEstimator {
    pub const ALL: [NamedEstimator; 14] = [
        Self::Ols,
        Self::Tsls,
        Self::Nagar,
        Self::Auk,
        Self::Jive1,
        Self::Jive2,
        Self::Ijive1,
        Self::Ijive2,
        Self::Uijive1,
        Self::Uijive2,
        Self::Tsji1,
        Self::Tsji2,
        Self::Uojive1,
        Self::Uojive2,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::Ols => "OLS",
            Self::Tsls => "TSLS",
            Self::Nagar => "Nagar",
            Self::Auk => "AUK",
            Self::Jive1 => "JIVE1",
            Self::Jive2 => "JIVE2",
            Self::Ijive1 => "IJIVE1",
            Self::Ijive2 => "IJIVE2",
            Self::Uijive1 => "UIJIVE1",
            Self::Uijive2 => "UIJIVE2",
            Self::Tsji1 => "TSJI1",
            Self::Tsji2 => "TSJI2",
            Self::Uojive1 => "UOJIVE1",
            Self::Uojive2 => "UOJIVE2",
        }
    }

    /// Names defined on the partialled variables.
    pub fn is_partialled(&self) -> bool {
        matches!(
            self,
            Self::Ijive1 | Self::Ijive2 | Self::Uijive1 | Self::Uijive2
        )
    }

    /// The raw-input sibling used when there are no controls to partial out.
    pub fn raw_sibling(&self) -> NamedEstimator {
        match self {
            Self::Ijive1 => Self::Jive1,
            Self::Ijive2 => Self::Jive2,
            Self::Uijive1 => Self::Uojive1,
            Self::Uijive2 => Self::Uojive2,
            other => *other,
        }
    }
}

impl fmt::Display for NamedEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NamedEstimator {
    type Err = IvError;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|n| n.label().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| IvError::Config(format!("unknown estimator name '{wanted}'")))
    }
}

/// Outcome of [`resolve_named`]: the spec plus a note when a partialled
/// name had to fall back to its raw sibling.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub spec: EstimatorSpec,
    pub fallback: Option<String>,
}

/// Maps a named estimator onto its family, parameter and input mode for
/// the given dimensions (`K = K1 + L2`, `L = L1 + L2`).
pub fn resolve_named(
    name: NamedEstimator,
    n: usize,
    k_total: usize,
    l_total: usize,
    l1: usize,
) -> Result<Resolution> {
    if n == 0 || k_total == 0 || l_total == 0 || l1 == 0 {
        return Err(IvError::Config("dimensions must be positive".into()));
    }
    if n <= k_total {
        return Err(IvError::Config(format!(
            "need N > K, got N = {n}, K = {k_total}"
        )));
    }
    if l1 > l_total {
        return Err(IvError::Config(format!("L1 = {l1} exceeds L = {l_total}")));
    }
    let l2 = l_total - l1;
    let (nf, kf, lf, l1f) = (n as f64, k_total as f64, l_total as f64, l1 as f64);

    if name.is_partialled() && l2 == 0 {
        let sibling = name.raw_sibling();
        let mut res = resolve_named(sibling, n, k_total, l_total, l1)?;
        res.spec.label = name.label().to_string();
        res.fallback = Some(format!(
            "{} resolves to {}: no controls to partial out",
            name.label(),
            sibling.label()
        ));
        return Ok(res);
    }

    use EstimatorFamily::*;
    let label = name.label();
    let spec = match name {
        NamedEstimator::Ols => EstimatorSpec::raw(KClass(0.0), label),
        NamedEstimator::Tsls => EstimatorSpec::raw(KClass(1.0), label),
        NamedEstimator::Nagar => EstimatorSpec::raw(KClass(1.0 + (kf - lf - 1.0) / nf), label),
        NamedEstimator::Auk => EstimatorSpec::raw(KClass((nf - lf - 1.0) / (nf - kf)), label),
        NamedEstimator::Tsji1 => EstimatorSpec::raw(Lambda1((kf - lf - 1.0) / kf), label),
        NamedEstimator::Tsji2 => EstimatorSpec::raw(Lambda2((kf - lf - 1.0) / kf), label),
        NamedEstimator::Jive1 => EstimatorSpec::raw(Omega1(0.0), label),
        NamedEstimator::Jive2 => EstimatorSpec::raw(Omega2(0.0), label),
        NamedEstimator::Uojive1 => EstimatorSpec::raw(Omega1((lf + 1.0) / nf), label),
        NamedEstimator::Uojive2 => EstimatorSpec::raw(Omega2((lf + 1.0) / nf), label),
        NamedEstimator::Ijive1 => EstimatorSpec::partialled(Omega1(0.0), label),
        NamedEstimator::Ijive2 => EstimatorSpec::partialled(Omega2(0.0), label),
        NamedEstimator::Uijive1 => EstimatorSpec::partialled(Omega1((l1f + 1.0) / nf), label),
        NamedEstimator::Uijive2 => EstimatorSpec::partialled(Omega2((l1f + 1.0) / nf), label),
    };
    Ok(Resolution {
        spec,
        fallback: None,
    })
}

/// Resolves a name against the dimensions of a dataset.
pub fn resolve_for(name: NamedEstimator, data: &DesignData) -> Result<Resolution> {
    resolve_named(name, data.n(), data.k_total(), data.l_total(), data.l1())
}

fn check_rows(decomp: &ProjectionDecomposition, m: &DMatrix<f64>) -> Result<()> {
    if decomp.n() != m.nrows() {
        return Err(IvError::Dimension {
            block: "operand",
            expected: decomp.n(),
            found: m.nrows(),
        });
    }
    Ok(())
}

fn scale_rows(m: &mut DMatrix<f64>, s: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col.component_mul_assign(s);
    }
}

/// `C · m` given `m` and its projection `P_Z m`.
fn combine_forward(
    family: EstimatorFamily,
    leverages: &DVector<f64>,
    m: &DMatrix<f64>,
    pm: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let scale = family.row_scale(leverages)?;
    let mut out = pm.clone();
    for (mut oc, mc) in out.column_iter_mut().zip(m.column_iter()) {
        for i in 0..oc.len() {
            let d = leverages[i];
            let x = mc[i];
            oc[i] = match family {
                EstimatorFamily::KClass(k) => (1.0 - k) * x + k * oc[i],
                EstimatorFamily::Lambda1(lambda) | EstimatorFamily::Lambda2(lambda) => {
                    oc[i] - lambda * d * x
                }
                EstimatorFamily::Omega1(omega) | EstimatorFamily::Omega2(omega) => {
                    oc[i] - d * x + omega * x
                }
            };
        }
    }
    if let Some(s) = scale {
        scale_rows(&mut out, &s);
    }
    Ok(out)
}

/// `C' · m` without forming `C`.
///
/// For the symmetric families this coincides with `C · m`; the λ1/ω1
/// families apply their row division before the projection.
pub fn apply_c(
    family: EstimatorFamily,
    decomp: &ProjectionDecomposition,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_rows(decomp, m)?;
    let leverages = decomp.leverages();
    match family.row_scale(leverages)? {
        None => combine_forward(family, leverages, m, &decomp.project(m)),
        Some(s) => {
            let mut scaled = m.clone();
            scale_rows(&mut scaled, &s);
            // The symmetric core of λ1 is the λ2 form, of ω1 the ω2 form.
            let core = match family {
                EstimatorFamily::Lambda1(v) => EstimatorFamily::Lambda2(v),
                EstimatorFamily::Omega1(v) => EstimatorFamily::Omega2(v),
                other => other,
            };
            combine_forward(core, leverages, &scaled, &decomp.project(&scaled))
        }
    }
}

/// `C · m`, the instrument matrix `X̂ = C X` when `m = X`.
pub fn apply_c_forward(
    family: EstimatorFamily,
    decomp: &ProjectionDecomposition,
    m: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_rows(decomp, m)?;
    combine_forward(family, decomp.leverages(), m, &decomp.project(m))
}

/// Divisor used for the residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDivisor {
    #[default]
    N,
    NMinusL,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// Endogenous coefficients first, then controls (raw mode only).
    pub beta_hat: DVector<f64>,
    pub se: DVector<f64>,
    pub sigma2_hat: f64,
    /// Condition estimate of `X'C'X`.
    pub cond: f64,
    pub n_used: usize,
}

/// One input mode of a dataset, ready for repeated estimation: the
/// regressors, the decomposition of the instrument space, and `P_Z [X y]`.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    x: DMatrix<f64>,
    y: DVector<f64>,
    decomp: ProjectionDecomposition,
    /// `[X y]` and its projection, column `c` holding `y`.
    xy: DMatrix<f64>,
    pxy: DMatrix<f64>,
}

impl PreparedInputs {
    /// Raw mode: `X = [X* W]`, `Z = [Z* W]`.
    pub fn raw(data: &DesignData) -> Result<Self> {
        let stacked = stack(data);
        let decomp = project(&stacked.z)?;
        Ok(Self::from_parts(stacked.x, data.y().clone(), decomp))
    }

    /// Partialled mode: the raw preparation of `(ỹ, X̃, Z̃)`.
    pub fn partialled(data: &DesignData) -> Result<Self> {
        if data.l2() == 0 {
            return Err(IvError::InvalidDesign(
                "partialled input requires at least one control column".into(),
            ));
        }
        let tilde = partial_out(data)?.as_design()?;
        Self::raw(&tilde)
    }

    fn from_parts(x: DMatrix<f64>, y: DVector<f64>, decomp: ProjectionDecomposition) -> Self {
        let c = x.ncols();
        let mut xy = x.clone().insert_column(c, 0.0);
        xy.set_column(c, &y);
        let pxy = decomp.project(&xy);
        Self {
            x,
            y,
            decomp,
            xy,
            pxy,
        }
    }

    pub fn decomposition(&self) -> &ProjectionDecomposition {
        &self.decomp
    }
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    /// Column count of `X`, i.e. `L` in raw mode and `L1` in partialled mode.
    pub fn l_effective(&self) -> usize {
        self.x.ncols()
    }
}

/// Both input modes of a dataset, each built only when requested.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: Option<PreparedInputs>,
    pub partialled: Option<PreparedInputs>,
}

impl PreparedData {
    pub fn new(data: &DesignData, raw: bool, partialled: bool) -> Result<Self> {
        Ok(Self {
            raw: if raw { Some(PreparedInputs::raw(data)?) } else { None },
            partialled: if partialled {
                Some(PreparedInputs::partialled(data)?)
            } else {
                None
            },
        })
    }

    pub fn for_mode(&self, mode: InputMode) -> Result<&PreparedInputs> {
        match mode {
            InputMode::Raw => self.raw.as_ref(),
            InputMode::Partialled => self.partialled.as_ref(),
        }
        .ok_or_else(|| IvError::State(format!("{mode:?} inputs were not prepared")))
    }
}

/// Options that change the reported variance but never `beta_hat`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateOptions {
    pub divisor: VarianceDivisor,
}

/// Evaluates `spec` on already prepared inputs of the matching mode.
pub fn estimate_prepared(
    family: EstimatorFamily,
    inputs: &PreparedInputs,
    options: EstimateOptions,
) -> Result<EstimateResult> {
    let n = inputs.x.nrows();
    let c = inputs.x.ncols();
    let cxy = combine_forward(family, inputs.decomp.leverages(), &inputs.xy, &inputs.pxy)?;
    let x_hat = cxy.columns(0, c);

    // X'C'X = (CX)'X and X'C'y = (CX)'y.
    let gram = x_hat.tr_mul(&inputs.x);
    let rhs = x_hat.tr_mul(&inputs.y);
    let (beta, cond) = solve_small(&gram, &DMatrix::from_column_slice(c, 1, rhs.as_slice()))?;
    let beta_hat = beta.column(0).into_owned();

    let resid = &inputs.y - &inputs.x * &beta_hat;
    let divisor = match options.divisor {
        VarianceDivisor::N => n as f64,
        VarianceDivisor::NMinusL => (n - c) as f64,
    };
    let sigma2_hat = resid.norm_squared() / divisor;
    let se = sandwich_se(&gram, &x_hat.into_owned(), sigma2_hat)?;

    Ok(EstimateResult {
        beta_hat,
        se,
        sigma2_hat,
        cond,
        n_used: n,
    })
}

/// Homoskedastic just-identified IV standard errors with instrument
/// `X̂ = CX`: `σ̂² A⁻¹ (X̂'X̂) A⁻ᵀ` with `A = X̂'X`.
fn sandwich_se(gram: &DMatrix<f64>, x_hat: &DMatrix<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let inv = invert_small(gram)?;
    let meat = x_hat.tr_mul(x_hat);
    let cov = &inv * meat * inv.transpose() * sigma2;
    Ok(DVector::from_iterator(
        cov.nrows(),
        cov.diagonal().iter().map(|v| v.max(0.0).sqrt()),
    ))
}

/// Estimates `spec` on `data`, partialling out the controls first in
/// partialled mode.
pub fn estimate(spec: &EstimatorSpec, data: &DesignData) -> Result<EstimateResult> {
    estimate_with(spec, data, EstimateOptions::default())
}

pub fn estimate_with(
    spec: &EstimatorSpec,
    data: &DesignData,
    options: EstimateOptions,
) -> Result<EstimateResult> {
    let inputs = match spec.input_mode {
        InputMode::Raw => PreparedInputs::raw(data)?,
        InputMode::Partialled => PreparedInputs::partialled(data)?,
    };
    estimate_prepared(spec.family, &inputs, options)
}

/// Standard errors for an already computed estimate, evaluated from scratch.
/// Matches the `se` field of [`estimate`].
pub fn standard_errors(
    spec: &EstimatorSpec,
    data: &DesignData,
    beta_hat: &DVector<f64>,
    sigma2_hat: f64,
) -> Result<DVector<f64>> {
    let inputs = match spec.input_mode {
        InputMode::Raw => PreparedInputs::raw(data)?,
        InputMode::Partialled => PreparedInputs::partialled(data)?,
    };
    if beta_hat.len() != inputs.l_effective() {
        return Err(IvError::Dimension {
            block: "beta_hat",
            expected: inputs.l_effective(),
            found: beta_hat.len(),
        });
    }
    let x_hat = apply_c_forward(spec.family, &inputs.decomp, &inputs.x)?;
    let gram = x_hat.tr_mul(&inputs.x);
    sandwich_se(&gram, &x_hat, sigma2_hat)
}

/// Brute-force JIVE1: each row's first-stage fit comes from an explicit
/// regression on the other `N - 1` rows, then `(X̂'X)^{-1} X̂'y`.
pub fn jive1_loo_oracle(data: &DesignData) -> Result<DVector<f64>> {
    let stacked = stack(data);
    let (n, k) = stacked.z.shape();
    let l = stacked.x.ncols();
    let mut x_hat = DMatrix::<f64>::zeros(n, l);
    for i in 0..n {
        let z_minus = stacked.z.clone().remove_row(i);
        let x_minus = stacked.x.clone().remove_row(i);
        let svd = z_minus.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = (n.max(k) as f64) * f64::EPSILON * smax;
        if svd.rank(tol) < k {
            return Err(IvError::OracleInfeasible { row: i });
        }
        let pi_hat = svd
            .solve(&x_minus, tol)
            .map_err(|_| IvError::OracleInfeasible { row: i })?;
        let fitted = stacked.z.row(i) * pi_hat;
        x_hat.set_row(i, &fitted);
    }
    let gram = x_hat.tr_mul(&stacked.x);
    let rhs = x_hat.tr_mul(data.y());
    let (beta, _) = solve_small(&gram, &DMatrix::from_column_slice(l, 1, rhs.as_slice()))?;
    Ok(beta.column(0).into_owned())
}
