//! The three simulation designs: homoskedastic many-instrument,
//! heteroskedastic group fixed effects, and the high-leverage outlier design.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::DesignData;
use crate::error::{IvError, Result};
use crate::estimators::NamedEstimator;

/// Structural slope on the endogenous regressor in every design.
pub const BETA_STAR: f64 = 0.3;

/// Covariance of `(ε, η)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCov {
    pub var_eps: f64,
    pub cov: f64,
    pub var_eta: f64,
}

impl ErrorCov {
    pub const fn new(var_eps: f64, cov: f64, var_eta: f64) -> Self {
        Self {
            var_eps,
            cov,
            var_eta,
        }
    }

    /// `[[0.8, -0.6], [-0.6, 1]]`, used by the homoskedastic and outlier designs.
    pub const BASE: ErrorCov = ErrorCov::new(0.8, -0.6, 1.0);
    /// The "+" group covariance.
    pub const PLUS: ErrorCov = ErrorCov::new(0.25, 0.2, 0.25);
    /// The "−" group covariance.
    pub const MINUS: ErrorCov = ErrorCov::new(0.25, -0.1, 0.25);

    pub fn validate(&self) -> Result<()> {
        let det = self.var_eps * self.var_eta - self.cov * self.cov;
        if !(self.var_eps > 0.0 && self.var_eta > 0.0 && det > 0.0) {
            return Err(IvError::Config(format!(
                "error covariance is not positive definite: {self:?}"
            )));
        }
        Ok(())
    }

    /// Lower Cholesky factor `(a, b, c)` with `ε = a·u`, `η = b·u + c·v`.
    fn cholesky(&self) -> (f64, f64, f64) {
        let a = self.var_eps.sqrt();
        let b = self.cov / a;
        let c = (self.var_eta - b * b).sqrt();
        (a, b, c)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (a, b, c) = self.cholesky();
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        (a * u, b * u + c * v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomoskedasticDesign {
    pub n: usize,
    /// `K`, excluded instruments plus controls.
    pub k_total: usize,
    /// Number of δ-loaded standard-normal controls; `K1 = k_total - l_total`.
    pub l_total: usize,
    pub beta_star: f64,
    pub gamma_star: f64,
    pub pi_star: f64,
    pub delta_star: f64,
    pub error_cov: ErrorCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHetDesign {
    pub setup: u8,
    /// When set, setup 1 gives the big groups "+" and the small groups "−"
    /// (and setup 2 the reverse).
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierDesign {
    pub n: usize,
    pub intercept: bool,
    pub error_cov: ErrorCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SimDesign {
    Homoskedastic(HomoskedasticDesign),
    GroupHet(GroupHetDesign),
    Outlier(OutlierDesign),
}

/// Group sizes of the heteroskedastic design: two groups of 115, then 18 of 15.
pub const GROUP_SIZES: [usize; 20] = [
    115, 115, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15, 15,
];
/// First-stage offset of every group other than group 1.
pub const GROUP_PI: f64 = 0.3;
/// Outlier sample sizes.
pub const OUTLIER_SIZES: [usize; 4] = [101, 401, 901, 1601];

impl SimDesign {
    /// Many-instrument setups 1 (`N=500, K=50, L=10`) and 2 (`N=2000, K=200, L=40`).
    pub fn homoskedastic_setup(setup: u8) -> Result<Self> {
        let (n, k, l, pi, delta) = match setup {
            1 => (500, 50, 10, 0.08, 0.05),
            2 => (2000, 200, 40, 0.02, 0.02),
            other => return Err(IvError::Config(format!("no homoskedastic setup {other}"))),
        };
        Ok(Self::Homoskedastic(HomoskedasticDesign {
            n,
            k_total: k,
            l_total: l,
            beta_star: BETA_STAR,
            gamma_star: 1.0,
            pi_star: pi,
            delta_star: delta,
            error_cov: ErrorCov::BASE,
        }))
    }

    pub fn group_het(setup: u8, flip: bool) -> Result<Self> {
        if !(setup == 1 || setup == 2) {
            return Err(IvError::Config(format!("no heteroskedastic setup {setup}")));
        }
        Ok(Self::GroupHet(GroupHetDesign { setup, flip }))
    }

    pub fn outlier(n: usize) -> Result<Self> {
        let d = Self::Outlier(OutlierDesign {
            n,
            intercept: false,
            error_cov: ErrorCov::BASE,
        });
        d.validate()?;
        Ok(d)
    }

    pub fn label(&self) -> String {
        match self {
            Self::Homoskedastic(h) => format!("homoskedastic-n{}-k{}-l{}", h.n, h.k_total, h.l_total),
            Self::GroupHet(g) => format!("grouphet-setup{}{}", g.setup, if g.flip { "-flipped" } else { "" }),
            Self::Outlier(o) => format!("outlier-n{}", o.n),
        }
    }

    /// Estimators reported for this design by default.
    pub fn default_estimators(&self) -> Vec<NamedEstimator> {
        use NamedEstimator::*;
        match self {
            Self::Homoskedastic(_) => vec![
                Ols, Tsls, Nagar, Auk, Jive1, Jive2, Tsji1, Tsji2, Uijive1, Uijive2, Uojive1, Uojive2,
            ],
            Self::GroupHet(_) => vec![
                Ols, Tsls, Nagar, Auk, Jive1, Jive2, Tsji1, Tsji2, Uojive1, Uojive2,
            ],
            Self::Outlier(_) => vec![Tsji1, Tsji2, Uojive1, Uojive2],
        }
    }

    pub fn beta_star(&self) -> f64 {
        match self {
            Self::Homoskedastic(h) => h.beta_star,
            _ => BETA_STAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Homoskedastic(h) => {
                h.error_cov.validate()?;
                if h.k_total <= h.l_total {
                    return Err(IvError::Config(format!(
                        "k_total ({}) must exceed l_total ({})",
                        h.k_total, h.l_total
                    )));
                }
                // Regressions carry an extra intercept column in W.
                if h.n <= h.k_total + 2 {
                    return Err(IvError::Config(format!(
                        "n ({}) too small for K = {}",
                        h.n, h.k_total
                    )));
                }
                Ok(())
            }
            Self::GroupHet(g) => {
                if g.setup == 1 || g.setup == 2 {
                    Ok(())
                } else {
                    Err(IvError::Config(format!("no heteroskedastic setup {}", g.setup)))
                }
            }
            Self::Outlier(o) => {
                o.error_cov.validate()?;
                let block = outlier_block(o.n)?;
                if block < 5 {
                    return Err(IvError::Config(format!(
                        "outlier design needs sqrt(n - 1) >= 5, got {block}"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn outlier_block(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(IvError::Config("outlier design needs n >= 2".into()));
    }
    let s = ((n - 1) as f64).sqrt().round() as usize;
    if s * s != n - 1 {
        return Err(IvError::Config(format!(
            "outlier design needs n - 1 to be a perfect square, got n = {n}"
        )));
    }
    Ok(s)
}

/// One simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDraw {
    pub data: DesignData,
    /// True coefficients in raw-mode order: `β*` first, then the controls.
    pub beta_true: DVector<f64>,
    /// Realized concentration: `Σ μ_i² / σ²_η,i` over the first-stage means.
    pub r0: f64,
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Draws one dataset from `design`.
pub fn generate<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<RoundDraw> {
    design.validate()?;
    match design {
        SimDesign::Homoskedastic(h) => generate_homoskedastic(h, rng),
        SimDesign::GroupHet(g) => generate_group_het(g, rng),
        SimDesign::Outlier(o) => generate_outlier(o, rng),
    }
}

fn generate_homoskedastic<R: Rng + ?Sized>(h: &HomoskedasticDesign, rng: &mut R) -> Result<RoundDraw> {
    let n = h.n;
    let k1 = h.k_total - h.l_total;
    let lw = h.l_total;
    let z = normal_matrix(rng, n, k1);
    let w_loaded = normal_matrix(rng, n, lw);

    let mut x = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut r0 = 0.0;
    for i in 0..n {
        let mean = h.pi_star * z.row(i).sum() + h.delta_star * w_loaded.row(i).sum();
        let (eps, eta) = h.error_cov.draw(rng);
        x[(i, 0)] = mean + eta;
        y[i] = h.beta_star * x[(i, 0)] + h.gamma_star * w_loaded.row(i).sum() + eps;
        r0 += mean * mean;
    }
    r0 /= h.error_cov.var_eta;

    let mut w = DMatrix::from_element(n, lw + 1, 1.0);
    w.columns_mut(1, lw).copy_from(&w_loaded);

    let mut beta_true = DVector::from_element(lw + 2, h.gamma_star);
    beta_true[0] = h.beta_star;
    beta_true[1] = 0.0;
    Ok(RoundDraw {
        data: DesignData::new(y, x, w, z)?,
        beta_true,
        r0,
    })
}

/// Zero-based group index of each row.
pub fn group_labels() -> Vec<usize> {
    GROUP_SIZES
        .iter()
        .enumerate()
        .flat_map(|(g, &size)| std::iter::repeat_n(g, size))
        .collect()
}

fn generate_group_het<R: Rng + ?Sized>(g: &GroupHetDesign, rng: &mut R) -> Result<RoundDraw> {
    let groups = group_labels();
    let n = groups.len();
    let ng = GROUP_SIZES.len();

    // Setup 1: small groups "+", big groups "−"; setup 2 reverses it.
    let small_plus = (g.setup == 1) != g.flip;
    let (big_cov, small_cov) = if small_plus {
        (ErrorCov::MINUS, ErrorCov::PLUS)
    } else {
        (ErrorCov::PLUS, ErrorCov::MINUS)
    };

    let mut z = DMatrix::zeros(n, ng - 1);
    let mut x = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut r0 = 0.0;
    for (i, &grp) in groups.iter().enumerate() {
        if grp > 0 {
            z[(i, grp - 1)] = 1.0;
        }
        let cov = if GROUP_SIZES[grp] > 15 { big_cov } else { small_cov };
        let mean = if grp > 0 { GROUP_PI } else { 0.0 };
        let (eps, eta) = cov.draw(rng);
        x[(i, 0)] = mean + eta;
        y[i] = BETA_STAR * x[(i, 0)] + eps;
        r0 += mean * mean / cov.var_eta;
    }
    let w = DMatrix::from_element(n, 1, 1.0);
    Ok(RoundDraw {
        data: DesignData::new(y, x, w, z)?,
        beta_true: DVector::from_vec(vec![BETA_STAR, 0.0]),
        r0,
    })
}

/// Instrument matrix of the outlier design: row 0 carries `(n-1)^{1/3}` in
/// column 0; every following block of `sqrt(n-1)` rows starts with the
/// 5×5 identity and is zero afterwards.
pub fn outlier_instruments(n: usize) -> Result<DMatrix<f64>> {
    let block = outlier_block(n)?;
    if block < 5 {
        return Err(IvError::Config(format!(
            "outlier design needs sqrt(n - 1) >= 5, got {block}"
        )));
    }
    let mut z = DMatrix::zeros(n, 5);
    z[(0, 0)] = ((n - 1) as f64).cbrt();
    for i in 1..n {
        let pos = (i - 1) % block;
        if pos < 5 {
            z[(i, pos)] = 1.0;
        }
    }
    Ok(z)
}

fn generate_outlier<R: Rng + ?Sized>(o: &OutlierDesign, rng: &mut R) -> Result<RoundDraw> {
    let n = o.n;
    let z = outlier_instruments(n)?;
    let eps_scale = (n as f64).cbrt();
    let mut x = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut r0 = 0.0;
    for i in 0..n {
        // π* = 1 on every instrument.
        let mean = z.row(i).sum();
        let (mut eps, eta) = o.error_cov.draw(rng);
        if i == 0 {
            eps *= eps_scale;
        }
        x[(i, 0)] = mean + eta;
        y[i] = BETA_STAR * x[(i, 0)] + eps;
        r0 += mean * mean;
    }
    r0 /= o.error_cov.var_eta;
    let (w, beta_true) = if o.intercept {
        (
            DMatrix::from_element(n, 1, 1.0),
            DVector::from_vec(vec![BETA_STAR, 0.0]),
        )
    } else {
        (DMatrix::zeros(n, 0), DVector::from_vec(vec![BETA_STAR]))
    };
    Ok(RoundDraw {
        data: DesignData::new(y, x, w, z)?,
        beta_true,
        r0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{project, stack};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn homoskedastic_dimensions() {
        let d = SimDesign::homoskedastic_setup(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = generate(&d, &mut rng).unwrap();
        assert_eq!(draw.data.n(), 500);
        assert_eq!(draw.data.k1(), 40);
        assert_eq!(draw.data.l2(), 11);
        assert_eq!(draw.beta_true.len(), draw.data.l_total());
    }

    #[test]
    fn homoskedastic_r0_matches_table_in_expectation() {
        // E[r0] = N (π² K1 + δ² L) = 140.5 for setup 1.
        let d = SimDesign::homoskedastic_setup(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mean: f64 = (0..200).map(|_| generate(&d, &mut rng).unwrap().r0).sum::<f64>() / 200.0;
        assert!((mean - 140.5).abs() < 3.0, "mean r0 {mean}");
    }

    #[test]
    fn group_design_has_twenty_instrument_columns() {
        let d = SimDesign::group_het(1, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = generate(&d, &mut rng).unwrap();
        let s = stack(&draw.data);
        assert_eq!(s.k, 20);
        assert_eq!(project(&s.z).unwrap().rank(), 20);
        assert_eq!(draw.data.n(), 500);
    }

    #[test]
    fn group_covariance_assignment() {
        // Sample covariance of (ε, η) by group type separates the two setups.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let groups = group_labels();
        let mut big = 0.0;
        let mut small = 0.0;
        let reps = 40;
        for _ in 0..reps {
            let draw = generate(&SimDesign::group_het(1, false).unwrap(), &mut rng).unwrap();
            let x = draw.data.x_star();
            let y = draw.data.y();
            for (i, &g) in groups.iter().enumerate() {
                let eta = x[(i, 0)] - if g > 0 { GROUP_PI } else { 0.0 };
                let eps = y[i] - BETA_STAR * x[(i, 0)];
                if g < 2 {
                    big += eps * eta / 230.0;
                } else {
                    small += eps * eta / 270.0;
                }
            }
        }
        big /= reps as f64;
        small /= reps as f64;
        assert!((small - 0.2).abs() < 0.03, "small {small}");
        assert!((big + 0.1).abs() < 0.03, "big {big}");
    }

    #[test]
    fn outlier_structure_n101() {
        let z = outlier_instruments(101).unwrap();
        assert!((z[(0, 0)] - 100f64.cbrt()).abs() < 1e-12);
        let mut identity_blocks = 0;
        let mut zero_blocks = 0;
        for b in 0..20 {
            let rows = z.rows(1 + 5 * b, 5);
            if rows == DMatrix::<f64>::identity(5, 5) {
                identity_blocks += 1;
            } else if rows.iter().all(|v| *v == 0.0) {
                zero_blocks += 1;
            }
        }
        assert_eq!((identity_blocks, zero_blocks), (10, 10));
    }

    #[test]
    fn outlier_rejects_non_square() {
        assert!(SimDesign::outlier(100).is_err());
        assert!(SimDesign::outlier(17).is_err());
        assert!(SimDesign::outlier(26).is_ok());
    }

    #[test]
    fn bad_homoskedastic_config() {
        let mut d = match SimDesign::homoskedastic_setup(1).unwrap() {
            SimDesign::Homoskedastic(h) => h,
            _ => unreachable!(),
        };
        d.k_total = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            generate(&SimDesign::Homoskedastic(d), &mut rng),
            Err(IvError::Config(_))
        ));
    }
}
