//! Data model for the structural/first-stage system and the projection
//! primitives every estimator builds on.
//!
//! `P_Z` is never materialized: a [`ProjectionDecomposition`] holds an
//! orthonormal basis `Q` of `col(Z)`, so `P_Z m = Q (Q' m)` and the
//! leverages are the squared row norms of `Q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{IvError, Result};
use crate::linalg::pivoted_qr;

/// Default advisory margin: rows with leverage above `1 - 0.05` raise the flag.
pub const DEFAULT_BA_THRESHOLD: f64 = 0.05;

/// Raw observation bundle: outcome, endogenous regressors, controls and
/// excluded instruments. When controls are present the first column is
/// expected to be the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    y: DVector<f64>,
    x_star: DMatrix<f64>,
    w: DMatrix<f64>,
    z_star: DMatrix<f64>,
}

impl DesignData {
    pub fn new(
        y: DVector<f64>,
        x_star: DMatrix<f64>,
        w: DMatrix<f64>,
        z_star: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        for (block, rows) in [
            ("endogenous regressors", x_star.nrows()),
            ("controls", w.nrows()),
            ("instruments", z_star.nrows()),
        ] {
            if rows != n {
                return Err(IvError::Dimension {
                    block,
                    expected: n,
                    found: rows,
                });
            }
        }
        let (l1, l2, k1) = (x_star.ncols(), w.ncols(), z_star.ncols());
        if l1 == 0 {
            return Err(IvError::InvalidDesign(
                "at least one endogenous regressor is required".into(),
            ));
        }
        if k1 < l1 {
            return Err(IvError::InvalidDesign(format!(
                "under-identified: {k1} instruments for {l1} endogenous regressors"
            )));
        }
        if n <= k1 + l2 {
            return Err(IvError::InvalidDesign(format!(
                "need more observations than first-stage regressors: N = {n}, K1 + L2 = {}",
                k1 + l2
            )));
        }
        check_finite("outcome", y.as_slice(), n)?;
        check_finite("endogenous regressors", x_star.as_slice(), n)?;
        check_finite("controls", w.as_slice(), n)?;
        check_finite("instruments", z_star.as_slice(), n)?;
        Ok(Self {
            y,
            x_star,
            w,
            z_star,
        })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn x_star(&self) -> &DMatrix<f64> {
        &self.x_star
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn z_star(&self) -> &DMatrix<f64> {
        &self.z_star
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn l1(&self) -> usize {
        self.x_star.ncols()
    }
    pub fn l2(&self) -> usize {
        self.w.ncols()
    }
    pub fn k1(&self) -> usize {
        self.z_star.ncols()
    }
    /// `L = L1 + L2`.
    pub fn l_total(&self) -> usize {
        self.l1() + self.l2()
    }
    /// `K = K1 + L2`.
    pub fn k_total(&self) -> usize {
        self.k1() + self.l2()
    }

    /// Replaces the outcome, keeping the regressor blocks.
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(y, self.x_star.clone(), self.w.clone(), self.z_star.clone())
    }
}

fn check_finite(block: &'static str, values: &[f64], n: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(IvError::NonFinite {
            block,
            row: idx % n.max(1),
            col: idx / n.max(1),
        }),
    }
}

/// `X = [X* W]` and `Z = [Z* W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDesign {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub l: usize,
    pub k: usize,
}

fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let n = left.nrows();
    let mut out = DMatrix::zeros(n, left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Concatenates the blocks in the order `[endogenous | controls]` and
/// `[instruments | controls]`.
pub fn stack(data: &DesignData) -> StackedDesign {
    let x = hstack(&data.x_star, &data.w);
    let z = hstack(&data.z_star, &data.w);
    StackedDesign {
        l: x.ncols(),
        k: z.ncols(),
        x,
        z,
    }
}

/// Orthonormal basis of an instrument column space plus per-row leverages.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionDecomposition {
    basis: DMatrix<f64>,
    leverages: DVector<f64>,
}

impl ProjectionDecomposition {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    pub fn leverages(&self) -> &DVector<f64> {
        &self.leverages
    }
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// `P_Z m` as `Q (Q' m)`.
    pub fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let coords = self.basis.tr_mul(m);
        &self.basis * coords
    }

    /// `(I - P_Z) m`.
    pub fn annihilate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m - self.project(m)
    }

    pub fn project_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        let coords = self.basis.tr_mul(v);
        &self.basis * coords
    }
}

/// Builds the projection onto `col(z)`. A rank-deficient `z` is an error.
pub fn project(z: &DMatrix<f64>) -> Result<ProjectionDecomposition> {
    project_with(z, false)
}

/// As [`project`]; with `allow_rank_deficient` the reduced basis is returned
/// instead of an error.
pub fn project_with(z: &DMatrix<f64>, allow_rank_deficient: bool) -> Result<ProjectionDecomposition> {
    let (n, k) = z.shape();
    if n < k {
        return Err(IvError::InvalidDesign(format!(
            "projection needs N >= K, got N = {n}, K = {k}"
        )));
    }
    let qr = pivoted_qr(z);
    if qr.rank < k && !allow_rank_deficient {
        return Err(IvError::RankDeficient {
            block: "instruments",
            rank: qr.rank,
            cols: k,
        });
    }
    let basis = qr.q;
    let mut leverages = DVector::<f64>::zeros(n);
    for col in basis.column_iter() {
        for (d, v) in leverages.iter_mut().zip(col.iter()) {
            *d += v * v;
        }
    }
    leverages.apply(|d| *d = d.clamp(0.0, 1.0));
    Ok(ProjectionDecomposition { basis, leverages })
}

/// Variables with the controls partialled out.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialledData {
    pub y_t: DVector<f64>,
    pub x_t: DMatrix<f64>,
    pub z_t: DMatrix<f64>,
    /// `(N, L1, K1)` of the source design.
    pub source_dims: (usize, usize, usize),
}

impl PartialledData {
    /// The partialled variables as a control-free design, which is how the
    /// partialled-input estimators consume them.
    pub fn as_design(&self) -> Result<DesignData> {
        DesignData::new(
            self.y_t.clone(),
            self.x_t.clone(),
            DMatrix::zeros(self.y_t.len(), 0),
            self.z_t.clone(),
        )
    }
}

/// Residualizes `y`, `X*` and `Z*` on `W`.
pub fn partial_out(data: &DesignData) -> Result<PartialledData> {
    if data.l2() == 0 {
        return Err(IvError::InvalidDesign(
            "partialling requires at least one control column".into(),
        ));
    }
    let w_proj = project(&data.w).map_err(|e| match e {
        IvError::RankDeficient { rank, cols, .. } => IvError::RankDeficient {
            block: "controls",
            rank,
            cols,
        },
        other => other,
    })?;
    let y_mat = DMatrix::from_column_slice(data.n(), 1, data.y.as_slice());
    let y_t = w_proj.annihilate(&y_mat).column(0).into_owned();
    Ok(PartialledData {
        y_t,
        x_t: w_proj.annihilate(&data.x_star),
        z_t: w_proj.annihilate(&data.z_star),
        source_dims: (data.n(), data.l1(), data.k1()),
    })
}

/// High-leverage diagnostic: flags a design whose largest leverage comes
/// within `threshold` of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverageReport {
    pub max_leverage: f64,
    /// Zero-based row of the largest leverage.
    pub max_index: usize,
    /// `1 - max_leverage`.
    pub margin: f64,
    pub ba_flag: bool,
    pub threshold: f64,
}

pub fn leverage_report(decomp: &ProjectionDecomposition, threshold: f64) -> LeverageReport {
    let (max_index, max_leverage) = decomp
        .leverages
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| {
            if d > best.1 {
                (i, d)
            } else {
                best
            }
        });
    let max_leverage = if max_leverage.is_finite() { max_leverage } else { 0.0 };
    let margin = 1.0 - max_leverage;
    LeverageReport {
        max_leverage,
        max_index,
        margin,
        ba_flag: margin < threshold,
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, l1: usize, l2: usize, k1: usize) -> DesignData {
        let mut s = 17u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let y = DVector::from_fn(n, |_, _| next());
        let x = DMatrix::from_fn(n, l1, |_, _| next());
        let w = DMatrix::from_fn(n, l2, |_, j| if j == 0 { 1.0 } else { next() });
        let z = DMatrix::from_fn(n, k1, |_, _| next());
        DesignData::new(y, x, w, z).unwrap()
    }

    #[test]
    fn stack_adds_column_counts() {
        let s = stack(&data(20, 1, 2, 3));
        assert_eq!((s.l, s.k), (3, 5));
        let s = stack(&data(20, 1, 0, 3));
        assert_eq!((s.l, s.k), (1, 3));
    }

    #[test]
    fn stack_without_controls_is_identity() {
        let d = data(12, 1, 0, 2);
        let s = stack(&d);
        assert_eq!(&s.x, d.x_star());
        assert_eq!(&s.z, d.z_star());
    }

    #[test]
    fn row_mismatch_names_block() {
        let err = DesignData::new(
            DVector::zeros(5),
            DMatrix::zeros(5, 1),
            DMatrix::zeros(4, 1),
            DMatrix::zeros(5, 2),
        )
        .unwrap_err();
        assert!(matches!(err, IvError::Dimension { block: "controls", .. }));
    }

    #[test]
    fn rejects_non_finite_and_underidentified() {
        let mut z = DMatrix::from_element(6, 2, 1.0);
        z[(3, 1)] = f64::NAN;
        let err = DesignData::new(DVector::zeros(6), DMatrix::zeros(6, 1), DMatrix::zeros(6, 0), z)
            .unwrap_err();
        assert_eq!(
            err,
            IvError::NonFinite {
                block: "instruments",
                row: 3,
                col: 1
            }
        );
        let err = DesignData::new(
            DVector::zeros(6),
            DMatrix::zeros(6, 2),
            DMatrix::zeros(6, 0),
            DMatrix::zeros(6, 1),
        )
        .unwrap_err();
        assert!(matches!(err, IvError::InvalidDesign(_)));
    }

    #[test]
    fn intercept_leverage_is_balanced() {
        let p = project(&DMatrix::from_element(4, 1, 1.0)).unwrap();
        assert_eq!(p.rank(), 1);
        for d in p.leverages().iter() {
            assert!((d - 0.25).abs() < 1e-15);
        }
        let rep = leverage_report(&p, DEFAULT_BA_THRESHOLD);
        assert!((rep.max_leverage - 0.25).abs() < 1e-15);
        assert!(!rep.ba_flag);
    }

    #[test]
    fn unit_leverage_rows() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = project(&z).unwrap();
        let d = p.leverages();
        assert!((d[0] - 1.0).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15 && d[2].abs() < 1e-15);
        assert!((d.sum() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn self_fit_row_trips_flag() {
        // N-1 identical rows plus one unique row: the unique row fits itself.
        let mut z = DMatrix::from_element(10, 2, 0.0);
        for i in 0..9 {
            z[(i, 0)] = 1.0;
        }
        z[(9, 1)] = 1.0;
        let rep = leverage_report(&project(&z).unwrap(), DEFAULT_BA_THRESHOLD);
        assert_eq!(rep.max_index, 9);
        assert!((rep.max_leverage - 1.0).abs() < 1e-12);
        assert!(rep.ba_flag);
    }

    #[test]
    fn rank_deficiency_is_reported_or_allowed() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(
            project(&z).unwrap_err(),
            IvError::RankDeficient {
                block: "instruments",
                rank: 1,
                cols: 2
            }
        );
        let p = project_with(&z, true).unwrap();
        assert_eq!(p.rank(), 1);
        assert!((p.leverages().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_partialling_demeans() {
        let d = data(15, 1, 1, 2);
        let p = partial_out(&d).unwrap();
        let mean = d.y().mean();
        for i in 0..15 {
            assert!((p.y_t[i] - (d.y()[i] - mean)).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_regressor_is_untouched() {
        let n = 8;
        let w = DMatrix::from_element(n, 1, 1.0);
        let x = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let z = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 2)) % 5) as f64);
        let d = DesignData::new(DVector::from_element(n, 1.0), x.clone(), w, z).unwrap();
        let p = partial_out(&d).unwrap();
        assert!((p.x_t - x).amax() < 1e-14);
    }

    #[test]
    fn partialling_requires_controls() {
        let d = data(10, 1, 0, 2);
        assert!(partial_out(&d).is_err());
    }

    #[test]
    fn rank_deficient_controls() {
        let n = 10;
        let w = DMatrix::from_fn(n, 2, |_, _| 1.0);
        let d = DesignData::new(
            DVector::from_element(n, 1.0),
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            w,
            DMatrix::from_fn(n, 2, |i, j| (i * i + j) as f64),
        )
        .unwrap();
        assert!(matches!(
            partial_out(&d),
            Err(IvError::RankDeficient { block: "controls", .. })
        ));
    }
}
