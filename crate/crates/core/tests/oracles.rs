mod common;

use common::{dense_projector, random_design, rel_diff, rng};
use ivkit::design::{leverage_report, DEFAULT_BA_THRESHOLD};
use ivkit::estimators::{resolve_for, NamedEstimator};
use ivkit::montecarlo::outlier_instruments;
use ivkit::{estimate, jive1_loo_oracle, project, DesignData, IvError};
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn outlier_leverages_match_explicit_hat_matrix() {
    let z = outlier_instruments(101).unwrap();
    let hat = dense_projector(&z);
    let p = project(&z).unwrap();
    for i in 0..101 {
        assert!((p.leverages()[i] - hat[(i, i)]).abs() < 1e-12, "row {i}");
    }
    // Rows after the first come in blocks of five: identity, then zeros.
    for b in 0..20 {
        let block = z.rows(1 + 5 * b, 5);
        let expect = if b % 2 == 0 { DMatrix::identity(5, 5) } else { DMatrix::zeros(5, 5) };
        assert_eq!(block, expect, "block {b}");
    }
    for i in (1..101).filter(|i| z.row(*i).iter().all(|v| *v == 0.0)) {
        assert_eq!(p.leverages()[i], 0.0);
    }
    // The contaminated row carries (N-1)^{2/3} / ((N-1)^{2/3} + 10).
    let w = 100f64.powf(2.0 / 3.0);
    let report = leverage_report(&p, DEFAULT_BA_THRESHOLD);
    assert_eq!(report.max_index, 0);
    assert!((report.max_leverage - w / (w + 10.0)).abs() < 1e-12);
}

fn jive1(data: &DesignData) -> ivkit::Result<nalgebra::DVector<f64>> {
    let spec = resolve_for(NamedEstimator::Jive1, data)?.spec;
    estimate(&spec, data).map(|r| r.beta_hat)
}

#[test]
fn jive1_closed_form_matches_leave_one_out() {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l1 = r.random_range(1..=2);
        let l2 = r.random_range(0..=2);
        let k1 = r.random_range(l1..=6);
        let n = r.random_range(k1 + l2 + 8..=60);
        let data = random_design(&mut r, n, l1, l2, k1);
        let closed = jive1(&data).unwrap();
        let oracle = jive1_loo_oracle(&data).unwrap();
        worst = worst.max(rel_diff(&closed, &oracle));
    }
    assert!(worst < 1e-8, "max relative discrepancy {worst:e}");
}

#[test]
fn jive1_small_instance() {
    let data = random_design(&mut rng(30), 30, 1, 0, 4);
    let closed = jive1(&data).unwrap();
    let oracle = jive1_loo_oracle(&data).unwrap();
    assert!(rel_diff(&closed, &oracle) < 1e-8);
}

#[test]
fn duplicated_rows_halve_leverages_and_agree() {
    let base = random_design(&mut rng(8), 12, 1, 1, 3);
    let dup = |m: &DMatrix<f64>| {
        let n = m.nrows();
        DMatrix::from_fn(2 * n, m.ncols(), |i, j| m[(i % n, j)])
    };
    let y = dup(&DMatrix::from_column_slice(12, 1, base.y().as_slice())).column(0).into_owned();
    let data = DesignData::new(y, dup(base.x_star()), dup(base.w()), dup(base.z_star())).unwrap();

    let lev_base = project(&ivkit::stack(&base).z).unwrap().leverages().clone();
    let lev_dup = project(&ivkit::stack(&data).z).unwrap().leverages().clone();
    for i in 0..24 {
        assert!((lev_dup[i] - lev_base[i % 12] / 2.0).abs() < 1e-12);
    }
    let closed = jive1(&data).unwrap();
    let oracle = jive1_loo_oracle(&data).unwrap();
    assert!(rel_diff(&closed, &oracle) < 1e-8);
}

#[test]
fn near_exact_fit_paths_agree_or_both_fail() {
    // N = K + 1: every leave-one-out fit is exactly determined.
    let mut r = rng(77);
    for _ in 0..20 {
        let data = random_design(&mut r, 6, 1, 1, 4);
        let closed = jive1(&data);
        let oracle = jive1_loo_oracle(&data);
        match (closed, oracle) {
            (Ok(a), Ok(b)) => assert!(rel_diff(&a, &b) < 1e-6, "{a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => panic!("paths disagree: {a:?} vs {b:?}"),
        }
    }
}

#[test]
fn self_fit_row_is_flagged() {
    let mut z = DMatrix::from_element(10, 1, 1.0);
    z[(4, 0)] = 0.0;
    let z = DMatrix::from_fn(10, 2, |i, j| match j {
        0 => z[(i, 0)],
        _ => if i == 4 { 1.0 } else { 0.0 },
    });
    let p = project(&z).unwrap();
    let rep = leverage_report(&p, DEFAULT_BA_THRESHOLD);
    assert_eq!(rep.max_index, 4);
    assert!((rep.max_leverage - 1.0).abs() < 1e-12);
    assert!(rep.ba_flag);

    // Rank lost when row 4 is removed: no leave-one-out fit exists.
    let x = z.column(0) * 2.0 + z.column(1);
    let y = x.clone() * 0.3;
    let x = DMatrix::from_column_slice(10, 1, x.as_slice());
    let data = DesignData::new(y, x, DMatrix::zeros(10, 0), z).unwrap();
    assert!(matches!(jive1_loo_oracle(&data), Err(IvError::OracleInfeasible { row: 4 })));
    assert!(matches!(jive1(&data), Err(IvError::SingularWeight { row: 4, .. })));
}
