mod common;

use common::{normal, random_design, rng};
use ivkit::approx_bias::{
    bias_coefficient, named_coefficient, vanishing_bound, vanishing_probe, EXACT_TOL,
};
use ivkit::{partial_out, project, stack, DesignData, EstimatorFamily, NamedEstimator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn exact_zero_families_over_random_designs() {
    let mut r = rng(1000);
    for draw in 0..1000 {
        let l1 = r.random_range(1..=2);
        let l2 = r.random_range(1..=4);
        let k1 = r.random_range(l1..=40 - l2);
        let n = r.random_range(k1 + l2 + 2..=300);
        let data = random_design(&mut r, n, l1, l2, k1);
        let (k, l) = (data.k_total() as f64, data.l_total() as f64);

        for name in [NamedEstimator::Auk, NamedEstimator::Tsji2, NamedEstimator::Uojive2] {
            let c = named_coefficient(name, &data).unwrap();
            assert!(c.value.abs() <= EXACT_TOL, "draw {draw}: {name} = {}", c.value);
        }
        let jive2 = named_coefficient(NamedEstimator::Jive2, &data).unwrap();
        assert_eq!(jive2.value, -l - 1.0, "draw {draw}");

        let lev = project(&stack(&data).z).unwrap().leverages().clone();
        let a = bias_coefficient(EstimatorFamily::KClass(1.0), &lev, n, l as usize).unwrap();
        let b = bias_coefficient(EstimatorFamily::Lambda2(0.0), &lev, n, l as usize).unwrap();
        assert_eq!(a.value, k - l - 1.0);
        assert_eq!(b.value, k - l - 1.0);

        let tilde = project(&partial_out(&data).unwrap().z_t).unwrap();
        let max_d = tilde.leverages().max();
        let uijive1 = named_coefficient(NamedEstimator::Uijive1, &data).unwrap();
        let bound = vanishing_bound(k1, l1, n, max_d);
        assert!(uijive1.value.abs() <= bound, "draw {draw}: {} > {bound}", uijive1.value);
    }
}

#[test]
fn auk_cancels_on_a_grid() {
    for n in (20..=400).step_by(19) {
        for k in 2..n.min(60) {
            for l in 1..k {
                let kk = (n - l - 1) as f64 / (n - k) as f64;
                let lev = DVector::from_element(n, k as f64 / n as f64);
                let c = bias_coefficient(EstimatorFamily::KClass(kk), &lev, n, l).unwrap();
                assert!(c.value.abs() <= EXACT_TOL, "N={n} K={k} L={l}: {}", c.value);
            }
        }
    }
}

/// Balanced groups: one excluded baseline group, `groups - 1` dummies,
/// intercept as the only control.
fn balanced_groups(n: usize, groups: usize, seed: u64) -> DesignData {
    let mut r = rng(seed);
    let size = n / groups;
    let z = DMatrix::from_fn(n, groups - 1, |i, j| if i / size == j + 1 { 1.0 } else { 0.0 });
    let w = DMatrix::from_element(n, 1, 1.0);
    let x = z.column_sum() * 0.3 + normal(&mut r, n, 1).column(0);
    let y = &x * 0.3 + normal(&mut r, n, 1).column(0);
    DesignData::new(y, DMatrix::from_column_slice(n, 1, x.as_slice()), w, z).unwrap()
}

#[test]
fn vanishing_probe_on_growing_group_designs() {
    let seq: Vec<_> = [100, 400, 1600].iter().map(|n| balanced_groups(*n, 5, *n as u64)).collect();

    let uijive1 = vanishing_probe(NamedEstimator::Uijive1, &seq).unwrap();
    for w in uijive1.windows(2) {
        assert!(w[1].1.value.abs() < w[0].1.value.abs());
    }
    for (d, (n, c)) in seq.iter().zip(&uijive1) {
        let tilde = project(&partial_out(d).unwrap().z_t).unwrap();
        let bound = vanishing_bound(d.k1(), d.l1(), *n, tilde.leverages().max());
        assert!(c.value.abs() <= bound, "N={n}: {} > {bound}", c.value);
    }

    for (_, c) in vanishing_probe(NamedEstimator::Uojive2, &seq).unwrap() {
        assert!(c.value.abs() <= EXACT_TOL);
    }
    for (d, (_, c)) in seq.iter().zip(vanishing_probe(NamedEstimator::Jive1, &seq).unwrap()) {
        assert!((c.value + d.l_total() as f64 + 1.0).abs() < 1e-9);
    }
}

#[test]
fn vanishing_probe_rejects_unsorted_sizes() {
    let seq = vec![balanced_groups(400, 5, 1), balanced_groups(100, 5, 2)];
    assert!(vanishing_probe(NamedEstimator::Uijive1, &seq).is_err());
}
