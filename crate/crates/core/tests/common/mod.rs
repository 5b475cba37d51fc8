#![allow(dead_code)]

use ivkit::DesignData;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal))
}

/// Random design with an intercept as the first control when `l2 > 0`.
/// The endogenous columns load on the instruments and share the error.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, l1: usize, l2: usize, k1: usize) -> DesignData {
    let z = normal(rng, n, k1);
    let mut w = normal(rng, n, l2);
    if l2 > 0 {
        w.column_mut(0).fill(1.0);
    }
    let eps = normal(rng, n, 1).column(0).into_owned();
    let pi = normal(rng, k1, l1) * 0.5;
    let x = &z * &pi + normal(rng, n, l1) + &eps * DMatrix::from_element(1, l1, 0.5);
    let beta = DVector::from_fn(l1, |i, _| 0.3 + i as f64);
    let mut y = &x * &beta + &eps;
    if l2 > 0 {
        y += &w * DVector::from_element(l2, 0.7);
    }
    DesignData::new(y, x, w, z).expect("valid random design")
}

/// `Z (Z'Z)^{-1} Z'` by the normal equations.
pub fn dense_projector(z: &DMatrix<f64>) -> DMatrix<f64> {
    let ztz_inv = z.tr_mul(z).try_inverse().expect("full rank Z");
    z * ztz_inv * z.transpose()
}

pub fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
