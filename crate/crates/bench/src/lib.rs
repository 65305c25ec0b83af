//! Fixtures shared by the criterion benches.

use constrest::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random SPD information matrix and a well-conditioned `d × k` Jacobian.
pub fn random_problem(k: usize, d: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let info = &a * a.transpose() + DMatrix::identity(k, k);
    let jac = DMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { rng.random_range(-0.3..0.3) });
    (info, jac)
}

/// A sample with `m` columns of distinct values.
pub fn random_columns(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn point(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}
