//! Multivariate normal with a common mean across coordinates.
//!
//! `θ̂ = X̄` and `Î = Σ̂⁻¹` with `Σ̂` the `n − 1` sample covariance. Under
//! `θ = 𝟙·mean(θ)` the linear closed form gives the GLS common mean
//! `𝟙(𝟙ᵀΣ̂⁻¹𝟙)⁻¹𝟙ᵀΣ̂⁻¹X̄`.

use crate::constraint::LinearConstraint;
use crate::error::{Error, Result};
use crate::estimator::EfficientEstimate;
use crate::linalg::{numerical_rank, spd_inverse};
use crate::models::DataMatrix;

/// Sample mean with inverse sample covariance as information estimate.
pub fn fit_mvn_mean(data: &DataMatrix) -> Result<EfficientEstimate> {
    let (n, k) = (data.nrows(), data.ncols());
    if n <= k {
        return Err(Error::invalid(format!(
            "need more observations than coordinates, got n = {n}, k = {k}"
        )));
    }
    let cov = data.sample_covariance();
    let rank = numerical_rank(&cov);
    if rank < k {
        return Err(Error::RankDeficient { what: "sample covariance".into(), rank, expected: k });
    }
    let info = spd_inverse(&cov, "sample covariance")?;
    EfficientEstimate::new(data.column_means(), info, n)
}

/// Unconstrained fit plus the all-means-equal constraint.
pub fn fit_common_mean(data: &DataMatrix) -> Result<(EfficientEstimate, LinearConstraint)> {
    let k = data.ncols();
    if k < 2 {
        return Err(Error::invalid("common mean needs at least 2 coordinates"));
    }
    let est = fit_mvn_mean(data)?;
    Ok((est, LinearConstraint::exchangeable(k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_constrained, linear_constrained_estimate};
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn collinear_columns_are_singular() {
        let d = DataMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        assert!(matches!(fit_common_mean(&d), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn sample_mean_of_perturbed_rows() {
        let d = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.1], vec![4.0, 3.9]]).unwrap();
        let (est, lc) = fit_common_mean(&d).unwrap();
        assert!((est.theta_hat() - DVector::from_vec(vec![2.0, 2.0])).amax() < 1e-15);
        assert_eq!(lc.dim_constraint(), 1);
        assert_eq!(est.n(), 3);
    }

    #[test]
    fn identity_information_gives_plain_average() {
        let est = EfficientEstimate::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), DMatrix::identity(3, 3), 10).unwrap();
        let lc = LinearConstraint::exchangeable(3).unwrap();
        let t = linear_constrained_estimate(&est, &lc).unwrap();
        assert!((t - DVector::from_element(3, 2.0)).amax() < 1e-14);
    }

    #[test]
    fn needs_more_rows_than_columns() {
        let d = DataMatrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 5.0], vec![3.0, 2.0, 1.0]]).unwrap();
        assert!(matches!(fit_common_mean(&d), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shift_equivariance() {
        let rows = vec![
            vec![0.3, 1.2, -0.4],
            vec![1.1, 0.2, 0.9],
            vec![-0.7, 0.5, 0.1],
            vec![0.4, -1.3, 0.6],
            vec![2.0, 0.8, -0.2],
        ];
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + 7.5).collect()).collect();
        let fit = |rows: &[Vec<f64>]| {
            let (est, lc) = fit_common_mean(&DataMatrix::from_rows(rows).unwrap()).unwrap();
            estimate_constrained(&est, &lc.to_system()).unwrap().theta_tilde
        };
        let a = fit(&rows);
        let b = fit(&shifted);
        assert!((b - a - DVector::from_element(3, 7.5)).amax() < 1e-12);
    }
}
