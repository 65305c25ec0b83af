//! Gaussian copula with the van der Waerden (normal scores) rank correlation.
//!
//! Scores are `Φ⁻¹(rank/(n + 1))`, so no observation is mapped to `±∞`.
//! The pairwise coefficients are stacked in lexicographic `(r, s)` order,
//! `r < s`, giving `k = m(m − 1)/2` parameters.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraint::LinearConstraint;
use crate::error::{Error, Result};
use crate::estimator::{EfficientEstimate, InfluenceSample, ModelTag};
use crate::linalg::{numerical_rank, spd_factor, spd_inverse};
use crate::models::DataMatrix;

/// Pairs `(r, s)`, `r < s`, in lexicographic order.
pub fn pair_index(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|r| ((r + 1)..m).map(move |s| (r, s))).collect()
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `Φ⁻¹(j/(n + 1))` for `j = 1..=n`, exactly antisymmetric about the middle.
fn score_table(n: usize) -> Vec<f64> {
    let phi = std_normal();
    let denom = (n + 1) as f64;
    let mut table = vec![0.0; n];
    for j in 1..=n {
        let mirror = n + 1 - j;
        table[j - 1] = if j < mirror {
            phi.inverse_cdf(j as f64 / denom)
        } else if j == mirror {
            0.0
        } else {
            -table[mirror - 1]
        };
    }
    table
}

/// 1-based ranks; ties are an error.
fn ranks(xs: &[f64], column: usize) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    if order.windows(2).any(|w| xs[w[0]] == xs[w[1]]) {
        return Err(Error::Ties { column });
    }
    let mut rank = vec![0; xs.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    Ok(rank)
}

/// Normal scores of one sample.
pub fn normal_scores(xs: &[f64]) -> Result<Vec<f64>> {
    scores_in_column(xs, 0, &score_table(xs.len()))
}

fn scores_in_column(xs: &[f64], column: usize, table: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("column {column} has non-finite values")));
    }
    Ok(ranks(xs, column)?.into_iter().map(|r| table[r - 1]).collect())
}

/// Order-independent sum: terms are added by increasing magnitude, so the
/// result depends only on the multiset of values and flips sign exactly
/// when every term does.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    terms.into_iter().sum()
}

fn correlation_from_scores(a: &[f64], b: &[f64], denominator: f64) -> f64 {
    canonical_sum(a.iter().zip(b).map(|(x, y)| x * y).collect()) / denominator
}

fn score_denominator(table: &[f64]) -> f64 {
    canonical_sum(table.iter().map(|z| z * z).collect())
}

/// Van der Waerden rank correlation of `x` and `y`.
pub fn vdw_rank_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dimension(format!("samples have lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid(format!("rank correlation needs n >= 2, got {n}")));
    }
    let table = score_table(n);
    let zx = scores_in_column(x, 1, &table)?;
    let zy = scores_in_column(y, 2, &table)?;
    Ok(correlation_from_scores(&zx, &zy, score_denominator(&table)))
}

/// Normal scores for every column of `data` (1-based column numbers in errors).
fn data_scores(data: &DataMatrix) -> Result<Vec<Vec<f64>>> {
    let table = score_table(data.nrows());
    (0..data.ncols())
        .map(|j| scores_in_column(&data.column(j), j + 1, &table))
        .collect()
}

/// Influence of one pair: `z_r z_s − (ρ/2)(z_r² + z_s²)`.
pub fn pair_influence(zr: f64, zs: f64, rho: f64) -> f64 {
    zr * zs - 0.5 * rho * (zr * zr + zs * zs)
}

fn influence_from_scores(scores: &[Vec<f64>], rho_hat: &DVector<f64>) -> Result<InfluenceSample> {
    let pairs = pair_index(scores.len());
    if rho_hat.len() != pairs.len() {
        return Err(Error::dimension(format!(
            "{} pairwise estimates for {} margins, expected {}",
            rho_hat.len(),
            scores.len(),
            pairs.len()
        )));
    }
    if let Some(r) = rho_hat.iter().find(|r| r.is_nan() || r.abs() > 1.0) {
        return Err(Error::invalid(format!("correlation estimate {r} outside [-1, 1]")));
    }
    let n = scores.first().map_or(0, Vec::len);
    let values = DMatrix::from_fn(n, pairs.len(), |i, p| {
        let (r, s) = pairs[p];
        pair_influence(scores[r][i], scores[s][i], rho_hat[p])
    });
    Ok(InfluenceSample::new(values, ModelTag::P))
}

/// Estimated efficient influence rows at the pairwise estimates `rho_hat`.
pub fn copula_influence(data: &DataMatrix, rho_hat: &DVector<f64>) -> Result<InfluenceSample> {
    influence_from_scores(&data_scores(data)?, rho_hat)
}

/// Pairwise normal-scores correlations in lexicographic pair order.
pub fn pairwise_correlations(data: &DataMatrix) -> Result<DVector<f64>> {
    let scores = data_scores(data)?;
    Ok(pairwise_from_scores(&scores, data.nrows()))
}

fn pairwise_from_scores(scores: &[Vec<f64>], n: usize) -> DVector<f64> {
    let denominator = score_denominator(&score_table(n));
    let pairs = pair_index(scores.len());
    DVector::from_iterator(
        pairs.len(),
        pairs.iter().map(|&(r, s)| correlation_from_scores(&scores[r], &scores[s], denominator)),
    )
}

/// Fits the unrestricted Gaussian copula and returns the exchangeability
/// constraint (all pairwise correlations equal).
///
/// `Î` is the inverse sample covariance of the estimated influence rows.
/// Needs `m ≥ 3`: with two margins there is a single parameter and nothing
/// to constrain.
pub fn fit_exchangeable_copula(data: &DataMatrix) -> Result<(EfficientEstimate, LinearConstraint)> {
    let m = data.ncols();
    if m < 3 {
        return Err(Error::invalid(format!(
            "exchangeable copula fit needs at least 3 margins, got {m}"
        )));
    }
    let scores = data_scores(data)?;
    let theta_hat = pairwise_from_scores(&scores, data.nrows());
    let infl = influence_from_scores(&scores, &theta_hat)?;
    let cov = infl.sample_covariance();
    let k = theta_hat.len();
    let rank = numerical_rank(&cov);
    if rank < k {
        return Err(Error::RankDeficient { what: "influence covariance".into(), rank, expected: k });
    }
    let info = spd_inverse(&cov, "influence covariance")?;
    let est = EfficientEstimate::new(theta_hat, info, data.nrows())?;
    Ok((est, LinearConstraint::exchangeable(k)?))
}

/// `𝟙·ρ̄` with `ρ̄` the arithmetic mean of the pairwise estimates.
pub fn exchangeable_average(theta_hat: &DVector<f64>) -> DVector<f64> {
    let k = theta_hat.len();
    DVector::from_element(k, theta_hat.iter().sum::<f64>() / k as f64)
}

/// Efficient information for the pairwise correlations of a Gaussian copula
/// with correlation matrix `corr`, the inverse of the influence covariance.
///
/// Each influence component is a quadratic form `zᵀAz` in `z ~ N(0, C)`, so
/// `Cov(zᵀAz, zᵀBz) = 2 tr(ACBC)`.
pub fn copula_information(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_correlation(corr)?;
    let m = corr.nrows();
    let pairs = pair_index(m);
    let forms: Vec<DMatrix<f64>> = pairs
        .iter()
        .map(|&(r, s)| {
            let rho = corr[(r, s)];
            let mut a = DMatrix::zeros(m, m);
            a[(r, s)] = 0.5;
            a[(s, r)] = 0.5;
            a[(r, r)] = -0.5 * rho;
            a[(s, s)] = -0.5 * rho;
            &a * corr
        })
        .collect();
    let k = pairs.len();
    let cov = DMatrix::from_fn(k, k, |i, j| 2.0 * (&forms[i] * &forms[j]).trace());
    spd_inverse(&cov, "copula influence covariance")
}

/// Checks unit diagonal, symmetry and positive definiteness.
pub(crate) fn check_correlation(corr: &DMatrix<f64>) -> Result<()> {
    if !corr.is_square() || corr.nrows() < 2 {
        return Err(Error::dimension("correlation matrix must be square with at least 2 rows"));
    }
    if corr.diagonal().iter().any(|d| (d - 1.0).abs() > 1e-12) {
        return Err(Error::invalid("correlation matrix must have a unit diagonal"));
    }
    spd_factor(corr, "correlation matrix").map(|_| ())
}

/// `m × m` correlation matrix with every off-diagonal entry `rho`.
pub fn exchangeable_correlation(m: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho })
}
