//! Location-scale family `σ⁻¹g((x − μ)/σ)` with `θ = (μ, σ)` and a known
//! coefficient of variation `σ/μ = c`.
//!
//! With `I = σ²·I(θ)`, the entries are `I₁₁ = ∫(g′/g)²g`,
//! `I₁₂ = ∫x(g′/g)²g` and `I₂₂ = ∫(xg′/g + 1)²g`; for the standard normal
//! they are `(1, 0, 2)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::constraint::{ConstraintSystem, CvForm};
use crate::error::{Error, Result};
use crate::estimator::EfficientEstimate;
use crate::models::DataMatrix;

/// Scale-free information entries `(I₁₁, I₁₂, I₂₂)` of a location-scale family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocationScaleInfo {
    pub i11: f64,
    pub i12: f64,
    pub i22: f64,
}

impl LocationScaleInfo {
    pub const NORMAL: Self = Self { i11: 1.0, i12: 0.0, i22: 2.0 };

    pub fn new(i11: f64, i12: f64, i22: f64) -> Result<Self> {
        let finite = i11.is_finite() && i12.is_finite() && i22.is_finite();
        if !finite || i11 <= 0.0 || i11 * i22 - i12 * i12 <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "location-scale information ({i11}, {i12}, {i22})"
            )));
        }
        Ok(Self { i11, i12, i22 })
    }

    /// `I(θ) = σ⁻²[[I₁₁, I₁₂], [I₁₂, I₂₂]]`.
    pub fn information(&self, sigma: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.i11, self.i12, self.i12, self.i22]) / (sigma * sigma)
    }
}

/// Normal location-scale fit: sample mean, `1/n` standard deviation, and
/// `Î = σ̂⁻²[[1, 0], [0, 2]]`.
pub fn fit_location_scale_normal(data: &DataMatrix) -> Result<(EfficientEstimate, LocationScaleInfo)> {
    if data.ncols() != 1 {
        return Err(Error::dimension(format!(
            "location-scale data must have one column, got {}",
            data.ncols()
        )));
    }
    let n = data.nrows();
    if n < 3 {
        return Err(Error::invalid(format!("location-scale fit needs n >= 3, got {n}")));
    }
    let xs = data.column(0);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 1e-300 {
        return Err(Error::NotPositiveDefinite("information of zero-variance sample".into()));
    }
    let info = LocationScaleInfo::NORMAL;
    let est = EfficientEstimate::new(DVector::from_vec(vec![mean, sd]), info.information(sd), n)?;
    Ok((est, info))
}

/// `σ/μ = c` as either `cθ₁ − θ₂` or `θ₂/θ₁ − c` (domain `θ₁ ≠ 0`).
pub fn cv_constraint(c: f64, form: CvForm) -> Result<ConstraintSystem> {
    if !c.is_finite() {
        return Err(Error::invalid(format!("coefficient of variation must be finite, got {c}")));
    }
    match form {
        CvForm::Linear => Ok(ConstraintSystem::new("cv", 2, 1, move |t| {
            Ok(DVector::from_element(1, c * t[0] - t[1]))
        })?
        .with_jacobian(move |_| Ok(DMatrix::from_row_slice(1, 2, &[c, -1.0])))
        .with_lagrangian_hessian(|_, _| Ok(DMatrix::zeros(2, 2)))),
        CvForm::Ratio => {
            if c == 0.0 {
                return Err(Error::invalid("ratio form needs c != 0"));
            }
            fn mu(t: &DVector<f64>) -> Result<f64> {
                if t[0] == 0.0 {
                    return Err(Error::Domain("ratio constraint undefined at theta_1 = 0".into()));
                }
                Ok(t[0])
            }
            Ok(ConstraintSystem::new("cv", 2, 1, move |t| {
                Ok(DVector::from_element(1, t[1] / mu(t)? - c))
            })?
            .with_jacobian(|t| {
                let m = mu(t)?;
                Ok(DMatrix::from_row_slice(1, 2, &[-t[1] / (m * m), 1.0 / m]))
            })
            .with_lagrangian_hessian(|t, l| {
                let m = mu(t)?;
                let off = -l[0] / (m * m);
                Ok(DMatrix::from_row_slice(2, 2, &[2.0 * l[0] * t[1] / (m * m * m), off, off, 0.0]))
            }))
        }
    }
}

/// Linear-form estimate `(μ̂, cμ̂)` with
/// `μ̂ = [(I₁₁ + cI₁₂)μ̄ + (I₁₂ + cI₂₂)σ̄] / (I₁₁ + 2cI₁₂ + c²I₂₂)`.
pub fn cv_linear_estimate(info: &LocationScaleInfo, mu_bar: f64, sigma_bar: f64, c: f64) -> DVector<f64> {
    let LocationScaleInfo { i11, i12, i22 } = *info;
    let denom = i11 + 2.0 * c * i12 + c * c * i22;
    let mu = ((i11 + c * i12) * mu_bar + (i12 + c * i22) * sigma_bar) / denom;
    DVector::from_vec(vec![mu, c * mu])
}

/// Normal case of [`cv_linear_estimate`]: `μ̂ = (μ̄ + 2cσ̄)/(1 + 2c²)`.
pub fn cv_one_step_normal(mu_bar: f64, sigma_bar: f64, c: f64) -> DVector<f64> {
    let mu = (mu_bar + 2.0 * c * sigma_bar) / (1.0 + 2.0 * c * c);
    DVector::from_vec(vec![mu, c * mu])
}

/// Closed forms for the ratio parametrization `θ₂/θ₁ − c`, with
/// `c̄ = σ̄/μ̄`: returns `(θ*, θ̃)` where `θ*` is the one-step update and
/// `θ̃ = (μ̃, cμ̃)` its projection onto the line `σ = cμ`.
///
/// Undefined for `|μ̄| < 1e-12`, reported as a domain error.
pub fn cv_ratio_estimates(
    info: &LocationScaleInfo,
    mu_bar: f64,
    sigma_bar: f64,
    c: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if mu_bar.abs() < 1e-12 {
        return Err(Error::Domain(format!("sample mean {mu_bar:e} too close to zero for the ratio form")));
    }
    let LocationScaleInfo { i11, i12, i22 } = *info;
    let cb = sigma_bar / mu_bar;
    let denom = i11 + 2.0 * cb * i12 + cb * cb * i22;
    let mu_star = ((i11 + (2.0 * cb - c) * i12) * mu_bar + (i12 + (2.0 * cb - c) * i22) * sigma_bar) / denom;
    let sigma_star = ((c * i11 + c * cb * i12) * mu_bar + (cb * i12 + cb * cb * i22) * sigma_bar) / denom;
    let w = 1.0 + c * c;
    let mu_tilde = ((i11 + (2.0 * cb - c + c * c * cb) / w * i12) * mu_bar
        + ((1.0 + c * cb) / w * i12 + (2.0 * cb - c + c * cb * cb) / w * i22) * sigma_bar)
        / denom;
    Ok((
        DVector::from_vec(vec![mu_star, sigma_star]),
        DVector::from_vec(vec![mu_tilde, c * mu_tilde]),
    ))
}
