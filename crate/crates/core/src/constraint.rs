//! Equality constraints `S: ℝᵏ → ℝᵈ` with `d < k`, their Jacobians, and
//! orthonormal bases of the Jacobian null space.
//!
//! A [`ConstraintSystem`] wraps an evaluation closure and either an analytic
//! Jacobian or a central-difference fallback. Every Jacobian handed to a
//! solver goes through [`ConstraintSystem::jacobian`], which verifies that the
//! numerical rank equals `d` at the evaluation point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank};

type EvalFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;
type LagrangianHessianFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;

/// How a constraint system produces its `d × k` Jacobian.
#[derive(Clone)]
pub enum JacobianMode {
    Analytic(Arc<JacobianFn>),
    /// Central differences with step `cbrt(ε) · max(1, |θⱼ|)`.
    Numeric,
}

impl fmt::Debug for JacobianMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JacobianMode::Analytic(_) => f.write_str("Analytic"),
            JacobianMode::Numeric => f.write_str("Numeric"),
        }
    }
}

/// A smooth map `S: ℝᵏ → ℝᵈ` whose zero set is the constraint manifold.
#[derive(Clone)]
pub struct ConstraintSystem {
    name: String,
    dim_param: usize,
    dim_constraint: usize,
    eval: Arc<EvalFn>,
    jacobian: JacobianMode,
    // Σᵢ λᵢ ∇²Sᵢ(θ); differenced from the Jacobian when absent.
    lagrangian_hessian: Option<Arc<LagrangianHessianFn>>,
}

impl fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("name", &self.name)
            .field("dim_param", &self.dim_param)
            .field("dim_constraint", &self.dim_constraint)
            .field("jacobian", &self.jacobian)
            .field("analytic_hessian", &self.lagrangian_hessian.is_some())
            .finish()
    }
}

pub(crate) fn check_dims(k: usize, d: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "parameter dimension k = {k} must be at least 2"
        )));
    }
    if d == 0 || d >= k {
        return Err(Error::invalid(format!(
            "constraint dimension d = {d} must satisfy 1 <= d < k = {k}"
        )));
    }
    Ok(())
}

impl ConstraintSystem {
    /// Creates a system with a numeric Jacobian. Fails unless `1 ≤ d < k`.
    pub fn new<F>(name: impl Into<String>, dim_param: usize, dim_constraint: usize, eval: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        check_dims(dim_param, dim_constraint)?;
        Ok(Self {
            name: name.into(),
            dim_param,
            dim_constraint,
            eval: Arc::new(eval),
            jacobian: JacobianMode::Numeric,
            lagrangian_hessian: None,
        })
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = JacobianMode::Analytic(Arc::new(jac));
        self
    }

    /// Supplies `(θ, λ) ↦ Σᵢ λᵢ ∇²Sᵢ(θ)` for the projection solver.
    pub fn with_lagrangian_hessian<F>(mut self, h: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.lagrangian_hessian = Some(Arc::new(h));
        self
    }

    /// Switches to central-difference Jacobians (and drops any analytic
    /// second derivatives), keeping the same `S`.
    pub fn into_numeric(mut self) -> Self {
        self.jacobian = JacobianMode::Numeric;
        self.lagrangian_hessian = None;
        self
    }

    /// `S(θ) = ‖θ‖² − r²` on ℝ².
    pub fn circle(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!("circle radius must be positive, got {radius}")));
        }
        let r2 = radius * radius;
        Ok(Self::new("circle", 2, 1, move |t| {
            Ok(DVector::from_element(1, t[0] * t[0] + t[1] * t[1] - r2))
        })?
        .with_jacobian(|t| Ok(DMatrix::from_row_slice(1, 2, &[2.0 * t[0], 2.0 * t[1]])))
        .with_lagrangian_hessian(|_, l| Ok(DMatrix::identity(2, 2) * (2.0 * l[0]))))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_param(&self) -> usize {
        self.dim_param
    }

    pub fn dim_constraint(&self) -> usize {
        self.dim_constraint
    }

    pub fn jacobian_mode(&self) -> &JacobianMode {
        &self.jacobian
    }

    fn check_point(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim_param {
            return Err(Error::dimension(format!(
                "{}: theta has length {}, expected {}",
                self.name,
                theta.len(),
                self.dim_param
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("{}: theta has non-finite entries", self.name)));
        }
        Ok(())
    }

    /// `S(θ)`.
    pub fn eval(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(theta)?;
        let s = (self.eval)(theta)?;
        if s.len() != self.dim_constraint {
            return Err(Error::dimension(format!(
                "{}: S returned {} values, expected {}",
                self.name,
                s.len(),
                self.dim_constraint
            )));
        }
        Ok(s)
    }

    /// Jacobian without the rank check.
    pub fn raw_jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(theta)?;
        let j = match &self.jacobian {
            JacobianMode::Analytic(f) => f(theta)?,
            JacobianMode::Numeric => numeric_jacobian(|t| self.eval(t), theta, self.dim_constraint)?,
        };
        if j.nrows() != self.dim_constraint || j.ncols() != self.dim_param {
            return Err(Error::dimension(format!(
                "{}: Jacobian is {}x{}, expected {}x{}",
                self.name,
                j.nrows(),
                j.ncols(),
                self.dim_constraint,
                self.dim_param
            )));
        }
        Ok(j)
    }

    /// `Ṡ(θ)`, rejected unless its numerical rank is `d`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = self.raw_jacobian(theta)?;
        let rank = numerical_rank(&j);
        if rank < self.dim_constraint {
            return Err(Error::SingularConstraint {
                theta: theta.iter().cloned().collect(),
                rank,
                expected: self.dim_constraint,
            });
        }
        Ok(j)
    }

    /// `Σᵢ λᵢ ∇²Sᵢ(θ)`, analytic when supplied, otherwise central differences
    /// of `Ṡ(θ)ᵀλ`.
    pub fn lagrangian_hessian(&self, theta: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(theta)?;
        if lambda.len() != self.dim_constraint {
            return Err(Error::dimension(format!(
                "{}: multiplier has length {}, expected {}",
                self.name,
                lambda.len(),
                self.dim_constraint
            )));
        }
        if let Some(h) = &self.lagrangian_hessian {
            return h(theta, lambda);
        }
        let k = self.dim_param;
        let mut h = DMatrix::zeros(k, k);
        if lambda.iter().all(|&l| l == 0.0) {
            return Ok(h);
        }
        let mut probe = theta.clone();
        for j in 0..k {
            let step = fd_step(theta[j]);
            probe[j] = theta[j] + step;
            let up = self.raw_jacobian(&probe)?.transpose() * lambda;
            probe[j] = theta[j] - step;
            let down = self.raw_jacobian(&probe)?.transpose() * lambda;
            probe[j] = theta[j];
            h.set_column(j, &((up - down) / (2.0 * step)));
        }
        Ok(linalg::symmetrize(&h))
    }
}

fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Central-difference Jacobian of `f` at `theta`.
pub fn numeric_jacobian<F>(f: F, theta: &DVector<f64>, d: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k = theta.len();
    let mut jac = DMatrix::zeros(d, k);
    let mut probe = theta.clone();
    for j in 0..k {
        let step = fd_step(theta[j]);
        probe[j] = theta[j] + step;
        let up = f(&probe)?;
        probe[j] = theta[j] - step;
        let down = f(&probe)?;
        probe[j] = theta[j];
        if up.len() != d || down.len() != d {
            return Err(Error::dimension(format!(
                "constraint returned {} values, expected {d}",
                up.len()
            )));
        }
        jac.set_column(j, &((up - down) / (2.0 * step)));
    }
    Ok(jac)
}

/// `S(θ)`.
pub fn eval_constraint(cs: &ConstraintSystem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    cs.eval(theta)
}

/// `Ṡ(θ)` with the rank check.
pub fn jacobian(cs: &ConstraintSystem, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    cs.jacobian(theta)
}

/// Orthonormal `k × (k − d)` basis `L` of the null space of a full-rank
/// `d × k` Jacobian, so that `jac · L = 0` and `LᵀL = I`.
///
/// Computed from a complete Householder QR of `jacᵀ`; the trailing `k − d`
/// columns of the orthogonal factor span the orthocomplement of the row space.
pub fn null_space_basis(jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, k) = jac.shape();
    check_dims(k, d)?;
    let rank = numerical_rank(jac);
    if rank < d {
        return Err(Error::RankDeficient {
            what: "constraint Jacobian".into(),
            rank,
            expected: d,
        });
    }
    // Pad jacᵀ to k × k so the QR yields the full orthogonal factor.
    let mut padded = DMatrix::zeros(k, k);
    padded.view_mut((0, 0), (k, d)).copy_from(&jac.transpose());
    let q = padded.qr().q();
    Ok(q.columns(d, k - d).into_owned())
}

/// `S(θ) = Rᵀ(θ − α)` with `R` a `k × d` matrix of full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    r: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(r: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let (k, d) = r.shape();
        check_dims(k, d)?;
        if alpha.len() != k {
            return Err(Error::dimension(format!(
                "alpha has length {}, expected {k}",
                alpha.len()
            )));
        }
        if r.iter().chain(alpha.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("linear constraint has non-finite entries"));
        }
        let rank = numerical_rank(&r);
        if rank < d {
            return Err(Error::RankDeficient {
                what: "constraint matrix R".into(),
                rank,
                expected: d,
            });
        }
        Ok(Self { r, alpha })
    }

    /// All `k` coordinates equal: `R` is the orthonormal Helmert basis of
    /// `𝟙^⊥`, a full-column-rank factor of `I − 𝟙𝟙ᵀ/k`, and `α = 0`.
    pub fn exchangeable(k: usize) -> Result<Self> {
        check_dims(k, k.saturating_sub(1))?;
        let mut r = DMatrix::zeros(k, k - 1);
        for j in 1..k {
            let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
            for i in 0..j {
                r[(i, j - 1)] = scale;
            }
            r[(j, j - 1)] = -(j as f64) * scale;
        }
        Self::new(r, DVector::zeros(k))
    }

    /// `R`, `k × d`.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn dim_param(&self) -> usize {
        self.r.nrows()
    }

    pub fn dim_constraint(&self) -> usize {
        self.r.ncols()
    }

    pub fn eval(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.dim_param() {
            return Err(Error::dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.dim_param()
            )));
        }
        Ok(self.r.tr_mul(&(theta - &self.alpha)))
    }

    pub fn to_system(&self) -> ConstraintSystem {
        self.clone().into()
    }
}

impl From<LinearConstraint> for ConstraintSystem {
    fn from(lc: LinearConstraint) -> Self {
        let (k, d) = lc.r.shape();
        let rt = lc.r.transpose();
        let lc = Arc::new(lc);
        let eval_lc = Arc::clone(&lc);
        ConstraintSystem {
            name: "linear".into(),
            dim_param: k,
            dim_constraint: d,
            eval: Arc::new(move |t| Ok(eval_lc.r.tr_mul(&(t - &eval_lc.alpha)))),
            jacobian: JacobianMode::Analytic(Arc::new(move |_| Ok(rt.clone()))),
            lagrangian_hessian: Some(Arc::new(move |_, _| Ok(DMatrix::zeros(k, k)))),
        }
    }
}

/// Which parametrization of the known-coefficient-of-variation constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvForm {
    /// `S(θ) = cθ₁ − θ₂`.
    #[default]
    Linear,
    /// `S(θ) = θ₂/θ₁ − c`.
    Ratio,
}

/// Constraint description accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `S(θ) = Rᵀ(θ − α)`; `R` given as `k` rows of `d` entries.
    Linear {
        #[serde(rename = "R")]
        r: Vec<Vec<f64>>,
        alpha: Vec<f64>,
    },
    /// Circle of the given radius (default 1) centred at the origin of ℝ².
    Circle {
        #[serde(default)]
        radius: Option<f64>,
    },
    /// Known coefficient of variation `σ/μ = c` on `θ = (μ, σ)`.
    Cv {
        c: f64,
        #[serde(default)]
        form: CvForm,
    },
    /// All coordinates equal.
    Exchangeable,
}

impl ConstraintSpec {
    /// The linear constraint this spec describes, if it is linear, for a
    /// parameter of dimension `k`.
    pub fn to_linear(&self, k: usize) -> Result<Option<LinearConstraint>> {
        match self {
            ConstraintSpec::Linear { r, alpha } => {
                let r = linalg::matrix_from_rows(r, "R")?;
                if r.nrows() != k {
                    return Err(Error::dimension(format!(
                        "R has {} rows, expected the parameter dimension {k}",
                        r.nrows()
                    )));
                }
                check_dims(r.nrows(), r.ncols())?;
                LinearConstraint::new(r, DVector::from_column_slice(alpha)).map(Some)
            }
            ConstraintSpec::Exchangeable => LinearConstraint::exchangeable(k).map(Some),
            ConstraintSpec::Cv { c, form: CvForm::Linear } => {
                expect_k(k, 2, "cv")?;
                let r = DMatrix::from_column_slice(2, 1, &[*c, -1.0]);
                LinearConstraint::new(r, DVector::zeros(2)).map(Some)
            }
            ConstraintSpec::Circle { .. } | ConstraintSpec::Cv { .. } => Ok(None),
        }
    }

    /// Builds the constraint system for a parameter of dimension `k`.
    pub fn build(&self, k: usize) -> Result<ConstraintSystem> {
        if let Some(lc) = self.to_linear(k)? {
            let mut cs: ConstraintSystem = lc.into();
            cs.name = self.type_name().to_string();
            return Ok(cs);
        }
        match self {
            ConstraintSpec::Circle { radius } => {
                expect_k(k, 2, "circle")?;
                ConstraintSystem::circle(radius.unwrap_or(1.0))
            }
            ConstraintSpec::Cv { c, form } => {
                expect_k(k, 2, "cv")?;
                crate::models::location_scale::cv_constraint(*c, *form)
            }
            _ => unreachable!("linear specs handled above"),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ConstraintSpec::Linear { .. } => "linear",
            ConstraintSpec::Circle { .. } => "circle",
            ConstraintSpec::Cv { .. } => "cv",
            ConstraintSpec::Exchangeable => "exchangeable",
        }
    }
}

fn expect_k(k: usize, want: usize, name: &str) -> Result<()> {
    if k != want {
        return Err(Error::dimension(format!(
            "{name} constraint acts on a {want}-dimensional parameter, got k = {k}"
        )));
    }
    Ok(())
}
