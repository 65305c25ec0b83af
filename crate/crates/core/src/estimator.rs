//! Constrained efficient estimation.
//!
//! Starting from an efficient unconstrained estimate `θ̂` with information
//! estimate `Î`, the pipeline is
//!
//! 1. one-step correction
//!    `θ* = θ̂ − Î⁻¹Ṡᵀ(ṠÎ⁻¹Ṡᵀ)⁻¹S(θ̂)` with `Ṡ = Ṡ(θ̂)`,
//! 2. Euclidean projection `θ̃ = argmin{‖ζ − θ*‖ : S(ζ) = 0}`,
//! 3. constrained bound `I⁻¹ − I⁻¹Ṡᵀ(ṠI⁻¹Ṡᵀ)⁻¹ṠI⁻¹` evaluated at `θ̃`.
//!
//! No matrix is inverted explicitly: every `X⁻¹B` is a Cholesky solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::constraint::{ConstraintSystem, LinearConstraint};
use crate::error::{Error, Result};
use crate::json;
use crate::linalg::{self, max_abs_vec, numerical_rank, spd_factor, symmetrize};

/// An efficient estimate `θ̂` of a `k`-vector, an estimate `Î` of its
/// efficient information matrix, and the sample size it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficientEstimate {
    #[serde(serialize_with = "json::vector")]
    theta_hat: DVector<f64>,
    #[serde(serialize_with = "json::matrix")]
    info_hat: DMatrix<f64>,
    n: usize,
}

impl EfficientEstimate {
    /// Validates dimensions, symmetry (1e-10 relative) and positive
    /// definiteness of `info_hat`.
    pub fn new(theta_hat: DVector<f64>, info_hat: DMatrix<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        if info_hat.shape() != (theta_hat.len(), theta_hat.len()) {
            return Err(Error::dimension(format!(
                "information matrix is {}x{}, estimate has length {}",
                info_hat.nrows(),
                info_hat.ncols(),
                theta_hat.len()
            )));
        }
        if theta_hat.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("estimate has non-finite entries"));
        }
        spd_factor(&info_hat, "information matrix")?;
        Ok(Self { theta_hat, info_hat: symmetrize(&info_hat), n })
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn info_hat(&self) -> &DMatrix<f64> {
        &self.info_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    fn info_factor(&self) -> Cholesky<f64, Dyn> {
        // Validated in `new`.
        Cholesky::new(self.info_hat.clone()).expect("information matrix is SPD")
    }
}

/// Which model an influence sample belongs to: the unconstrained model or
/// the constrained submodel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ModelTag {
    P,
    Q,
}

/// Per-observation efficient influence vectors, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSample {
    pub values: DMatrix<f64>,
    pub model: ModelTag,
}

impl InfluenceSample {
    pub fn new(values: DMatrix<f64>, model: ModelTag) -> Self {
        Self { values, model }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> DVector<f64> {
        self.values.row_mean().transpose()
    }

    /// Mean-centred sample covariance with `n − 1` denominator.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        let centered = DMatrix::from_fn(n, self.dim(), |i, j| self.values[(i, j)])
            - DMatrix::from_fn(n, self.dim(), |_, j| self.values.column(j).mean());
        symmetrize(&(centered.tr_mul(&centered) / (n.max(2) - 1) as f64))
    }
}

/// Pieces shared by the one-step update, the bound and the influence
/// transform: `A = I⁻¹Ṡᵀ` and the Cholesky factor of `ṠI⁻¹Ṡᵀ`.
struct ConstraintGeometry {
    info_inv_jt: DMatrix<f64>,
    middle: Cholesky<f64, Dyn>,
}

impl ConstraintGeometry {
    fn new(info: &Cholesky<f64, Dyn>, jac: &DMatrix<f64>) -> Result<Self> {
        let info_inv_jt = info.solve(&jac.transpose());
        let middle = symmetrize(&(jac * &info_inv_jt));
        let middle = Cholesky::new(middle).ok_or_else(|| Error::RankDeficient {
            what: "S' I^-1 S'^T".into(),
            rank: numerical_rank(jac),
            expected: jac.nrows(),
        })?;
        Ok(Self { info_inv_jt, middle })
    }

    /// `I⁻¹Ṡᵀ(ṠI⁻¹Ṡᵀ)⁻¹ v`.
    fn correction(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.info_inv_jt * self.middle.solve(v)
    }
}

fn check_jacobian(jac: &DMatrix<f64>, k: usize) -> Result<()> {
    let (d, cols) = jac.shape();
    if cols != k {
        return Err(Error::dimension(format!(
            "Jacobian has {cols} columns, expected {k}"
        )));
    }
    crate::constraint::check_dims(k, d)?;
    let rank = numerical_rank(jac);
    if rank < d {
        return Err(Error::RankDeficient {
            what: "constraint Jacobian".into(),
            rank,
            expected: d,
        });
    }
    Ok(())
}

fn check_system(est: &EfficientEstimate, cs: &ConstraintSystem) -> Result<()> {
    if cs.dim_param() != est.dim() {
        return Err(Error::dimension(format!(
            "constraint acts on dimension {}, estimate has dimension {}",
            cs.dim_param(),
            est.dim()
        )));
    }
    Ok(())
}

/// One-step corrected estimate `θ* = θ̂ − Î⁻¹Ṡᵀ(ṠÎ⁻¹Ṡᵀ)⁻¹S(θ̂)`.
pub fn one_step_update(est: &EfficientEstimate, cs: &ConstraintSystem) -> Result<DVector<f64>> {
    check_system(est, cs)?;
    let theta = est.theta_hat();
    let s = cs.eval(theta)?;
    let jac = cs.jacobian(theta)?;
    let geom = ConstraintGeometry::new(&est.info_factor(), &jac)?;
    Ok(theta - geom.correction(&s))
}

/// Stopping rules for [`project_to_manifold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    /// Bound on `‖S(ζ)‖∞` and on the stationarity residual `‖ζ − θ* + Ṡᵀλ‖∞`.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iterations: 100, max_halvings: 30 }
    }
}

/// Result of the nearest-point projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    #[serde(serialize_with = "json::vector")]
    pub theta: DVector<f64>,
    #[serde(serialize_with = "json::vector")]
    pub lambda: DVector<f64>,
    /// `‖S(θ)‖∞`.
    #[serde(serialize_with = "json::real")]
    pub residual: f64,
    /// `‖θ − θ* + Ṡᵀλ‖∞`.
    #[serde(serialize_with = "json::real")]
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct KktState {
    zeta: DVector<f64>,
    lambda: DVector<f64>,
    jac: DMatrix<f64>,
    s: DVector<f64>,
    stationarity: DVector<f64>,
}

impl KktState {
    /// Evaluates the KKT residual at `zeta` with the least-squares multiplier
    /// `λ(ζ) = −(ṠṠᵀ)⁻¹Ṡ(ζ − θ*)`, which is zero at `ζ = θ*`.
    fn at(cs: &ConstraintSystem, target: &DVector<f64>, zeta: DVector<f64>) -> Result<Self> {
        let s = cs.eval(&zeta)?;
        let jac = cs.jacobian(&zeta)?;
        let offset = &zeta - target;
        let gram = Cholesky::new(symmetrize(&(&jac * jac.transpose()))).ok_or_else(|| {
            Error::SingularConstraint {
                theta: zeta.iter().cloned().collect(),
                rank: numerical_rank(&jac),
                expected: cs.dim_constraint(),
            }
        })?;
        let lambda = -gram.solve(&(&jac * &offset));
        let stationarity = offset + jac.tr_mul(&lambda);
        Ok(Self { zeta, lambda, jac, s, stationarity })
    }

    fn merit(&self) -> f64 {
        (self.s.norm_squared() + self.stationarity.norm_squared()).sqrt()
    }

    fn converged(&self, tol: f64) -> bool {
        max_abs_vec(&self.s) <= tol && max_abs_vec(&self.stationarity) <= tol
    }

    fn into_projection(self, iterations: usize, converged: bool) -> Projection {
        Projection {
            residual: max_abs_vec(&self.s),
            kkt_residual: max_abs_vec(&self.stationarity),
            theta: self.zeta,
            lambda: self.lambda,
            iterations,
            converged,
        }
    }
}

/// Nearest point to `theta_star` on `{ζ : S(ζ) = 0}` in the Euclidean norm,
/// with the default stopping rules.
pub fn project_to_manifold(theta_star: &DVector<f64>, cs: &ConstraintSystem) -> Result<Projection> {
    project_to_manifold_with(theta_star, cs, ProjectionOptions::default())
}

/// Newton's method on the KKT system
///
/// ```text
/// ζ − θ* + Ṡ(ζ)ᵀλ = 0,   S(ζ) = 0,
/// ```
///
/// started at `ζ = θ*`, `λ = 0`. Each step solves the full KKT linearization
/// (including the constraint curvature `Σλᵢ∇²Sᵢ`) and is halved until the
/// residual norm decreases. The multiplier is refreshed by least squares at
/// every accepted iterate, so the line search only moves `ζ`.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`. A rank-deficient Jacobian along the path is.
/// Only a local minimizer can be found; when several points on the manifold
/// are equally near (the centre of a circle) the one reached is arbitrary.
pub fn project_to_manifold_with(
    theta_star: &DVector<f64>,
    cs: &ConstraintSystem,
    opts: ProjectionOptions,
) -> Result<Projection> {
    if theta_star.len() != cs.dim_param() {
        return Err(Error::dimension(format!(
            "point has length {}, constraint acts on dimension {}",
            theta_star.len(),
            cs.dim_param()
        )));
    }
    let k = cs.dim_param();
    let d = cs.dim_constraint();
    let mut state = KktState::at(cs, theta_star, theta_star.clone())?;

    for iteration in 0..opts.max_iterations {
        let done = state.converged(opts.tol);
        let curvature = cs.lagrangian_hessian(&state.zeta, &state.lambda)?;
        let mut kkt = DMatrix::zeros(k + d, k + d);
        kkt.view_mut((0, 0), (k, k))
            .copy_from(&(DMatrix::identity(k, k) + curvature));
        kkt.view_mut((0, k), (k, d)).copy_from(&state.jac.transpose());
        kkt.view_mut((k, 0), (d, k)).copy_from(&state.jac);
        let mut rhs = DVector::zeros(k + d);
        rhs.rows_mut(0, k).copy_from(&(-&state.stationarity));
        rhs.rows_mut(k, d).copy_from(&(-&state.s));

        let Some(step) = kkt.qr().solve(&rhs) else {
            return Ok(state.into_projection(iteration, done));
        };
        let dz = step.rows(0, k).into_owned();

        if done {
            // One polishing step brings the iterate to working precision.
            if let Ok(next) = KktState::at(cs, theta_star, &state.zeta + &dz) {
                if next.merit() <= state.merit() && next.converged(opts.tol) {
                    state = next;
                }
            }
            return Ok(state.into_projection(iteration, true));
        }

        let merit = state.merit();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &state.zeta + &dz * scale;
            match KktState::at(cs, theta_star, trial) {
                Ok(next) if next.merit() < merit => {
                    accepted = Some(next);
                    break;
                }
                // Domain violations and singular points count as a residual increase.
                Ok(_) | Err(Error::Domain(_)) | Err(Error::SingularConstraint { .. }) => {}
                Err(e) => return Err(e),
            }
            scale *= 0.5;
        }
        match accepted {
            Some(next) => state = next,
            None => return Ok(state.into_projection(iteration, false)),
        }
    }
    let converged = state.converged(opts.tol);
    Ok(state.into_projection(opts.max_iterations, converged))
}

/// Output of the full constrained-estimation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedResult {
    #[serde(serialize_with = "json::vector")]
    pub theta_star: DVector<f64>,
    #[serde(serialize_with = "json::vector")]
    pub theta_tilde: DVector<f64>,
    /// Constrained information bound at `θ̃`.
    #[serde(rename = "bound_Q", serialize_with = "json::matrix")]
    pub bound_q: DMatrix<f64>,
    /// `‖S(θ̃)‖∞`.
    #[serde(serialize_with = "json::real")]
    pub constraint_residual: f64,
    #[serde(serialize_with = "json::real")]
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One-step update, projection, and the bound at the projected point.
///
/// A non-converged projection is returned with `converged = false`; the
/// bound is then evaluated at the best iterate.
pub fn estimate_constrained(est: &EfficientEstimate, cs: &ConstraintSystem) -> Result<ConstrainedResult> {
    let theta_star = one_step_update(est, cs)?;
    let proj = project_to_manifold(&theta_star, cs)?;
    let jac = cs.jacobian(&proj.theta)?;
    let bound_q = constrained_bound(est.info_hat(), &jac)?;
    let converged = proj.converged && proj.residual <= ProjectionOptions::default().tol;
    Ok(ConstrainedResult {
        theta_star,
        theta_tilde: proj.theta,
        bound_q,
        constraint_residual: proj.residual,
        kkt_residual: proj.kkt_residual,
        iterations: proj.iterations,
        converged,
    })
}

/// `I⁻¹ − I⁻¹Ṡᵀ(ṠI⁻¹Ṡᵀ)⁻¹ṠI⁻¹`: the minimal asymptotic covariance under
/// the constraint. Symmetric PSD of rank `k − d`.
pub fn constrained_bound(info: &DMatrix<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = spd_factor(info, "information matrix")?;
    check_jacobian(jac, info.nrows())?;
    let geom = ConstraintGeometry::new(&chol, jac)?;
    let info_inv = chol.inverse();
    let reduction = &geom.info_inv_jt * geom.middle.solve(&geom.info_inv_jt.transpose());
    Ok(symmetrize(&(info_inv - reduction)))
}

/// `L(LᵀIL)⁻¹Lᵀ` for any `L` whose columns span the Jacobian null space.
pub fn constrained_bound_nullspace(info: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_factor(info, "information matrix")?;
    let (k, r) = basis.shape();
    if k != info.nrows() {
        return Err(Error::dimension(format!(
            "null-space basis has {k} rows, information matrix is {}x{}",
            info.nrows(),
            info.ncols()
        )));
    }
    let rank = numerical_rank(basis);
    if r == 0 || rank < r {
        return Err(Error::RankDeficient { what: "null-space basis".into(), rank, expected: r });
    }
    let reduced = symmetrize(&basis.tr_mul(&(info * basis)));
    let reduced = spd_factor(&reduced, "L^T I L")?;
    Ok(symmetrize(&(basis * reduced.solve(&basis.transpose()))))
}

/// Efficient scores: row `i` is `(I ℓ̃(Xᵢ))ᵀ`.
pub fn efficient_score(info: &DMatrix<f64>, infl: &InfluenceSample) -> Result<DMatrix<f64>> {
    if info.shape() != (infl.dim(), infl.dim()) {
        return Err(Error::dimension(format!(
            "information matrix is {}x{}, influence rows have length {}",
            info.nrows(),
            info.ncols(),
            infl.dim()
        )));
    }
    Ok(&infl.values * info.transpose())
}

/// The projection `M = I − I⁻¹Ṡᵀ(ṠI⁻¹Ṡᵀ)⁻¹Ṡ` that maps efficient influence
/// functions of the full model to those of the constrained submodel.
/// `M² = M` and `ṠM = 0`.
pub fn influence_projector(info: &DMatrix<f64>, jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = spd_factor(info, "information matrix")?;
    let k = info.nrows();
    check_jacobian(jac, k)?;
    let geom = ConstraintGeometry::new(&chol, jac)?;
    Ok(DMatrix::identity(k, k) - &geom.info_inv_jt * geom.middle.solve(jac))
}

/// Transforms influence rows of the full model into the constrained model.
pub fn constrained_influence(
    infl: &InfluenceSample,
    info: &DMatrix<f64>,
    jac: &DMatrix<f64>,
) -> Result<InfluenceSample> {
    if infl.model != ModelTag::P {
        return Err(Error::invalid("influence sample is already tagged Q"));
    }
    if info.nrows() != infl.dim() {
        return Err(Error::dimension(format!(
            "information matrix is {}x{}, influence rows have length {}",
            info.nrows(),
            info.ncols(),
            infl.dim()
        )));
    }
    let m = influence_projector(info, jac)?;
    Ok(InfluenceSample::new(&infl.values * m.transpose(), ModelTag::Q))
}

fn check_linear(est: &EfficientEstimate, lc: &LinearConstraint) -> Result<()> {
    if lc.dim_param() != est.dim() {
        return Err(Error::dimension(format!(
            "linear constraint acts on dimension {}, estimate has dimension {}",
            lc.dim_param(),
            est.dim()
        )));
    }
    Ok(())
}

/// Closed form for `S(θ) = Rᵀ(θ − α)`:
/// `θ̃ = θ̂ − Î⁻¹R(RᵀÎ⁻¹R)⁻¹Rᵀ(θ̂ − α)`.
pub fn linear_constrained_estimate(est: &EfficientEstimate, lc: &LinearConstraint) -> Result<DVector<f64>> {
    check_linear(est, lc)?;
    let geom = ConstraintGeometry::new(&est.info_factor(), &lc.r().transpose())?;
    let s = lc.eval(est.theta_hat())?;
    Ok(est.theta_hat() - geom.correction(&s))
}

/// Null-space form of the linear closed form:
/// `θ̃ = α + L(LᵀÎL)⁻¹LᵀÎ(θ̂ − α)` for any basis `L` of `{x : Rᵀx = 0}`.
pub fn linear_constrained_estimate_nullspace(
    est: &EfficientEstimate,
    lc: &LinearConstraint,
    basis: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_linear(est, lc)?;
    let (k, r) = basis.shape();
    if k != est.dim() || r != k - lc.dim_constraint() {
        return Err(Error::dimension(format!(
            "null-space basis is {k}x{r}, expected {}x{}",
            est.dim(),
            est.dim() - lc.dim_constraint()
        )));
    }
    if linalg::max_abs(&lc.r().tr_mul(basis)) > 1e-8 * linalg::max_abs(basis).max(1.0) * linalg::max_abs(lc.r()).max(1.0) {
        return Err(Error::invalid("basis columns are not orthogonal to R"));
    }
    let info = est.info_hat();
    let reduced = spd_factor(&symmetrize(&basis.tr_mul(&(info * basis))), "L^T I L")?;
    let centered = est.theta_hat() - lc.alpha();
    Ok(lc.alpha() + basis * reduced.solve(&basis.tr_mul(&(info * centered))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::null_space_basis;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }

    fn est(theta: &[f64], info: DMatrix<f64>) -> EfficientEstimate {
        EfficientEstimate::new(v(theta), info, 100).unwrap()
    }

    fn diff_line() -> LinearConstraint {
        LinearConstraint::new(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), DVector::zeros(2)).unwrap()
    }

    // Nearest point on the unit circle by exhaustive search over the angle.
    fn circle_grid_oracle(p: &DVector<f64>, resolution: f64) -> DVector<f64> {
        let steps = (std::f64::consts::TAU / resolution).ceil() as usize;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..steps {
            let a = i as f64 * resolution;
            let d = (p[0] - a.cos()).powi(2) + (p[1] - a.sin()).powi(2);
            if d < best.0 {
                best = (d, a);
            }
        }
        v(&[best.1.cos(), best.1.sin()])
    }

    #[test]
    fn estimate_validation() {
        assert!(EfficientEstimate::new(v(&[1.0, 2.0]), DMatrix::identity(3, 3), 5).is_err());
        assert!(matches!(
            EfficientEstimate::new(v(&[1.0, 2.0]), m(2, 2, &[1.0, 2.0, 2.0, 1.0]), 5),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(EfficientEstimate::new(v(&[1.0, 2.0]), DMatrix::identity(2, 2), 0).is_err());
    }

    #[test]
    fn one_step_examples() {
        let lin = diff_line().to_system();
        let e = est(&[2.0, 2.0], DMatrix::identity(2, 2));
        assert_eq!(one_step_update(&e, &lin).unwrap(), v(&[2.0, 2.0]));

        let e = est(&[1.0, 3.0], DMatrix::identity(2, 2));
        let star = one_step_update(&e, &lin).unwrap();
        assert!((star - v(&[2.0, 2.0])).amax() < 1e-15);

        // Hand evaluation with Ṡ = (1.6, 1.4), S = 0.13, I = identity.
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let e = est(&[0.8, 0.7], DMatrix::identity(2, 2));
        let star = one_step_update(&e, &circle).unwrap();
        let factor = 0.13 / (1.6 * 1.6 + 1.4 * 1.4);
        let expected = v(&[0.8 - 1.6 * factor, 0.7 - 1.4 * factor]);
        assert!((&star - &expected).amax() < 1e-15);
        assert!((star[0] - 0.753982).abs() < 5e-7 && (star[1] - 0.659735).abs() < 5e-7);
    }

    #[test]
    fn one_step_rejects_singular_point() {
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let e = est(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(
            one_step_update(&e, &circle),
            Err(Error::SingularConstraint { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let p = project_to_manifold(&v(&[1.0, 0.0]), &circle).unwrap();
        assert_eq!(p.theta, v(&[1.0, 0.0]));
        assert_eq!(p.iterations, 0);
        assert!(p.converged);

        let p = project_to_manifold(&v(&[2.0, 0.0]), &circle).unwrap();
        assert!(p.converged);
        assert!((p.theta - v(&[1.0, 0.0])).amax() < 1e-12);

        let p = project_to_manifold(&v(&[0.8, 0.7]), &circle).unwrap();
        let norm = 1.13f64.sqrt();
        assert!((&p.theta - v(&[0.8 / norm, 0.7 / norm])).amax() < 1e-12);
        assert!((p.theta[0] - 0.752577).abs() < 5e-7 && (p.theta[1] - 0.658505).abs() < 5e-7);
        let grid = circle_grid_oracle(&v(&[0.8, 0.7]), 1e-5);
        assert!((&p.theta - grid).norm() < 1e-5);
        assert!(p.residual <= 1e-10 && p.kkt_residual <= 1e-10);
    }

    #[test]
    fn projection_from_near_centre_stays_on_ray() {
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let start = v(&[0.0015, -0.0011]);
        let p = project_to_manifold(&start, &circle).unwrap();
        assert!(p.converged, "{p:?}");
        assert!((&p.theta - &start / start.norm()).amax() < 1e-10);
    }

    #[test]
    fn projection_reports_non_convergence() {
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let opts = ProjectionOptions { max_iterations: 1, ..Default::default() };
        let p = project_to_manifold_with(&v(&[30.0, 40.0]), &circle, opts).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 1);
    }

    #[test]
    fn projection_with_numeric_derivatives() {
        let circle = ConstraintSystem::circle(1.0).unwrap().into_numeric();
        let p = project_to_manifold(&v(&[0.2, -3.0]), &circle).unwrap();
        assert!(p.converged);
        let expected = v(&[0.2, -3.0]) / (0.04f64 + 9.0).sqrt();
        assert!((p.theta - expected).amax() < 1e-9);
    }

    #[test]
    fn pipeline_examples() {
        let circle = ConstraintSystem::circle(1.0).unwrap();
        let e = est(&[0.8, 0.7], DMatrix::identity(2, 2));
        let r = estimate_constrained(&e, &circle).unwrap();
        assert!(r.converged);
        assert!(r.constraint_residual <= 1e-10);
        // θ* is a positive multiple of θ̂ here, so θ̃ is θ̂ normalized.
        let norm = 1.13f64.sqrt();
        assert!((&r.theta_tilde - v(&[0.8 / norm, 0.7 / norm])).amax() < 1e-12);
        let grid = circle_grid_oracle(&r.theta_star, 1e-5);
        assert!((&r.theta_tilde - grid).norm() < 1e-5);

        let e = est(&[0.6, 0.8], DMatrix::identity(2, 2));
        let r = estimate_constrained(&e, &circle).unwrap();
        assert_eq!(r.theta_star, v(&[0.6, 0.8]));
        assert_eq!(r.theta_tilde, v(&[0.6, 0.8]));

        let lc = diff_line();
        let e = est(&[0.3, 1.9], m(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let r = estimate_constrained(&e, &lc.to_system()).unwrap();
        let closed = linear_constrained_estimate(&e, &lc).unwrap();
        assert!((r.theta_tilde - closed).amax() < 1e-10);
    }

    #[test]
    fn bound_examples() {
        let id = DMatrix::identity(2, 2);
        let b = constrained_bound(&id, &m(1, 2, &[1.0, -1.0])).unwrap();
        assert!((b - m(2, 2, &[0.5, 0.5, 0.5, 0.5])).amax() < 1e-15);
        let b = constrained_bound(&id, &m(1, 2, &[1.0, 0.0])).unwrap();
        assert!((b - m(2, 2, &[0.0, 0.0, 0.0, 1.0])).amax() < 1e-15);
        let info = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b = constrained_bound(&info, &m(1, 2, &[1.0, -1.0])).unwrap();
        assert!((b - DMatrix::from_element(2, 2, 1.0 / 6.0)).amax() < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let l = m(2, 1, &[s, s]);
        let b = constrained_bound_nullspace(&id, &l).unwrap();
        assert!((b - m(2, 2, &[0.5, 0.5, 0.5, 0.5])).amax() < 1e-15);
        let b = constrained_bound_nullspace(&id, &m(2, 1, &[0.0, 1.0])).unwrap();
        assert!((b - m(2, 2, &[0.0, 0.0, 0.0, 1.0])).amax() < 1e-15);
        let b = constrained_bound_nullspace(&info, &l).unwrap();
        assert!((b - DMatrix::from_element(2, 2, 1.0 / 6.0)).amax() < 1e-15);
    }

    #[test]
    fn bound_errors() {
        let id = DMatrix::identity(2, 2);
        assert!(matches!(
            constrained_bound(&m(2, 2, &[1.0, 2.0, 2.0, 1.0]), &m(1, 2, &[1.0, 0.0])),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            constrained_bound(&DMatrix::identity(3, 3), &m(2, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Error::RankDeficient { .. })
        ));
        assert!(constrained_bound_nullspace(&id, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn score_and_influence_examples() {
        let rows = InfluenceSample::new(m(2, 2, &[1.0, -1.0, 0.3, 4.0]), ModelTag::P);
        assert_eq!(efficient_score(&DMatrix::identity(2, 2), &rows).unwrap(), rows.values);
        let two = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(efficient_score(&two, &rows).unwrap().row(0), m(1, 2, &[2.0, -2.0]));
        let info = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let single = InfluenceSample::new(m(1, 2, &[1.0, 0.0]), ModelTag::P);
        assert_eq!(efficient_score(&info, &single).unwrap(), m(1, 2, &[2.0, 1.0]));
        assert!(efficient_score(&DMatrix::identity(3, 3), &single).is_err());

        let jac = m(1, 2, &[1.0, -1.0]);
        let sample = InfluenceSample::new(m(2, 2, &[1.0, 3.0, 0.0, 0.0]), ModelTag::P);
        let q = constrained_influence(&sample, &DMatrix::identity(2, 2), &jac).unwrap();
        assert_eq!(q.model, ModelTag::Q);
        assert!((q.values - m(2, 2, &[2.0, 2.0, 0.0, 0.0])).amax() < 1e-15);

        let q = constrained_influence(&single, &info, &jac).unwrap();
        assert!((&q.values - m(1, 2, &[0.5, 0.5])).amax() < 1e-15);
        assert!(constrained_influence(&q, &info, &jac).is_err());
    }

    #[test]
    fn linear_examples() {
        // Common mean, Σ̂ = identity.
        let ex = LinearConstraint::exchangeable(3).unwrap();
        let e = est(&[1.0, 2.0, 3.0], DMatrix::identity(3, 3));
        let t = linear_constrained_estimate(&e, &ex).unwrap();
        assert!((t - v(&[2.0, 2.0, 2.0])).amax() < 1e-14);

        // Σ̂ = diag(1, 4): weights 1 and 1/4 → (0·1 + 5/4)/(5/4) = 1.
        let ex2 = LinearConstraint::exchangeable(2).unwrap();
        let e = est(&[0.0, 5.0], DMatrix::from_diagonal(&v(&[1.0, 0.25])));
        let t = linear_constrained_estimate(&e, &ex2).unwrap();
        assert!((&t - v(&[1.0, 1.0])).amax() < 1e-14);
        let l = null_space_basis(&ex2.r().transpose()).unwrap();
        let t2 = linear_constrained_estimate_nullspace(&e, &ex2, &l).unwrap();
        assert!((t - t2).amax() < 1e-14);

        let e = est(&[4.0, 4.0, 4.0], m(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 3.0]));
        assert!((linear_constrained_estimate(&e, &ex).unwrap() - e.theta_hat()).amax() < 1e-14);
    }

    fn spd(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, k * k).prop_map(move |xs| {
            let a = DMatrix::from_row_slice(k, k, &xs);
            &a * a.transpose() + DMatrix::identity(k, k) * 0.5
        })
    }

    fn jacobian(d: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, d * k)
            .prop_map(move |xs| DMatrix::from_row_slice(d, k, &xs))
            .prop_filter("well conditioned", |j| j.singular_values().min() > 1e-2)
    }

    fn problem() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
        (2usize..=8)
            .prop_flat_map(|k| (1usize..k).prop_map(move |d| (d, k)))
            .prop_flat_map(|(d, k)| (spd(k), jacobian(d, k)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn bound_forms_agree((info, jac) in problem()) {
            let a = constrained_bound(&info, &jac).unwrap();
            let b = constrained_bound_nullspace(&info, &null_space_basis(&jac).unwrap()).unwrap();
            prop_assert!((&a - &b).amax() < 1e-9);
            let k = info.nrows();
            let eig = linalg::symmetric_eigenvalues(&a);
            let top = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            prop_assert_eq!(eig.iter().filter(|&&e| e > 1e-9 * top).count(), k - jac.nrows());
        }

        #[test]
        fn constraint_reduces_variance((info, jac) in problem()) {
            let b = constrained_bound(&info, &jac).unwrap();
            let diff = linalg::spd_inverse(&info, "I").unwrap() - b;
            prop_assert!(linalg::symmetric_eigenvalues(&diff)[0] >= -1e-10);
        }

        #[test]
        fn projector_is_idempotent_and_tangent((info, jac) in problem()) {
            let p = influence_projector(&info, &jac).unwrap();
            prop_assert!((&p * &p - &p).amax() < 1e-10);
            prop_assert!((&jac * &p).amax() < 1e-10);
        }

        #[test]
        fn nullspace_choice_is_irrelevant((info, jac) in problem(), seed in any::<u64>()) {
            let l = null_space_basis(&jac).unwrap();
            let r = l.ncols();
            let mut state = seed;
            let raw = DMatrix::from_fn(r, r, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            }) + DMatrix::identity(r, r);
            let q = raw.qr().q();
            let a = constrained_bound_nullspace(&info, &l).unwrap();
            let b = constrained_bound_nullspace(&info, &(&l * q)).unwrap();
            prop_assert!((a - b).amax() < 1e-10);
        }

        #[test]
        fn feasible_points_are_fixed(angle in 0.0f64..std::f64::consts::TAU, spread in 0.2f64..5.0) {
            let circle = ConstraintSystem::circle(1.0).unwrap();
            let theta = v(&[angle.cos(), angle.sin()]);
            let info = m(2, 2, &[spread, 0.1, 0.1, 1.0]);
            let e = EfficientEstimate::new(theta.clone(), info, 10).unwrap();
            let star = one_step_update(&e, &circle).unwrap();
            let p = project_to_manifold(&star, &circle).unwrap();
            prop_assert!((p.theta - theta).amax() < 1e-12);
        }

        #[test]
        fn linear_paths_agree((info, jac) in problem(), shift in proptest::collection::vec(-3.0f64..3.0, 8)) {
            let k = info.nrows();
            let r = jac.transpose();
            let alpha = DVector::from_fn(k, |i, _| shift[i] * 0.5);
            let lc = LinearConstraint::new(r, alpha).unwrap();
            let theta = DVector::from_fn(k, |i, _| shift[(i + 3) % 8]);
            let e = EfficientEstimate::new(theta, info, 50).unwrap();
            let closed = linear_constrained_estimate(&e, &lc).unwrap();
            let l = null_space_basis(&lc.r().transpose()).unwrap();
            let nulls = linear_constrained_estimate_nullspace(&e, &lc, &l).unwrap();
            let general = estimate_constrained(&e, &lc.to_system()).unwrap();
            prop_assert!((&closed - &nulls).amax() < 1e-8);
            prop_assert!((&closed - &general.theta_tilde).amax() < 1e-8);
            prop_assert!(lc.eval(&closed).unwrap().amax() < 1e-10);
        }
    }
}
