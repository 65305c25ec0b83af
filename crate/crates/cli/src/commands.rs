use std::path::Path;

use serde::Serialize;

use constrest::json;
use constrest::linalg::{matrix_from_rows, max_abs};
use constrest::models::{fit_common_mean, fit_exchangeable_copula, fit_location_scale_normal, fit_mvn_mean};
use constrest::montecarlo::simulate;
use constrest::{
    constrained_bound, constrained_bound_nullspace, estimate_constrained, project_to_manifold, ConstraintSpec,
    ConstraintSystem, DMatrix, DVector, DataMatrix, EfficientEstimate, Error, MCReport,
};
use constrest::constraint::null_space_basis;

use crate::config::{self, BoundConfig, EstimateConfig, EstimateModel, ProjectConfig, SimulateConfig};
use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub model: &'static str,
    pub constraint: &'static str,
    pub n: usize,
    #[serde(serialize_with = "json::vector")]
    pub theta_hat: DVector<f64>,
    #[serde(serialize_with = "json::matrix")]
    pub info_hat: DMatrix<f64>,
    #[serde(serialize_with = "json::vector")]
    pub theta_star: DVector<f64>,
    #[serde(serialize_with = "json::vector")]
    pub theta_tilde: DVector<f64>,
    #[serde(rename = "bound_Q", serialize_with = "json::matrix")]
    pub bound_q: DMatrix<f64>,
    #[serde(serialize_with = "json::real")]
    pub constraint_residual: f64,
    #[serde(serialize_with = "json::real")]
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct BoundReport {
    pub constraint: &'static str,
    pub k: usize,
    pub d: usize,
    #[serde(serialize_with = "json::matrix")]
    pub jacobian: DMatrix<f64>,
    /// Jacobian form.
    #[serde(rename = "bound_Q", serialize_with = "json::matrix")]
    pub bound_q: DMatrix<f64>,
    /// Null-space form.
    #[serde(rename = "bound_Q_nullspace", serialize_with = "json::matrix")]
    pub bound_q_nullspace: DMatrix<f64>,
    /// Largest entrywise difference between the two forms.
    #[serde(serialize_with = "json::real")]
    pub discrepancy: f64,
}

#[derive(Debug, Serialize)]
pub struct ProjectReport {
    pub constraint: &'static str,
    #[serde(serialize_with = "json::vector")]
    pub point: DVector<f64>,
    #[serde(serialize_with = "json::vector")]
    pub theta_tilde: DVector<f64>,
    #[serde(serialize_with = "json::vector")]
    pub lambda: DVector<f64>,
    #[serde(serialize_with = "json::real")]
    pub residual: f64,
    #[serde(serialize_with = "json::real")]
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn model_name(m: EstimateModel) -> &'static str {
    match m {
        EstimateModel::CommonMean => "common_mean",
        EstimateModel::LocationScaleNormal => "location_scale_normal",
        EstimateModel::ExchangeableCopula => "exchangeable_copula",
        EstimateModel::MvnMean => "mvn_mean",
    }
}

fn required(spec: Option<ConstraintSpec>, model: EstimateModel) -> Result<ConstraintSpec, CliError> {
    spec.ok_or_else(|| CliError::Config(format!("model {} requires a constraint", model_name(model))))
}

fn system(spec: Option<&ConstraintSpec>, default: ConstraintSystem, k: usize) -> Result<ConstraintSystem, CliError> {
    match spec {
        Some(s) => Ok(s.build(k)?),
        None => Ok(default),
    }
}

pub fn estimate(cfg: EstimateConfig, config_path: &Path) -> Result<EstimateReport, CliError> {
    let path = config::resolve(config_path, &cfg.data);
    let data = DataMatrix::from_csv_path(&path, cfg.header.into()).map_err(|e| match e {
        Error::Io(source) => CliError::Io { path: path.display().to_string(), source },
        e => e.into(),
    })?;
    let model = cfg.model;
    let (est, spec_name, cs): (EfficientEstimate, &'static str, ConstraintSystem) = match model {
        EstimateModel::CommonMean | EstimateModel::ExchangeableCopula => {
            let (est, lin) = if model == EstimateModel::CommonMean {
                fit_common_mean(&data)?
            } else {
                fit_exchangeable_copula(&data)?
            };
            let k = est.theta_hat().len();
            let name = cfg.constraint.as_ref().map_or("exchangeable", ConstraintSpec::type_name);
            let cs = system(cfg.constraint.as_ref(), lin.into(), k)?;
            (est, name, cs)
        }
        EstimateModel::LocationScaleNormal => {
            let spec = required(cfg.constraint, model)?;
            let (est, _) = fit_location_scale_normal(&data)?;
            (est, spec.type_name(), spec.build(2)?)
        }
        EstimateModel::MvnMean => {
            let spec = required(cfg.constraint, model)?;
            let est = fit_mvn_mean(&data)?;
            let k = est.theta_hat().len();
            (est, spec.type_name(), spec.build(k)?)
        }
    };
    let res = estimate_constrained(&est, &cs)?;
    if !res.converged {
        return Err(CliError::NotConverged { iterations: res.iterations, residual: res.constraint_residual });
    }
    Ok(EstimateReport {
        model: model_name(model),
        constraint: spec_name,
        n: est.n(),
        theta_hat: est.theta_hat().clone(),
        info_hat: est.info_hat().clone(),
        theta_star: res.theta_star,
        theta_tilde: res.theta_tilde,
        bound_q: res.bound_q,
        constraint_residual: res.constraint_residual,
        kkt_residual: res.kkt_residual,
        iterations: res.iterations,
        converged: res.converged,
    })
}

pub fn bound(cfg: BoundConfig) -> Result<BoundReport, CliError> {
    let info = matrix_from_rows(&cfg.info, "info")?;
    if !info.is_square() {
        return Err(Error::Dimension(format!("info must be square, got {}x{}", info.nrows(), info.ncols())).into());
    }
    let k = info.nrows();
    let cs = cfg.constraint.build(k)?;
    let theta = match (&cfg.theta, cfg.constraint.to_linear(k)?) {
        (Some(t), _) => {
            if t.len() != k {
                return Err(Error::Dimension(format!("theta has length {}, expected {k}", t.len())).into());
            }
            DVector::from_column_slice(t)
        }
        (None, Some(_)) => DVector::zeros(k),
        (None, None) => {
            return Err(CliError::Config(format!(
                "constraint {} is nonlinear; theta is required",
                cfg.constraint.type_name()
            )))
        }
    };
    let jac = cs.jacobian(&theta)?;
    let bound_q = constrained_bound(&info, &jac)?;
    let bound_q_nullspace = constrained_bound_nullspace(&info, &null_space_basis(&jac)?)?;
    let discrepancy = max_abs(&(&bound_q - &bound_q_nullspace));
    Ok(BoundReport {
        constraint: cfg.constraint.type_name(),
        k,
        d: cs.dim_constraint(),
        jacobian: jac,
        bound_q,
        bound_q_nullspace,
        discrepancy,
    })
}

pub fn project(cfg: ProjectConfig) -> Result<ProjectReport, CliError> {
    let point = DVector::from_column_slice(&cfg.point);
    if let Some(i) = cfg.point.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("point entry {} is not finite", i + 1)).into());
    }
    let cs = cfg.constraint.build(point.len())?;
    let p = project_to_manifold(&point, &cs)?;
    if !p.converged {
        return Err(CliError::NotConverged { iterations: p.iterations, residual: p.residual });
    }
    Ok(ProjectReport {
        constraint: cfg.constraint.type_name(),
        point,
        theta_tilde: p.theta,
        lambda: p.lambda,
        residual: p.residual,
        kkt_residual: p.kkt_residual,
        iterations: p.iterations,
        converged: p.converged,
    })
}

pub fn simulate_cmd(mut cfg: SimulateConfig, seed: Option<u64>) -> Result<MCReport, CliError> {
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    if cfg.threads == Some(0) {
        return Err(CliError::Config("threads must be at least 1".into()));
    }
    Ok(simulate(&cfg.scenario, cfg.threads)?.report)
}
