//! Seeded Monte Carlo engine for the constrained estimators.
//!
//! A [`Scenario`] fixes a true parameter `θ₀` on the constraint manifold, a
//! nuisance specification, the sample size and the replication count. Each
//! replication draws its own ChaCha20 stream `(seed, rep)`, so results do
//! not depend on scheduling: replications run on the rayon pool and are
//! reduced in replication order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constraint::{ConstraintSpec, ConstraintSystem, CvForm, LinearConstraint};
use crate::error::{Error, Result};
use crate::estimator::{constrained_bound, estimate_constrained, EfficientEstimate};
use crate::json;
use crate::linalg::{self, max_abs_vec, spd_factor, spd_inverse};
use crate::models::copula::{check_correlation, exchangeable_correlation};
use crate::models::{self, DataMatrix, LocationScaleInfo};

/// Replication counts below this are flagged as non-inferential.
pub const MIN_INFERENTIAL_REPS: usize = 30;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

const TRUTH_TOL: f64 = 1e-12;

/// Marginal distribution applied to the Gaussian copula scores, `F⁻¹(Φ(z))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    #[default]
    Uniform,
    Normal,
    /// Unit-rate exponential.
    Exponential,
}

impl Marginal {
    fn transform(self, z: f64, phi: &Normal) -> f64 {
        match self {
            Marginal::Uniform => phi.cdf(z),
            Marginal::Normal => z,
            // −ln(1 − Φ(z)) = −ln Φ(−z)
            Marginal::Exponential => -phi.cdf(-z).ln(),
        }
    }
}

/// The data-generating model of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ScenarioModel {
    /// `N(θ₀, Σ)` with `θ₀ = c𝟙`, estimated under the common-mean constraint.
    CommonMean {
        true_theta: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    /// `N(μ, σ²)` with `θ₀ = (μ, σ)` and `σ = cμ`.
    LocationScaleCv {
        true_theta: Vec<f64>,
        c: f64,
        #[serde(default)]
        form: CvForm,
    },
    /// `m`-variate Gaussian copula with all correlations equal to `rho`.
    ExchangeableCopula {
        m: usize,
        rho: f64,
        #[serde(default)]
        marginals: Option<Vec<Marginal>>,
    },
    /// `N(θ₀, Σ)` mean estimated under an arbitrary constraint.
    CustomMvnWithConstraint {
        true_theta: Vec<f64>,
        cov: Vec<Vec<f64>>,
        constraint: ConstraintSpec,
    },
}

impl ScenarioModel {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioModel::CommonMean { .. } => "common_mean",
            ScenarioModel::LocationScaleCv { .. } => "location_scale_cv",
            ScenarioModel::ExchangeableCopula { .. } => "exchangeable_copula",
            ScenarioModel::CustomMvnWithConstraint { .. } => "custom_mvn_with_constraint",
        }
    }
}

/// A complete simulation specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub model: ScenarioModel,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Aggregate results of a scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub model: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Replications that produced a converged constrained estimate.
    pub successful_reps: usize,
    #[serde(serialize_with = "json::vector")]
    pub true_theta: DVector<f64>,
    /// Covariance of `√n(θ̃ − θ₀)`, centred at `θ₀`, `reps − 1` denominator.
    #[serde(serialize_with = "json::matrix")]
    pub empirical_cov: DMatrix<f64>,
    /// Constrained information bound at `θ₀`.
    #[serde(serialize_with = "json::matrix")]
    pub theoretical_bound: DMatrix<f64>,
    /// Covariance of `√n(θ̂ − θ₀)`.
    #[serde(serialize_with = "json::matrix")]
    pub unconstrained_cov: DMatrix<f64>,
    /// `‖empirical_cov − theoretical_bound‖_F / ‖theoretical_bound‖_F`.
    #[serde(serialize_with = "json::real")]
    pub relative_frobenius_distance: f64,
    /// Median over replications of `√n‖θ̃ − θ*‖`.
    #[serde(serialize_with = "json::real")]
    pub equivalence_stat: f64,
    pub fit_failures: usize,
    pub convergence_failures: usize,
    /// Largest `‖S(θ̃)‖∞` among successful replications.
    #[serde(serialize_with = "json::real")]
    pub max_residual: f64,
    pub non_inferential: bool,
}

/// Per-replication estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub theta_hat: DVector<f64>,
    pub theta_star: DVector<f64>,
    pub theta_tilde: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A report together with the successful replications it was built from.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub report: MCReport,
    pub replicates: Vec<Replicate>,
}

/// Multivariate normal sampler using the Cholesky factor of the covariance.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::dimension(format!(
                "covariance is {}x{}, mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        let factor = spd_factor(cov, "covariance matrix")?.l();
        Ok(Self { mean, factor })
    }

    /// `n × k` draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let k = self.mean.len();
        let z = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = &self.factor * z;
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x.transpose()
    }
}

/// `n` i.i.d. draws from `N(mean, cov)` as rows.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(MvnSampler::new(mean.clone(), cov)?.sample(n, rng))
}

/// `n` draws whose normal scores have correlation `corr`; column `j` is
/// passed through `F_j⁻¹ ∘ Φ` (uniform margins when `marginals` is empty).
pub fn sample_gaussian_copula<R: Rng + ?Sized>(
    corr: &DMatrix<f64>,
    marginals: &[Marginal],
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_correlation(corr)?;
    let m = corr.nrows();
    if !marginals.is_empty() && marginals.len() != m {
        return Err(Error::dimension(format!(
            "{} marginals for {m} margins",
            marginals.len()
        )));
    }
    let z = MvnSampler::new(DVector::zeros(m), corr)?.sample(n, rng);
    let phi = Normal::standard();
    Ok(DMatrix::from_fn(n, m, |i, j| {
        marginals.get(j).copied().unwrap_or_default().transform(z[(i, j)], &phi)
    }))
}

enum Generator {
    Mvn(MvnSampler),
    Copula { corr: DMatrix<f64>, marginals: Vec<Marginal> },
}

enum Fit {
    MvnMean,
    LocationScale,
    Copula,
}

/// Scenario with its constraint, truth and bound resolved.
struct Prepared {
    constraint: ConstraintSystem,
    theta0: DVector<f64>,
    bound: DMatrix<f64>,
    generator: Generator,
    fit: Fit,
}

fn check_truth(cs: &ConstraintSystem, theta0: &DVector<f64>) -> Result<()> {
    let s = cs.eval(theta0)?;
    if max_abs_vec(&s) > TRUTH_TOL {
        return Err(Error::invalid(format!(
            "true_theta violates the constraint: |S| = {:e}",
            max_abs_vec(&s)
        )));
    }
    Ok(())
}

impl Scenario {
    /// Checks the scenario and resolves everything a replication needs.
    fn prepare(&self) -> Result<Prepared> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        match &self.model {
            ScenarioModel::CommonMean { true_theta, cov } => {
                let theta0 = DVector::from_column_slice(true_theta);
                let cov = linalg::matrix_from_rows(cov, "cov")?;
                let k = theta0.len();
                let lc = LinearConstraint::exchangeable(k)?;
                self.mvn(theta0, cov, lc.into())
            }
            ScenarioModel::CustomMvnWithConstraint { true_theta, cov, constraint } => {
                let theta0 = DVector::from_column_slice(true_theta);
                let cov = linalg::matrix_from_rows(cov, "cov")?;
                let cs = constraint.build(theta0.len())?;
                self.mvn(theta0, cov, cs)
            }
            ScenarioModel::LocationScaleCv { true_theta, c, form } => {
                if true_theta.len() != 2 {
                    return Err(Error::dimension("location_scale_cv true_theta must be (mu, sigma)"));
                }
                if self.n < 3 {
                    return Err(Error::invalid("location_scale_cv needs n >= 3"));
                }
                let theta0 = DVector::from_column_slice(true_theta);
                let sigma = theta0[1];
                if sigma.is_nan() || sigma <= 0.0 {
                    return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
                }
                let cs = models::cv_constraint(*c, *form)?;
                check_truth(&cs, &theta0)?;
                let info = LocationScaleInfo::NORMAL.information(sigma);
                let bound = constrained_bound(&info, &cs.jacobian(&theta0)?)?;
                let sampler = MvnSampler::new(theta0.rows(0, 1).into_owned(), &DMatrix::from_element(1, 1, sigma * sigma))?;
                Ok(Prepared {
                    constraint: cs,
                    theta0,
                    bound,
                    generator: Generator::Mvn(sampler),
                    fit: Fit::LocationScale,
                })
            }
            ScenarioModel::ExchangeableCopula { m, rho, marginals } => {
                let m = *m;
                if m < 3 {
                    return Err(Error::invalid(format!("exchangeable_copula needs m >= 3, got {m}")));
                }
                let lower = -1.0 / (m as f64 - 1.0);
                if !(*rho > lower && *rho < 1.0) {
                    return Err(Error::invalid(format!(
                        "rho = {rho} outside ({lower}, 1) for m = {m}"
                    )));
                }
                let marginals = marginals.clone().unwrap_or_default();
                if !marginals.is_empty() && marginals.len() != m {
                    return Err(Error::dimension(format!("{} marginals for m = {m}", marginals.len())));
                }
                let corr = exchangeable_correlation(m, *rho);
                let k = m * (m - 1) / 2;
                let lc = LinearConstraint::exchangeable(k)?;
                let theta0 = DVector::from_element(k, *rho);
                let info = models::copula_information(&corr)?;
                let bound = constrained_bound(&info, &lc.r().transpose())?;
                Ok(Prepared {
                    constraint: lc.into(),
                    theta0,
                    bound,
                    generator: Generator::Copula { corr, marginals },
                    fit: Fit::Copula,
                })
            }
        }
    }

    fn mvn(&self, theta0: DVector<f64>, cov: DMatrix<f64>, cs: ConstraintSystem) -> Result<Prepared> {
        let k = theta0.len();
        if cs.dim_param() != k {
            return Err(Error::dimension(format!(
                "constraint acts on dimension {}, true_theta has length {k}",
                cs.dim_param()
            )));
        }
        if self.n <= k {
            return Err(Error::invalid(format!("n = {} must exceed the dimension {k}", self.n)));
        }
        check_truth(&cs, &theta0)?;
        let sampler = MvnSampler::new(theta0.clone(), &cov)?;
        let info = spd_inverse(&cov, "covariance matrix")?;
        let bound = constrained_bound(&info, &cs.jacobian(&theta0)?)?;
        Ok(Prepared { constraint: cs, theta0, bound, generator: Generator::Mvn(sampler), fit: Fit::MvnMean })
    }
}

/// Independent random stream for replication `rep`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

enum Outcome {
    Done(Replicate),
    FitFailed(String),
    NotConverged(String),
}

impl Prepared {
    fn replicate(&self, n: usize, seed: u64, rep: u64) -> Outcome {
        let mut rng = replication_rng(seed, rep);
        let raw = match &self.generator {
            Generator::Mvn(s) => s.sample(n, &mut rng),
            Generator::Copula { corr, marginals } => match sample_gaussian_copula(corr, marginals, n, &mut rng) {
                Ok(x) => x,
                Err(e) => return Outcome::FitFailed(e.to_string()),
            },
        };
        let est = DataMatrix::new(raw).and_then(|data| self.fit(&data));
        let est = match est {
            Ok(e) => e,
            Err(e) => return Outcome::FitFailed(format!("replication {rep}: {e}")),
        };
        match estimate_constrained(&est, &self.constraint) {
            Ok(r) => {
                let rec = Replicate {
                    theta_hat: est.theta_hat().clone(),
                    theta_star: r.theta_star,
                    theta_tilde: r.theta_tilde,
                    residual: r.constraint_residual,
                    iterations: r.iterations,
                    converged: r.converged,
                };
                if rec.converged {
                    Outcome::Done(rec)
                } else {
                    Outcome::NotConverged(format!(
                        "replication {rep}: projection residual {:e} after {} iterations",
                        rec.residual, rec.iterations
                    ))
                }
            }
            Err(e) => Outcome::FitFailed(format!("replication {rep}: {e}")),
        }
    }

    fn fit(&self, data: &DataMatrix) -> Result<EfficientEstimate> {
        match self.fit {
            Fit::MvnMean => models::fit_mvn_mean(data),
            Fit::LocationScale => models::fit_location_scale_normal(data).map(|(e, _)| e),
            Fit::Copula => models::fit_exchangeable_copula(data).map(|(e, _)| e),
        }
    }
}

/// Runs a scenario on the global rayon pool.
pub fn run_scenario(sc: &Scenario) -> Result<MCReport> {
    simulate(sc, None).map(|s| s.report)
}

/// Runs a scenario on a dedicated pool of `threads` workers.
pub fn run_scenario_with_threads(sc: &Scenario, threads: usize) -> Result<MCReport> {
    simulate(sc, Some(threads)).map(|s| s.report)
}

/// Runs a scenario and keeps the per-replication estimates.
pub fn simulate(sc: &Scenario, threads: Option<usize>) -> Result<Simulation> {
    let prepared = sc.prepare()?;
    let work = || -> Vec<Outcome> {
        (0..sc.reps as u64)
            .into_par_iter()
            .map(|rep| prepared.replicate(sc.n, sc.seed, rep))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    aggregate(sc, &prepared, outcomes)
}

fn aggregate(sc: &Scenario, prepared: &Prepared, outcomes: Vec<Outcome>) -> Result<Simulation> {
    let mut replicates = Vec::with_capacity(outcomes.len());
    let (mut fit_failures, mut convergence_failures) = (0, 0);
    let mut first_failure = None;
    for outcome in outcomes {
        match outcome {
            Outcome::Done(r) => replicates.push(r),
            Outcome::FitFailed(msg) => {
                fit_failures += 1;
                first_failure.get_or_insert(msg);
            }
            Outcome::NotConverged(msg) => {
                convergence_failures += 1;
                first_failure.get_or_insert(msg);
            }
        }
    }
    let failures = fit_failures + convergence_failures;
    if failures as f64 > MAX_FAILURE_FRACTION * sc.reps as f64 {
        return Err(Error::TooManyFailures {
            failures,
            reps: sc.reps,
            first: first_failure.unwrap_or_default(),
        });
    }

    let root_n = (sc.n as f64).sqrt();
    let theta0 = &prepared.theta0;
    let scaled = |pick: fn(&Replicate) -> &DVector<f64>| -> Vec<DVector<f64>> {
        replicates.iter().map(|r| (pick(r) - theta0) * root_n).collect()
    };
    let empirical_cov = centred_covariance(&scaled(|r| &r.theta_tilde), theta0.len());
    let unconstrained_cov = centred_covariance(&scaled(|r| &r.theta_hat), theta0.len());
    let mut gaps: Vec<f64> = replicates
        .iter()
        .map(|r| root_n * (&r.theta_tilde - &r.theta_star).norm())
        .collect();
    let max_residual = replicates.iter().map(|r| r.residual).fold(0.0, f64::max);

    let report = MCReport {
        model: sc.model.name().to_string(),
        n: sc.n,
        reps: sc.reps,
        seed: sc.seed,
        successful_reps: replicates.len(),
        true_theta: theta0.clone(),
        relative_frobenius_distance: linalg::relative_frobenius(&empirical_cov, &prepared.bound),
        empirical_cov,
        theoretical_bound: prepared.bound.clone(),
        unconstrained_cov,
        equivalence_stat: median(&mut gaps),
        fit_failures,
        convergence_failures,
        max_residual,
        non_inferential: sc.reps < MIN_INFERENTIAL_REPS,
    };
    Ok(Simulation { report, replicates })
}

/// `Σ xᵢxᵢᵀ / (count − 1)` for already-centred vectors; zero for fewer
/// than two.
fn centred_covariance(xs: &[DVector<f64>], k: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(k, k);
    if xs.len() < 2 {
        return acc;
    }
    for x in xs {
        acc.ger(1.0, x, x, 1.0);
    }
    linalg::symmetrize(&(acc / (xs.len() - 1) as f64))
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        0.5 * (xs[mid - 1] + xs[mid])
    }
}
