use constrest::linalg::symmetric_eigenvalues;
use constrest::montecarlo::simulate;
use constrest::{ConstraintSpec, CvForm, MCReport, Scenario, ScenarioModel};

fn built_ins() -> Vec<(&'static str, ScenarioModel, bool)> {
    vec![
        (
            "common mean",
            ScenarioModel::CommonMean {
                true_theta: vec![1.0; 3],
                cov: vec![vec![1.0, 0.3, 0.3], vec![0.3, 1.0, 0.3], vec![0.3, 0.3, 1.0]],
            },
            false,
        ),
        (
            "cv linear",
            ScenarioModel::LocationScaleCv { true_theta: vec![2.0, 1.0], c: 0.5, form: CvForm::Linear },
            false,
        ),
        (
            "cv ratio",
            ScenarioModel::LocationScaleCv { true_theta: vec![2.0, 1.0], c: 0.5, form: CvForm::Ratio },
            true,
        ),
        ("copula", ScenarioModel::ExchangeableCopula { m: 3, rho: 0.5, marginals: None }, false),
        (
            "circle",
            ScenarioModel::CustomMvnWithConstraint {
                true_theta: vec![0.6, 0.8],
                cov: vec![vec![1.0, 0.2], vec![0.2, 0.5]],
                constraint: ConstraintSpec::Circle { radius: None },
            },
            true,
        ),
    ]
}

fn run(model: ScenarioModel, n: usize, reps: usize, seed: u64) -> MCReport {
    simulate(&Scenario { model, n, reps, seed }, None).unwrap().report
}

#[test]
fn bound_attainment_and_dominance() {
    for (name, model, _) in built_ins() {
        let r = run(model, 1000, 4000, 11);
        assert_eq!(r.successful_reps, 4000, "{name}");
        assert!(r.relative_frobenius_distance <= 0.15, "{name}: {}", r.relative_frobenius_distance);
        let gap = &r.unconstrained_cov - &r.empirical_cov;
        let lowest = symmetric_eigenvalues(&gap)[0];
        assert!(lowest >= -1e-2, "{name}: smallest eigenvalue {lowest}");
        assert!(r.max_residual <= 1e-10, "{name}: residual {}", r.max_residual);
    }
}

#[test]
fn equivalence_decays() {
    for (name, model, nonlinear) in built_ins() {
        let small = run(model.clone(), 100, 300, 12).equivalence_stat;
        let large = run(model, 1600, 300, 12).equivalence_stat;
        if nonlinear {
            assert!(large < small, "{name}: {large} vs {small}");
        } else {
            // θ̃ = θ* exactly up to rounding for linear constraints.
            assert!(small < 1e-8 && large < 1e-8, "{name}: {small} {large}");
        }
    }
}
