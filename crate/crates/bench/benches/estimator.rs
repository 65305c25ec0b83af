use constrest::constraint::null_space_basis;
use constrest::models::vdw_rank_correlation;
use constrest::montecarlo::{run_scenario, Scenario, ScenarioModel};
use constrest::{
    constrained_bound, constrained_bound_nullspace, project_to_manifold, ConstraintSpec, ConstraintSystem,
};
use constrest_bench::{point, random_columns, random_problem};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn bounds(c: &mut Criterion) {
    let mut group = c.benchmark_group("constrained_bound");
    for &(k, d) in &[(3usize, 1usize), (8, 3), (32, 10)] {
        let (info, jac) = random_problem(k, d, 42);
        group.bench_with_input(BenchmarkId::new("jacobian_form", k), &k, |b, _| {
            b.iter(|| constrained_bound(black_box(&info), black_box(&jac)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("nullspace_form", k), &k, |b, _| {
            b.iter(|| {
                let l = null_space_basis(black_box(&jac)).unwrap();
                constrained_bound_nullspace(black_box(&info), &l).unwrap()
            })
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let circle = ConstraintSystem::circle(1.0).unwrap();
    let numeric = circle.clone().into_numeric();
    let p = point(&[0.8, 0.7]);
    c.bench_function("project_circle_analytic", |b| {
        b.iter(|| project_to_manifold(black_box(&p), &circle).unwrap())
    });
    c.bench_function("project_circle_numeric", |b| {
        b.iter(|| project_to_manifold(black_box(&p), &numeric).unwrap())
    });
}

fn rank_correlation(c: &mut Criterion) {
    let cols = random_columns(2000, 2, 7);
    c.bench_function("vdw_rank_correlation_n2000", |b| {
        b.iter(|| vdw_rank_correlation(black_box(&cols[0]), black_box(&cols[1])).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let sc = Scenario {
        model: ScenarioModel::CustomMvnWithConstraint {
            true_theta: vec![0.6, 0.8],
            cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            constraint: ConstraintSpec::Circle { radius: None },
        },
        n: 400,
        reps: 200,
        seed: 1,
    };
    let mut group = c.benchmark_group("montecarlo");
    group.sample_size(10);
    group.bench_function("circle_n400_reps200", |b| b.iter(|| run_scenario(black_box(&sc)).unwrap()));
    group.finish();
}

criterion_group!(benches, bounds, projection, rank_correlation, simulation);
criterion_main!(benches);
