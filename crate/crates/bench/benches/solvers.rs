use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use degenctrl_core::control::HumOperator;
use degenctrl_core::scenarios::{by_name, control_demo, CONTROL_S};
use degenctrl_core::{audit, memory_fixed_point, solve_adjoint, solve_forward, EstimateId, Field};

fn solvers(c: &mut Criterion) {
    let sc = by_name("wd_left").unwrap();
    let mut group = c.benchmark_group("solve");
    for refine in [1, 2, 4] {
        let grid = sc.grid(refine).unwrap();
        let fwd = sc.forward_problem(&grid, false);
        let mem = sc.forward_problem(&grid, true);
        let adj = sc.adjoint_problem(&grid);
        group.bench_with_input(BenchmarkId::new("forward", refine), &fwd, |b, p| b.iter(|| solve_forward(black_box(p))));
        group.bench_with_input(BenchmarkId::new("forward_memory", refine), &mem, |b, p| {
            b.iter(|| solve_forward(black_box(p)))
        });
        group.bench_with_input(BenchmarkId::new("adjoint", refine), &adj, |b, p| b.iter(|| solve_adjoint(black_box(p))));
    }
    group.finish();
}

fn weights(c: &mut Criterion) {
    let mut group = c.benchmark_group("weights");
    for name in ["wd_left", "sd_left", "sd_right"] {
        let sc = by_name(name).unwrap();
        let o = sc.natural_orientation();
        group.bench_function(name, |b| b.iter(|| sc.weights(black_box(o), 1.0)));
    }
    group.finish();
}

fn carleman(c: &mut Criterion) {
    let scen = by_name("uniform").unwrap().carleman(1).unwrap();
    let mut group = c.benchmark_group("carleman");
    for est in [EstimateId::Thm31, EstimateId::PropModifFinal, EstimateId::HardyPoincare] {
        group.bench_function(est.name(), |b| b.iter(|| audit(est, &scen, black_box(&[1.0, 3.0, 10.0]))));
    }
    group.finish();
}

fn control(c: &mut Criterion) {
    let mut group = c.benchmark_group("control");
    group.sample_size(10);
    for refine in [1, 2] {
        let problem = control_demo(CONTROL_S).control_problem(refine, CONTROL_S, 1e-4).unwrap();
        let op = HumOperator::new(&problem).unwrap();
        let mut z = Field::from_fn(&problem.grid, |a, x| a * x * (1.0 - x));
        op.project(&mut z);
        group.bench_with_input(BenchmarkId::new("gram_apply", refine), &z, |b, z| b.iter(|| op.apply(black_box(z))));
        group.bench_with_input(BenchmarkId::new("fixed_point", refine), &problem, |b, p| {
            b.iter(|| memory_fixed_point(black_box(p), 1e-6, 20))
        });
    }
    group.finish();
}

criterion_group!(benches, solvers, weights, carleman, control);
criterion_main!(benches);
