use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kp_core::par::Exec;
use kp_core::perturbation::{series_batch, PerturbingMeasure, SolverSpec};
use kp_core::spacetime::{sample_3g, sample_3p, Cauchy, Gaussian};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn three_g(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_3g");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sample_3g(20_000, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn three_p(c: &mut Criterion) {
    let k = Cauchy::new(1).unwrap();
    let mut group = c.benchmark_group("sample_3p");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sample_3p(&k, 20_000, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn series(c: &mut Criterion) {
    let g = Gaussian { dim: 1 };
    let mu = PerturbingMeasure::lebesgue(1.0).unwrap();
    let pts: Vec<(f64, f64)> = (0..20).map(|i| (0.0, -2.0 + 0.2 * i as f64)).collect();
    let mut group = c.benchmark_group("series_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        let spec = SolverSpec {
            exec,
            reduce_space: false,
            ..SolverSpec::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| series_batch(&g, &mu, 1.0, 0.0, &pts, spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, three_g, three_p, series);
criterion_main!(benches);
