use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use weaknull::coefficients::model_condition_h;
use weaknull::free_wave::FreeWave;
use weaknull::geometry::{initial_field, Profile, RadialChart};
use weaknull::par::Execution;
use weaknull::solver::{Evolution, SolverConfig};

fn evolution(c: &mut Criterion) {
    let chart = RadialChart::new(4, 1.0).unwrap();
    let coeffs =
        model_condition_h(&DMatrix::identity(2, 2), &[0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
    let wave = |amp: f64| {
        FreeWave::outgoing(Profile::GaussianInRootR { amplitude: amp, center: 0.7, width: 0.14, root: 4 })
            .initial_data()
    };
    let mut group = c.benchmark_group("evolve_condition_h");
    group.sample_size(10);
    for n in [256usize, 1024] {
        let data = initial_field(&[wave(1e-2), wave(-5e-3)], &chart, n).unwrap();
        let cfg = SolverConfig {
            n_rho: n,
            t_min: 0.5,
            delta_tau: 1e-3,
            snapshot_stride: 1000,
            ..Default::default()
        };
        for (label, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            let ev = Evolution::new(coeffs.clone(), chart, cfg, exec).unwrap();
            group.bench_with_input(BenchmarkId::new(label, n), &data, |b, d| {
                b.iter(|| ev.evolve(d).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, evolution);
criterion_main!(benches);
