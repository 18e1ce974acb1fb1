use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stochsep::ensemble::{run_ensemble, EnsembleConfig};
use stochsep::exec::Execution;
use stochsep::{Mesh1D, NoiseSpec, PotentialSpec, Problem, SolverConfig};

fn small_problem() -> Problem {
    let pot = PotentialSpec::logarithmic(1.0, 2.0).unwrap();
    let noise = NoiseSpec::power_family(3, 16, 1.0).unwrap();
    let mesh = Mesh1D::new(1.0, 64).unwrap();
    let cfg = SolverConfig::new(0.02, 1e-4, 1e-4, 2.0);
    Problem::new(pot, noise, mesh, cfg, 0.5).unwrap()
}

fn ensemble(c: &mut Criterion) {
    let pr = small_problem();
    let cfg = EnsembleConfig {
        n_paths: 32,
        base_seed: 1,
        delta_queries: vec![0.1, 0.2],
        eta_queries: vec![],
        epsilon_grid: vec![],
    };
    let mut g = c.benchmark_group("ensemble_32_paths");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| {
            b.iter(|| run_ensemble(black_box(&pr), black_box(&cfg), None, exec).unwrap().summary.lambda_mean)
        });
    }
    g.finish();
}

criterion_group!(benches, ensemble);
criterion_main!(benches);
