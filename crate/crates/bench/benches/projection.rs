use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sml_core::diffcore::GradVector;
use sml_core::scheduler::{combine_selected, project, StrategyKind, TaskGradient};
use sml_core::task::Task;

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> GradVector {
    GradVector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn bench_project(c: &mut Criterion) {
    let mut group = c.benchmark_group("project");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [64, 4096, 262_144] {
        let a = random_vector(&mut rng, n);
        let b = random_vector(&mut rng, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| project(&a, &b).unwrap())
        });
    }
    group.finish();
}

fn bench_combine(c: &mut Criterion) {
    let mut group = c.benchmark_group("combine_four_aux");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let main = random_vector(&mut rng, n);
    let aux: Vec<TaskGradient> = Task::AUXILIARY
        .iter()
        .map(|&task| TaskGradient {
            task,
            grad: random_vector(&mut rng, n),
        })
        .collect();
    for strategy in StrategyKind::ALL {
        group.bench_function(strategy.name(), |bench| {
            bench.iter(|| combine_selected(&main, &aux, 0.5, strategy).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_project, bench_combine);
criterion_main!(benches);
