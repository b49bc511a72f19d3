use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use cenc_bench::small_trainer;
use cenc_core::LossMode;

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_32px_base8");
    group.sample_size(20);
    for (name, mode) in [("l2", LossMode::L2Only), ("joint", LossMode::Joint)] {
        let (trainer, data) = small_trainer(mode, 16);
        group.bench_function(name, |b| {
            b.iter_batched_ref(|| trainer.clone(), |t| t.train_step(&data).unwrap(), BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
