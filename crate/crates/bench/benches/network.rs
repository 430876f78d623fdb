use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pgnkit_bench::{states, victim};
use pgnkit_core::environments::EnvKind;
use pgnkit_core::Matrix;

fn forward_backward(c: &mut Criterion) {
    let env = EnvKind::Collector;
    let net = victim(env).into_network();
    let mut group = c.benchmark_group("dense");
    for batch in [1usize, 32, 128] {
        let rows = states(env, batch);
        let xs = Matrix::from_rows(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
        let upstream = Matrix::zeros(batch, env.descriptor().action_count);
        group.bench_with_input(BenchmarkId::new("forward", batch), &xs, |b, xs| {
            b.iter(|| net.forward_batch(xs).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", batch), &xs, |b, xs| {
            b.iter(|| {
                let pass = net.forward_pass(xs).unwrap();
                net.backward(&pass, &upstream, true, true).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
