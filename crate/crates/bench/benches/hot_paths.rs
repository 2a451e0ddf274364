use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ringfed_bench::{mnist_like, random_params, updates};
use ringfed_core::{fedavg_aggregate, ring_exchange, ExchangeSemantics, Model};

const MLP_PARAMS: usize = 784 * 64 + 64 + 64 * 10 + 10;

fn exchange(c: &mut Criterion) {
    let mut group = c.benchmark_group("ring_exchange");
    for k in [6, 30] {
        let params = random_params(k, MLP_PARAMS, 1);
        group.bench_with_input(BenchmarkId::from_parameter(k), &params, |b, p| {
            b.iter(|| ring_exchange(black_box(p), 0.8, ExchangeSemantics::Snapshot).unwrap())
        });
    }
    group.finish();
}

fn aggregate(c: &mut Criterion) {
    let ups = updates(random_params(30, MLP_PARAMS, 2));
    c.bench_function("fedavg_aggregate/30", |b| {
        b.iter(|| fedavg_aggregate(black_box(&ups)).unwrap())
    });
}

fn mlp_step(c: &mut Criterion) {
    let data = mnist_like(10, 3);
    let model = Model::mlp(784, 64, 10).unwrap();
    let params = model.init_params(4);
    let idx: Vec<usize> = (0..10).collect();
    let batch = data.batch(&idx).unwrap();
    let mut grad = vec![0.0; model.param_count()];
    c.bench_function("mlp_loss_and_grad/batch10", |b| {
        b.iter(|| model.loss_and_grad_into(black_box(&params), &batch, &mut grad).unwrap())
    });
    let test = mnist_like(1000, 5);
    let all: Vec<usize> = (0..1000).collect();
    let big = test.batch(&all).unwrap();
    c.bench_function("mlp_forward/1000", |b| {
        b.iter(|| model.forward_loss(black_box(&params), &big).unwrap())
    });
}

criterion_group!(benches, exchange, aggregate, mlp_step);
criterion_main!(benches);
