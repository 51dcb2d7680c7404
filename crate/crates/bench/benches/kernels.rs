use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mmadapt::model::Group;
use mmadapt::trainer::{Adam, AdamConfig};
use mmadapt::Graph;
use mmadapt_bench::{randn, trend_model, utterances};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let (a, b) = (randn(&[n, n], 1), randn(&[n, n], 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (x, y) = (g.input(a.clone()), g.input(b.clone()));
                g.matmul(x, y).unwrap()
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for len in [32, 128] {
        let (q, k, v) = (randn(&[len, 64], 3), randn(&[len, 64], 4), randn(&[len, 64], 5));
        group.bench_with_input(BenchmarkId::new("forward_backward", len), &len, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (qv, kv, vv) = (g.leaf(q.clone(), true), g.leaf(k.clone(), true), g.leaf(v.clone(), true));
                let y = g.attention(qv, kv, vv, 4, None).unwrap();
                let l = g.sum(y);
                g.backward(l).unwrap();
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut model = trend_model();
    let batch = utterances(16, 60, 20);
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3));
    let mut group = c.benchmark_group("training_step");
    group.sample_size(10);
    for groups in [vec![Group::EncoderAdapters], Group::ALL.iter().copied().filter(|g| *g != Group::TextEncoder).collect()] {
        let label = if groups.len() == 1 { "encoder_adapters" } else { "asr_path" };
        model.set_trainable(&groups.iter().copied().collect());
        group.bench_function(label, |bench| {
            bench.iter(|| {
                let items: Vec<_> = batch.iter().map(|(f, t)| (f, t.as_slice())).collect();
                let mut g = Graph::new();
                let loss = model.asr_forward_loss(&mut g, &items).unwrap();
                g.backward(loss).unwrap();
                model.store.accumulate_grads(&g);
                adam.step(&mut model.store).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, attention, training_step);
criterion_main!(benches);
