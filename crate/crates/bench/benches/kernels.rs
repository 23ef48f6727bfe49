use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use idclip_core::seed;
use idclip_core::tensor::{Tape, Tensor};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [16usize, 64, 128] {
        let mut rng = seed::rng(0, "bench-matmul", &[n as u64]);
        let a = Tensor::randn(&[n, n], 1.0, &mut rng);
        let b = Tensor::randn(&[n, n], 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::new("forward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.constant(a.clone());
                let y = tape.constant(b.clone());
                let z = tape.matmul(x, y).unwrap();
                black_box(tape.value(z).data()[0])
            })
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(a.clone());
                let y = tape.leaf(b.clone());
                let z = tape.matmul(x, y).unwrap();
                let s = tape.sum(z).unwrap();
                black_box(tape.backward(s).unwrap())
            })
        });
    }
    group.finish();
}

fn attention_ops(c: &mut Criterion) {
    let mut rng = seed::rng(0, "bench-softmax", &[]);
    let x = Tensor::randn(&[21, 21], 1.0, &mut rng);
    let gamma = Tensor::filled(&[64], 1.0);
    let beta = Tensor::zeros(&[64]);
    let h = Tensor::randn(&[21, 64], 1.0, &mut rng);
    c.bench_function("softmax_rows_21", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let s = tape.softmax(v, 1).unwrap();
            black_box(tape.value(s).data()[0])
        })
    });
    c.bench_function("layer_norm_21x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.constant(h.clone());
            let g = tape.constant(gamma.clone());
            let be = tape.constant(beta.clone());
            let s = tape.layer_norm(v, g, be, 1e-5).unwrap();
            black_box(tape.value(s).data()[0])
        })
    });
}

criterion_group!(benches, matmul, attention_ops);
criterion_main!(benches);
