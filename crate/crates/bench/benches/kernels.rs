use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vince_core::bank::{kmeans, sample_negatives};
use vince_core::objectives::nce_loss;
use vince_core::{logsumexp, rank_by_similarity, Mlp, NegativeSpec, ParamSet, Tape, Tensor, Witness};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_logsumexp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: Vec<f64> = (0..4097).map(|_| rng.random_range(-10.0..10.0)).collect();
    c.bench_function("logsumexp_4097", |b| b.iter(|| logsumexp(black_box(&v)).unwrap()));
}

fn bench_mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    let mlp = Mlp::new(&mut params, "enc", &[2, 128, 128, 128, 128, 2], true, &mut rng).unwrap();
    let x = random_matrix(128, 2, &mut rng);
    c.bench_function("mlp_forward_backward_128x[2,128x4,2]", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let input = tape.constant(x.clone());
            let out = mlp.forward(&mut tape, &params, input).unwrap();
            let loss = tape.sum(out).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn bench_nce(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, k, d, n) = (128, 513, 2, 2000);
    let q = random_matrix(b, d, &mut rng);
    let keys = random_matrix(n, d, &mut rng);
    let den: Vec<Vec<usize>> = (0..b)
        .map(|r| std::iter::once(r).chain((1..k).map(|_| rng.random_range(0..n))).collect())
        .collect();
    let num: Vec<Vec<usize>> = (0..b).map(|r| vec![r]).collect();
    let witness = Witness::scaled_dot(d, 0.07).unwrap();
    let params = ParamSet::new();
    c.bench_function("nce_loss_grad_b128_k513", |bch| {
        bch.iter(|| {
            let mut tape = Tape::new();
            let qv = tape.constant(q.clone());
            let kv = tape.constant(keys.clone());
            let per = nce_loss(&mut tape, &params, &witness, qv, kv, &den, &num).unwrap();
            let loss = tape.mean(per).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn bench_search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = random_matrix(10000, 8, &mut rng);
    let query: Vec<f64> = bank.row(17).to_vec();
    c.bench_function("rank_by_similarity_10000x8", |b| {
        b.iter(|| rank_by_similarity(black_box(&bank), &query).unwrap())
    });
    let spec = NegativeSpec::ball(10.0);
    c.bench_function("ball_10pct_sample_4096_of_10000x8", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(4),
            |mut r| sample_negatives(&spec, &bank, &query, 17, 4096, None, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_kmeans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points = random_matrix(2000, 8, &mut rng);
    c.bench_function("kmeans_2000x8_k10", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(6),
            |mut r| kmeans(&points, 10, 1, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_logsumexp, bench_mlp, bench_nce, bench_search, bench_kmeans);
criterion_main!(benches);
