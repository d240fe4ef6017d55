use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use weakdap_bench::{label_space, prob_vectors, toy_instances};
use weakdap_core::weaklabel::{self, entropy_bits, entropy_keep_mask, FeaturizerConfig};
use weakdap_core::TrainConfig;

fn entropy(c: &mut Criterion) {
    let probs = prob_vectors(10_000, 7);
    c.bench_function("entropy_bits/10k x 7", |b| {
        b.iter(|| probs.iter().map(|p| entropy_bits(black_box(p))).sum::<f64>())
    });
}

fn keep_mask(c: &mut Criterion) {
    let mut g = c.benchmark_group("entropy_keep_mask");
    for n in [1_000usize, 10_000, 100_000] {
        let entropies: Vec<f64> = prob_vectors(n, 7).iter().map(|p| entropy_bits(p)).collect();
        let matched: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| entropy_keep_mask(black_box(&matched), black_box(&entropies), 80.0))
        });
    }
    g.finish();
}

fn labeler(c: &mut Criterion) {
    let space = label_space();
    let feat = FeaturizerConfig::default();
    let data = toy_instances(700);
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let model = weaklabel::train(&data, &space, feat, None, &cfg).unwrap();

    c.bench_function("featurize+predict/700", |b| {
        b.iter(|| data.iter().map(|(x, _)| model.predict_proba(black_box(x)).argmax().0).sum::<usize>())
    });
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("700 instances x 5 epochs", |b| {
        b.iter(|| weaklabel::train(black_box(&data), &space, feat, None, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, entropy, keep_mask, labeler);
criterion_main!(benches);
