use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lungstack_bench::{clip_samples, meta_rows, prob_rows};
use lungstack_core::aggregator::{aggregate_patients, VotingConfig};
use lungstack_core::dsp::{mel_spectrogram, Clip};
use lungstack_core::encoder::{EncoderBackend, MockEncoder};
use lungstack_core::metrics::{bootstrap_ci, BootstrapConfig};
use lungstack_core::stacker::{Gbdt, GbdtParams};

fn dsp(c: &mut Criterion) {
    let clip = Clip::from_samples(clip_samples(1));
    c.bench_function("mel_spectrogram_64", |b| {
        b.iter(|| mel_spectrogram(black_box(&clip), 64, 25.0, 10.0).unwrap())
    });
    let enc = MockEncoder::new(0);
    c.bench_function("mock_embed", |b| b.iter(|| enc.embed(black_box(&clip)).unwrap()));
}

fn boosting(c: &mut Criterion) {
    let (x, y) = meta_rows(600, 11, 3);
    let params = GbdtParams {
        n_estimators: 50,
        max_depth: 6,
        num_leaves: 31,
        min_child_samples: 10,
        learning_rate: 0.1,
        ..GbdtParams::default()
    };
    let mut g = c.benchmark_group("gbdt");
    g.sample_size(10);
    g.bench_function("fit_600x11_k3", |b| b.iter(|| Gbdt::fit(x.view(), &y, 3, &params, None).unwrap()));
    let model = Gbdt::fit(x.view(), &y, 3, &params, None).unwrap();
    g.bench_function("predict_600x11_k3", |b| b.iter(|| model.predict_proba(black_box(x.view())).unwrap()));
    g.finish();
}

fn patients(c: &mut Criterion) {
    let per = 8;
    let n = 1000;
    let probs = prob_rows(n * per, 4, 3);
    let groups: Vec<(String, Vec<usize>)> =
        (0..n).map(|p| (format!("p{p}"), (p * per..(p + 1) * per).collect())).collect();
    let cfg = VotingConfig::default();
    c.bench_function("aggregate_1000_patients", |b| {
        b.iter(|| aggregate_patients(probs.view(), black_box(&groups), &cfg).unwrap())
    });

    let truth: Vec<usize> = (0..n * per).map(|i| i % 4).collect();
    let pred: Vec<usize> = (0..n * per).map(|i| if i % 5 == 0 { (i + 1) % 4 } else { i % 4 }).collect();
    let idx: Vec<Vec<usize>> = groups.into_iter().map(|(_, r)| r).collect();
    let accuracy = |items: &[usize]| {
        Some(items.iter().filter(|&&i| truth[i] == pred[i]).count() as f64 / items.len() as f64)
    };
    let bcfg = BootstrapConfig {
        replicates: 1000,
        seed: 7,
    };
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("accuracy_1000x1000", |b| b.iter(|| bootstrap_ci(accuracy, black_box(&idx), &bcfg).unwrap()));
    g.finish();
}

criterion_group!(benches, dsp, boosting, patients);
criterion_main!(benches);
