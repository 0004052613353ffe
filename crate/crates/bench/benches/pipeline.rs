use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dpsynth_bench::{fitted, small_hyper, table};
use dpsynth_core::neural::{per_example_gradients, standard_normal_vec, Example};
use dpsynth_core::pipeline::synthesize;
use dpsynth_core::privacy::{calibrate_encoder, default_orders, dpsgd_moment, total_privacy};
use dpsynth_core::rng::seeded;
use dpsynth_core::{mog, pca, DecoderHead, Networks, PrivacySpec, VarianceMode};

fn accountant(c: &mut Criterion) {
    let mut g = c.benchmark_group("accountant");
    for order in [8u32, 32, 128] {
        g.bench_with_input(BenchmarkId::new("dpsgd_moment", order), &order, |b, &a| {
            b.iter(|| dpsgd_moment(black_box(a), 300.0 / 63_000.0, 1.4).unwrap())
        });
    }
    let plan = small_hyper(10).plan(63_000);
    let privacy = PrivacySpec::new(1.0, 1e-5);
    g.bench_function("calibrate_encoder", |b| b.iter(|| calibrate_encoder(&privacy, black_box(&plan)).unwrap()));
    let mechs = plan.mechanisms(100.0, 150.0, 1.4);
    let orders = default_orders();
    g.bench_function("total_privacy", |b| b.iter(|| total_privacy(black_box(&mechs), 1e-5, &orders).unwrap()));
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoder");
    g.sample_size(20);
    for d in [10usize, 50] {
        let data = table(d, 5_000, 1);
        g.bench_with_input(BenchmarkId::new("pca_fit", d), &data, |b, t| {
            b.iter(|| pca::fit(t.matrix(), 5, 10.0, &mut seeded(2)).unwrap())
        });
    }
    let data = table(10, 5_000, 1);
    let z = pca::fit(data.matrix(), 5, 0.0, &mut seeded(2)).unwrap().transform_all(data.matrix()).unwrap();
    g.bench_function("dp_em_fit_k3_t5", |b| b.iter(|| mog::dp_em_fit(&z, 3, 5, 20.0, &mut seeded(3)).unwrap()));
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let mut g = c.benchmark_group("gradients");
    let dp = 5;
    let data = table(20, 200, 1);
    let p = pca::fit(data.matrix(), dp, 0.0, &mut seeded(2)).unwrap();
    let z = p.transform_all(data.matrix()).unwrap();
    let prior = mog::initial_mixture(3, dp);
    let mut rng = seeded(4);
    let batch: Vec<Example> = (0..data.n_rows())
        .map(|i| Example {
            x: data.matrix().row(i),
            z_mean: z.row(i),
            eps: vec![standard_normal_vec(dp, &mut rng)],
        })
        .collect();
    for hidden in [64usize, 256] {
        let nets = Networks::new(data.schema().width(), dp, hidden, DecoderHead::Bernoulli, VarianceMode::Learned, &mut seeded(5));
        g.bench_with_input(BenchmarkId::new("per_example_batch200", hidden), &nets, |b, n| {
            b.iter(|| per_example_gradients(n, &prior, black_box(&batch)).unwrap())
        });
    }
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("end_to_end");
    g.sample_size(10);
    g.bench_function("fit_d8_n2000", |b| b.iter(|| fitted(8, 2_000, 1)));
    let model = fitted(8, 2_000, 1).model;
    g.bench_function("synthesize_1000", |b| {
        b.iter(|| synthesize(&model, 1_000, None, false, &mut seeded(6)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, accountant, encoder, gradients, end_to_end);
criterion_main!(benches);
