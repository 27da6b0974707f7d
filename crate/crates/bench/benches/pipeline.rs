use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use idxmvs_bench::{model_config, scene};
use idxmvs_core::costvol::{build_cost_volume, build_matching_pyramid, lookup};
use idxmvs_core::geometry::make_depth_bins;
use idxmvs_core::gradsuite::{run_suite, suite};
use idxmvs_core::training::TrainConfig;
use idxmvs_core::{Graph, Model, RunOptions, Tensor, Trainer, Variant};

fn cost_volume(c: &mut Criterion) {
    let sample = scene(64, 3);
    let bins = make_depth_bins(0.25, 20.0, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let k: Vec<_> = sample.intrinsics.iter().map(|k| k.scaled(4)).collect();
    let feats: Vec<Tensor> = (0..3).map(|_| Tensor::from_fn(&[16, 16, 128], |_| rng.random_range(-1.0..1.0))).collect();
    let poses = sample.relative_poses();
    c.bench_function("cost_volume_16x16x128_64bins_2src", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let f: Vec<_> = feats.iter().map(|t| g.constant(t.clone())).collect();
            black_box(build_cost_volume(&mut g, f[0], &f[1..], &bins, &k[0], &k[1..], &poses).unwrap());
        })
    });

    let volume = Tensor::from_fn(&[16, 16, 64], |_| rng.random_range(-1.0..1.0));
    let phi = Tensor::from_fn(&[16, 16], |_| rng.random_range(0.0..63.0));
    c.bench_function("pyramid_and_lookup_16x16x64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let v = g.constant(volume.clone());
            let p = g.constant(phi.clone());
            let pyr = build_matching_pyramid(&mut g, v, false).unwrap();
            black_box(lookup(&mut g, &pyr, p, 4).unwrap());
        })
    });
}

fn forward(c: &mut Criterion) {
    let sample = scene(32, 3);
    let mut group = c.benchmark_group("forward_32x32_T8");
    group.sample_size(10);
    for variant in Variant::ALL {
        let model = Model::new(model_config(variant)).unwrap();
        let params = model.init_params(0);
        let opts = RunOptions::inference(8);
        group.bench_with_input(BenchmarkId::from_parameter(variant.name()), &variant, |b, _| {
            b.iter(|| black_box(model.predict(&params, &sample, &opts).unwrap()))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let sample = scene(32, 3);
    let model = Model::new(model_config(Variant::PoseAttention)).unwrap();
    let params = model.init_params(0);
    let config = TrainConfig { iterations_train: 8, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, params, config).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_32x32_T8_pose_atten", |b| b.iter(|| black_box(trainer.train_step(&sample, 1e-4).unwrap())));
    group.finish();
}

fn gradient_suite(c: &mut Criterion) {
    let checks = suite();
    let mut group = c.benchmark_group("gradcheck");
    group.sample_size(10);
    group.bench_function("full_suite", |b| b.iter(|| black_box(run_suite(&checks))));
    group.finish();
}

criterion_group!(benches, cost_volume, forward, train_step, gradient_suite);
criterion_main!(benches);
