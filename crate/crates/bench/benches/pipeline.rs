use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use umbra_bench::{random_model, Workload};
use umbra_core::estimate::{features, GeometricEstimator};
use umbra_core::patches::extract_all;
use umbra_core::pipeline::{Estimator, Pipeline, PipelineConfig};
use umbra_core::suppress::suppress;
use umbra_core::{ChannelMode, LedSet};

fn stages(c: &mut Criterion) {
    let w = Workload::three_fingers();
    let leds = LedSet::new(&[3, 4]).unwrap();
    let sf = suppress(&w.frame, leds, ChannelMode::MultiChannel);
    let patches = extract_all(&sf, &w.keypoints);
    let model = random_model(leds, ChannelMode::MultiChannel);

    c.bench_function("suppress {3,4} multi", |b| {
        b.iter(|| suppress(black_box(&w.frame), leds, ChannelMode::MultiChannel))
    });
    c.bench_function("suppress {1,2,3,4} single", |b| {
        let all = LedSet::new(&[1, 2, 3, 4]).unwrap();
        b.iter(|| suppress(black_box(&w.frame), all, ChannelMode::SingleChannel))
    });
    c.bench_function("extract 3 patches", |b| {
        b.iter(|| extract_all(black_box(&sf), &w.keypoints))
    });
    c.bench_function("learned inference per patch", |b| {
        b.iter(|| {
            let x = ndarray::Array1::from(features(black_box(&patches[0])));
            model.logit(x.view())
        })
    });
    let geo = GeometricEstimator::from_scene(&w.scene);
    let kp = w.keypoints.finger(3).unwrap();
    c.bench_function("geometric hover per finger", |b| {
        b.iter(|| geo.hover(black_box(&sf), kp))
    });
}

fn end_to_end(c: &mut Criterion) {
    let w = Workload::three_fingers();
    let leds = LedSet::new(&[3, 4]).unwrap();
    let mut learned = Pipeline::new(
        Estimator::Learned(random_model(leds, ChannelMode::MultiChannel)),
        PipelineConfig::default(),
    )
    .unwrap();
    c.bench_function("pipeline composite learned", |b| {
        b.iter(|| {
            learned
                .process(black_box(&w.frame), &w.keypoints, None)
                .unwrap()
        })
    });
    let mut geometric = Pipeline::new(
        Estimator::Geometric(GeometricEstimator::from_scene(&w.scene)),
        PipelineConfig::default(),
    )
    .unwrap();
    c.bench_function("pipeline composite geometric", |b| {
        b.iter(|| {
            geometric
                .process(black_box(&w.frame), &w.keypoints, None)
                .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = stages, end_to_end
}
criterion_main!(benches);
