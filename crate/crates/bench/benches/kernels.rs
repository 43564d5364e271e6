use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use allweather_core::metrics::ssim;
use allweather_core::model::{image_to_tensor, pyramid_values, Discriminator, Generator};
use allweather_core::rawp::find_best_match;
use allweather_core::synthetic::synthetic_pair;
use allweather_core::trainer::{attention_pyramid, train_step};
use allweather_core::{
    AttentionMode, DiscriminatorConfig, GeneratorConfig, PatchRegion, RandomState, SearchSpec, TrainConfig, TrainState,
};

fn rawp(c: &mut Criterion) {
    let pair = synthetic_pair(64, 0, 0);
    let mut group = c.benchmark_group("rawp");
    for stride in [1usize, 4] {
        let spec = SearchSpec {
            stride,
            ..SearchSpec::for_window(32)
        };
        let anchor = PatchRegion::square(16, 16, 32);
        let target = pair.target.crop(anchor).unwrap();
        group.bench_with_input(BenchmarkId::new("window32", stride), &spec, |b, spec| {
            b.iter(|| find_best_match(black_box(&pair.source), &target, anchor, spec).unwrap())
        });
    }
    group.finish();
}

fn networks(c: &mut Criterion) {
    let pair = synthetic_pair(64, 0, 1);
    let mut rng = RandomState::new(0);
    let gen = Generator::<f32>::new(GeneratorConfig::default(), &mut rng).unwrap();
    let critic = Discriminator::<f32>::new(DiscriminatorConfig::default(), &mut rng).unwrap();
    let input = image_to_tensor::<f32>(&pair.source);
    let att = pyramid_values::<f32>(&attention_pyramid(&pair.source, AttentionMode::Scaled, 3).unwrap());
    c.bench_function("generator_forward_64", |b| {
        b.iter(|| gen.forward(black_box(&input), att.clone()).unwrap())
    });
    c.bench_function("critic_forward_64", |b| b.iter(|| critic.forward(black_box(&input)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let pair = synthetic_pair(128, 0, 2);
    c.bench_function("ssim_128", |b| {
        b.iter(|| ssim(black_box(&pair.source), black_box(&pair.target)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let pairs: Vec<_> = (0..4).map(|i| synthetic_pair(128, 0, i)).collect();
    let batch: Vec<_> = pairs.iter().collect();
    let mut state = TrainState::new(&TrainConfig::default()).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("step_batch4", |b| b.iter(|| train_step(&mut state, &batch).unwrap()));
    group.finish();
}

criterion_group!(benches, rawp, networks, metrics, training);
criterion_main!(benches);
