use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use gabor_bench::{patches, raw_image};
use gabor_core::gabor::DEFAULT_SCALE;
use gabor_core::imageio::whiten;
use gabor_core::learning::{m_step_update, variance_rescale};
use gabor_core::{Coder, GaborBasis, InferenceConfig, LearningConfig, PipelineConfig};

fn render(c: &mut Criterion) {
    let basis = GaborBasis::uniform_random(16, DEFAULT_SCALE, 1).unwrap();
    c.bench_function("render 256 atoms", |b| {
        b.iter(|| black_box(&basis).render())
    });
}

fn whitening(c: &mut Criterion) {
    let img = raw_image();
    let cfg = PipelineConfig::default();
    c.bench_function("whiten 256x256", |b| {
        b.iter(|| whiten(black_box(&img), &cfg).unwrap())
    });
}

fn inference(c: &mut Criterion) {
    let g = GaborBasis::uniform_random(16, DEFAULT_SCALE, 1)
        .unwrap()
        .render();
    let batch = patches(100);
    let cfg = InferenceConfig::default();
    let coder = Coder::new(&g, &cfg).unwrap();
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    group.bench_function("batch of 100", |b| {
        b.iter(|| coder.infer_batch(batch.patches().view()).unwrap())
    });
    group.finish();
}

fn m_step(c: &mut Criterion) {
    let basis = GaborBasis::uniform_random(16, DEFAULT_SCALE, 1).unwrap();
    let batch = patches(100);
    let icfg = InferenceConfig::default();
    let codes = Coder::new(&basis.render(), &icfg)
        .unwrap()
        .infer_batch(batch.patches().view())
        .unwrap();
    let lcfg = LearningConfig::default();
    c.bench_function("m-step and rescale", |b| {
        b.iter(|| {
            let next = m_step_update(&basis, &batch, &codes, &lcfg).unwrap();
            variance_rescale(&next, &codes, &lcfg).unwrap()
        })
    });
}

criterion_group!(benches, render, whitening, inference, m_step);
criterion_main!(benches);
