use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ldn_bench::{colorized, masked_square, noise_image, observed_stack, sans_glyphs};
use ldn_core::eval::{l1_metric, ssim};
use ldn_core::glyph::{
    ornament, predict_glyph_shapes, GlyphNet, GlyphNetConfig, OrnaNet, OrnaNetConfig,
};
use ldn_core::inpaint::{inpaint, InpaintConfig, InpaintModel};

fn metrics(c: &mut Criterion) {
    let a = noise_image(128, 128, 1, 1);
    let b = noise_image(128, 128, 1, 2);
    c.bench_function("ssim 128x128", |bn| {
        bn.iter(|| ssim(black_box(&a), black_box(&b)).unwrap())
    });
    c.bench_function("l1 128x128", |bn| {
        bn.iter(|| l1_metric(black_box(&a), black_box(&b), None).unwrap())
    });
}

fn inference(c: &mut Criterion) {
    let model = InpaintModel::<f32>::new(&InpaintConfig::default(), 0.5, 0).unwrap();
    let masked = masked_square(128, model.fill, 3).unwrap();
    c.bench_function("inpaint 128x128", |bn| {
        bn.iter(|| inpaint(&model, black_box(&masked)).unwrap())
    });

    let font = sans_glyphs(64).unwrap();
    let stack = observed_stack(&font, 4).unwrap();
    let glyph = GlyphNet::<f32>::new(&GlyphNetConfig::default(), 0).unwrap();
    c.bench_function("glyph completion 62x64x64", |bn| {
        bn.iter(|| predict_glyph_shapes(&glyph, black_box(&stack)).unwrap())
    });

    let shapes = predict_glyph_shapes(&glyph, &stack).unwrap();
    let orna = OrnaNet::<f32>::new(&OrnaNetConfig::default(), 0).unwrap();
    let color = observed_stack(&colorized(&font, [0.8, 0.2, 0.1]), 4).unwrap();
    c.bench_function("ornament 62x64x64", |bn| {
        bn.iter(|| ornament(&orna, black_box(&shapes), &color).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = metrics, inference
}
criterion_main!(benches);
