use criterion::{criterion_group, criterion_main, Criterion};
use earmesh::dataset::{generate_synthetic_model, SyntheticModelConfig};
use earmesh::fitting::{fit_landmarks, total_loss, Decoder, LmOptions, LossWeights};
use earmesh::raster::{rasterize, rasterize_backward};
use earmesh::{ModelBundle, RasterConfig};
use std::hint::black_box;

const SIZE: usize = 128;

fn bundle() -> ModelBundle {
    generate_synthetic_model(&SyntheticModelConfig::default(), 1).unwrap()
}

fn pipeline(c: &mut Criterion) {
    let b = bundle();
    let dec = Decoder::new(&b.shape, b.colour.as_ref().unwrap(), RasterConfig::with_size(SIZE, SIZE)).unwrap();
    let mut truth = dec.zero_code();
    truth.pose.rotation = [0.1, -0.05, 0.2];
    truth.shape[0] = 0.8;
    truth.shape[3] = -0.5;
    let target = dec.render(&truth).unwrap().image;
    let landmarks = dec.landmarks(&truth).unwrap();

    let mut start = dec.zero_code();
    start.pose.rotation[2] = 0.1;
    let decoded = dec.decode(&start).unwrap();
    let tris = b.shape.triangles();

    c.bench_function("rasterize 128x128", |bn| {
        bn.iter(|| rasterize(black_box(&decoded.projected), &decoded.colours, tris, &dec.raster).unwrap())
    });

    let out = rasterize(&decoded.projected, &decoded.colours, tris, &dec.raster).unwrap();
    let d_image = target.clone();
    c.bench_function("rasterize backward 128x128", |bn| {
        bn.iter(|| {
            rasterize_backward(black_box(&out), &d_image, &decoded.projected, &decoded.colours, tris, &dec.raster).unwrap()
        })
    });

    let w = LossWeights::WITH_LANDMARKS;
    c.bench_function("total loss and gradient 128x128", |bn| {
        bn.iter(|| total_loss(&dec, black_box(&start), &target, Some(&landmarks), &w).unwrap())
    });

    let lm = LmOptions::default();
    c.bench_function("landmark fit", |bn| {
        bn.iter(|| fit_landmarks(&b.shape, SIZE, SIZE, black_box(&landmarks), None, &lm).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = pipeline
}
criterion_main!(benches);
