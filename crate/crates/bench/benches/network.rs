use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sinnet_core::label::rasterize;
use sinnet_core::model::{batch_gradients, LossWeights, Sample};
use sinnet_core::{synth, SinNet};

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (divisor, side) in [(8, 96), (16, 96), (8, 192)] {
        let mut net = SinNet::<f32>::new(divisor).unwrap();
        net.init_weights(0);
        let s = &synth::generate(1, 0, side)[0];
        let x = s.image.to_tensor::<f32>();
        group.bench_with_input(BenchmarkId::new(format!("div{divisor}"), side), &x, |b, x| {
            b.iter(|| net.predict(x).unwrap())
        });
    }
    group.finish();
}

fn bench_training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradients");
    group.sample_size(10);
    let mut net = SinNet::<f32>::new(8).unwrap();
    net.init_weights(0);
    let s = &synth::generate(1, 0, 96)[0];
    let m = rasterize(&s.points, 96, 96).unwrap();
    let sample = Sample::<f32>::from_image(&s.image, &m.core, &m.delta).unwrap();
    group.bench_function("div8 96x96", |b| {
        b.iter(|| {
            batch_gradients(
                &net,
                sample.image.clone(),
                sample.core.clone(),
                sample.delta.clone(),
                LossWeights::default(),
                None,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_forward, bench_training_step);
criterion_main!(benches);
