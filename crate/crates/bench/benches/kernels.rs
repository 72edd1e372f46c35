use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ujscc_core::channel::measure_ser;
use ujscc_core::codec::{ArchitectureConfig, SchemeVariant, System};
use ujscc_core::data::synthetic_dataset;
use ujscc_core::nn::{conv_forward, ConvSpec, Mode, SeededRng, Tensor};
use ujscc_core::vq::{quantize, Codebook};

fn conv(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let spec = ConvSpec::conv(16, 32, 5, 2, 2);
    let x = Tensor::randn(&[8, 16, 32, 32], &mut rng);
    let w = Tensor::randn(&[32, 16, 5, 5], &mut rng);
    c.bench_function("conv_forward 8x16x32x32 k5 s2", |b| b.iter(|| conv_forward(black_box(&x), &w, &spec).unwrap()));
}

fn vq(c: &mut Criterion) {
    let mut rng = SeededRng::new(2);
    let cb = Codebook::new(256, 2, &mut rng);
    let y = Tensor::randn(&[64, 64, 2], &mut rng);
    c.bench_function("quantize 4096 x 256-word codebook", |b| b.iter(|| quantize(black_box(&y), &cb).unwrap()));
}

fn ser(c: &mut Criterion) {
    c.bench_function("measure_ser 16QAM 1e4 symbols", |b| {
        let mut rng = SeededRng::new(3);
        b.iter(|| measure_ser(16, 12.0, 10_000, &mut rng).unwrap())
    });
}

fn codec(c: &mut Criterion) {
    let arch = ArchitectureConfig::basic();
    let mut sys = System::build(&arch, SchemeVariant::Ujscc, &mut SeededRng::new(4)).unwrap();
    let x = synthetic_dataset(4, 4).unwrap().slice(0, 4).unwrap();
    let mut g = c.benchmark_group("basic codec, 4 images");
    g.sample_size(10);
    g.bench_function("encode+decode k=3", |b| {
        b.iter(|| {
            let y = sys.encode(black_box(&x), 2, Mode::Eval).unwrap();
            sys.decode(&y, 2, Mode::Eval).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, conv, vq, ser, codec);
criterion_main!(benches);
