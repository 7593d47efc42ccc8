use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use microquant_bench::{pattern_image, pattern_tensor};
use microquant_core::quant::{decompose_multiplier, requantize};
use microquant_core::quantizer::{infer_quantized, quantize_with_representative};
use microquant_core::trainer::backward;
use microquant_core::{imaging::resize, Architecture, InterpMethod, ModelSpec};

fn resize_240_to_28(c: &mut Criterion) {
    let src = pattern_image(240, 240);
    let mut group = c.benchmark_group("resize_240_to_28");
    for m in InterpMethod::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| resize(black_box(&src), 28, 28, m).unwrap())
        });
    }
    group.finish();
}

fn reference_inference(c: &mut Criterion) {
    let model = ModelSpec::he_uniform(Architecture::reference(), 1).unwrap();
    let rep = vec![pattern_tensor(&[28, 28, 1])];
    let qm = quantize_with_representative(&model, &rep).unwrap();
    let x = pattern_tensor(&[28, 28, 1]);
    let mut group = c.benchmark_group("reference_inference");
    group.bench_function("float32", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    group.bench_function("int8", |b| b.iter(|| infer_quantized(&qm, black_box(&x)).unwrap()));
    group.finish();
}

fn training_batch(c: &mut Criterion) {
    let model = ModelSpec::he_uniform(Architecture::reference(), 2).unwrap();
    let xs: Vec<_> = (0..32).map(|_| pattern_tensor(&[28, 28, 1])).collect();
    let labels: Vec<usize> = (0..32).map(|i| i % 24).collect();
    c.bench_function("reference_backward_batch32", |b| {
        b.iter(|| backward(&model, black_box(&xs), &labels).unwrap())
    });
}

fn requantize_throughput(c: &mut Criterion) {
    let (m, shift) = decompose_multiplier(0.000_731).unwrap();
    let accs: Vec<i32> = (0..4096).map(|i| (i * 104_729) % (1 << 22) - (1 << 21)).collect();
    c.bench_function("requantize_4096", |b| {
        b.iter(|| {
            black_box(&accs)
                .iter()
                .map(|&a| requantize(a, m, shift, -3) as i32)
                .sum::<i32>()
        })
    });
}

criterion_group!(benches, resize_240_to_28, reference_inference, training_batch, requantize_throughput);
criterion_main!(benches);
