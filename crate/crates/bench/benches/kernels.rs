use backdrop_bench::normal_tensor;
use backdrop_core::gp::gp_sample_field;
use backdrop_core::nn::{build_model, conv2d, preset, BuildOptions};
use backdrop_core::{MaskMode, MaskingLayer, Tape};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let x = normal_tensor(&[4, 8, 64, 64], 0);
    let w = normal_tensor(&[16, 8, 3, 3], 1);
    c.bench_function("conv2d 8->16 64x64 fwd+bwd", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.param(w.clone());
            let y = conv2d(&mut tape, xv, wv, None, 1, 1).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
        })
    });
}

fn masked_step(c: &mut Criterion) {
    let x = normal_tensor(&[4, 1, 128, 128], 2);
    let mut group = c.benchmark_group("gp-small train step");
    group.sample_size(10);
    for short_circuit in [false, true] {
        let mut spec = preset("gp-small").unwrap();
        for layer in &mut spec.layers {
            if let backdrop_core::nn::LayerSpec::Mask { p, .. } = layer {
                *p = 0.99;
            }
        }
        let opts = BuildOptions {
            short_circuit,
            ..Default::default()
        };
        let mut model = build_model(&spec, &[1, 128, 128], opts).unwrap();
        group.bench_with_input(BenchmarkId::new("short_circuit", short_circuit), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let out = model.forward(&mut tape, xv).unwrap();
                let s = tape.sum(out.output).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    group.finish();
}

fn mask_backward(c: &mut Criterion) {
    let g = normal_tensor(&[32, 16, 64, 64], 3);
    c.bench_function("spatial mask fwd+bwd 32x16x64x64", |b| {
        let mut layer = MaskingLayer::new(0.9, MaskMode::Spatial, 0).unwrap();
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.param(g.clone());
            let m = layer.forward(&mut tape, v).unwrap();
            let s = tape.sum(m).unwrap();
            tape.backward(s).unwrap();
        })
    });
}

fn gp_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("gp_sample_field");
    for n in [64usize, 128, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| gp_sample_field(n, n, 4.0, 7).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, masked_step, mask_backward, gp_sampling);
criterion_main!(benches);
