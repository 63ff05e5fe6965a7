use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use faultnas_core::fault::{inject_adsaf, inject_mibb};
use faultnas_core::nn::{ForwardCtx, PassConfig};
use faultnas_core::quant::quantize_dynamic;
use faultnas_core::{ArchSpec, Architecture, FaultModelSpec, Model, QuantSpec, RngStream, Scheme, Tensor};

fn quantization(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let x = Tensor::randn(&[64, 16, 16, 16], 1.0, &mut rng);
    c.bench_function("quantize_dynamic 256k", |b| b.iter(|| quantize_dynamic(black_box(&x), 8, Scheme::CmosComplement).unwrap()));
}

fn injection(c: &mut Criterion) {
    let mut rng = RngStream::new(2);
    let f = quantize_dynamic(&Tensor::randn(&[32, 32, 16, 16], 1.0, &mut rng), 8, Scheme::CmosComplement).unwrap();
    let q = f.quant().unwrap();
    c.bench_function("mibb c=32 k=3", |b| b.iter(|| inject_mibb(black_box(&f), Some((32, 3)), 1e-4, q, &RngStream::new(3)).unwrap()));
    let w = faultnas_core::quantize(&Tensor::randn(&[64, 64, 3, 3], 0.1, &mut rng), QuantSpec::rram(8, 7).unwrap());
    let spec = w.quant().unwrap();
    c.bench_function("adsaf 37k weights", |b| b.iter(|| inject_adsaf(black_box(&w), 0.067, 0.013, spec, &RngStream::new(4)).unwrap()));
}

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("simple-cnn step");
    g.sample_size(10);
    for width in [16usize, 32] {
        let spec = ArchSpec::SimpleCnn { layers: vec![(width, 1), (width, 2), (width, 2)] };
        let model = Model::build(&spec, 3, 10, 0).unwrap();
        let x = Tensor::randn(&[32, 3, 16, 16], 1.0, &mut RngStream::new(5));
        let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
        g.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, _| {
            b.iter(|| {
                let pass = PassConfig::eval(FaultModelSpec::Mibb { p_m: 1e-4 });
                let mut ctx = ForwardCtx::new(&model.store, Default::default(), Default::default(), pass, &RngStream::new(6));
                let xv = ctx.input(x.clone()).unwrap();
                let logits = model.arch.forward(&mut ctx, xv).unwrap();
                let loss = ctx.tape.cross_entropy(logits, &labels).unwrap();
                ctx.tape.backward(loss).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, quantization, injection, forward_backward);
criterion_main!(benches);
