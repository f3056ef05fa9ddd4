use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rawgat_core::gat::GatLayer;
use rawgat_core::params::ParamStore;
use rawgat_core::{ModelConfig, Padding, RawGatModel, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // first residual block at reference width
    let x = random(&mut rng, &[1, 32, 23, 64]);
    let k = random(&mut rng, &[32, 32, 2, 3]);
    c.bench_function("conv2d 32x23x64 -> 32, 2x3", |b| {
        b.iter(|| {
            let tape = Tape::no_grad();
            let y = tape.constant(x.clone()).conv2d(&tape.constant(k.clone()), None, 1, Padding::Same).unwrap();
            black_box(y.data()[0])
        })
    });
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone().with_grad());
            let kv = tape.leaf(k.clone().with_grad());
            let loss = xv.conv2d(&kv, None, 1, Padding::Same).unwrap().sum().unwrap();
            black_box(tape.backward(&loss).unwrap());
        })
    });
}

fn gat(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let layer = GatLayer::new(&mut store, "gat", 64, 32, &mut rng).unwrap();
    let x = random(&mut rng, &[10, 29, 64]);
    c.bench_function("gat forward, 10 graphs of 29 nodes, 64 -> 32", |b| {
        b.iter(|| {
            let tape = Tape::no_grad();
            let y = layer.forward(&mut store, &tape.constant(x.clone()), false).unwrap();
            black_box(y.data()[0])
        })
    });
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    for (name, cfg) in [("desk", ModelConfig::desk()), ("reference", ModelConfig::default())] {
        let mut model = RawGatModel::new(cfg).unwrap();
        let wave: Vec<f64> = (0..model.config().segment_length).map(|i| (i as f64 * 0.01).sin()).collect();
        group.bench_function(format!("score one segment, {name}"), |b| {
            b.iter(|| black_box(model.score(&[&wave]).unwrap()[0]))
        });
    }
    group.finish();
}

criterion_group!(benches, conv2d, gat, model);
criterion_main!(benches);
