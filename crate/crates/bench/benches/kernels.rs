use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use lightformer::blocks::{BlockConfig, Lcrm, WindowAttention};
use lightformer::nn::{Mode, Session};
use lightformer::tensor::kernels::{conv2d_forward, Conv2dGeom};
use lightformer::Graph;
use lightformer_bench::{random, store};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    let x = random::<f32>(&[4, 64, 64, 64], 1);
    for (name, w, geom) in [
        ("dense3x3", random::<f32>(&[64, 64, 3, 3], 2), Conv2dGeom::same(3)),
        ("pointwise", random::<f32>(&[64, 64, 1, 1], 3), Conv2dGeom::pointwise()),
        ("depthwise7x7", random::<f32>(&[64, 1, 7, 7], 4), Conv2dGeom::depthwise(7, 64)),
    ] {
        g.bench_function(name, |b| b.iter(|| conv2d_forward(black_box(&x), &w, None, geom).unwrap()));
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("window_attention");
    for ws in [4usize, 8, 16] {
        let att = WindowAttention::new("att", 32, ws, 4);
        let st = store::<f32>(5, |b| att.declare(b));
        let x = random::<f32>(&[2, 32, 64, 64], 6);
        g.bench_with_input(BenchmarkId::from_parameter(ws), &ws, |b, _| {
            b.iter(|| {
                let mut graph = Graph::new();
                let mut s = Session::new(&mut graph, &st, Mode::Eval, false);
                let xv = s.constant(x.clone());
                att.forward(&mut s, xv).unwrap()
            })
        });
    }
    g.finish();
}

fn lcrm(c: &mut Criterion) {
    let mut g = c.benchmark_group("lcrm");
    g.sample_size(20);
    for ch in [32usize, 64] {
        let cfg = BlockConfig::default().with_channels(ch);
        let block = Lcrm::new("lcrm", &cfg);
        let st = store::<f32>(7, |b| block.declare(b));
        let x = random::<f32>(&[1, ch, 64, 64], 8);
        g.bench_with_input(BenchmarkId::new("forward_backward", ch), &ch, |b, _| {
            b.iter(|| {
                let mut graph = Graph::new();
                let mut s = Session::new(&mut graph, &st, Mode::Train, true);
                let xv = s.constant(x.clone());
                let y = block.forward(&mut s, xv).unwrap();
                let loss = s.sum(y);
                s.backward(loss).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, conv, attention, lcrm);
criterion_main!(benches);
