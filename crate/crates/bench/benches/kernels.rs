use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fgdata_core::analyze::{cluster_metrics, tsne_embed, TsneConfig};
use fgdata_core::pipeline::compose_foreground;
use fgdata_core::{rle_decode, rle_encode, BinaryMask, CompositeConfig};
use image::RgbImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ellipse(h: u32, w: u32) -> BinaryMask {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    BinaryMask::from_fn(h, w, |y, x| {
        let dy = (y as f64 - cy) / (cy * 0.8);
        let dx = (x as f64 - cx) / (cx * 0.7);
        dy * dy + dx * dx <= 1.0
    })
}

fn blobs(n_per: usize, classes: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per * classes;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| {
        let centre = if j % classes == labels[i] { 4.0 } else { 0.0 };
        centre + rng.random::<f64>() - 0.5
    });
    (x, labels)
}

fn rle(c: &mut Criterion) {
    let mut g = c.benchmark_group("rle");
    for side in [128u32, 512] {
        let mask = ellipse(side, side);
        let counts = rle_encode(&mask);
        g.bench_with_input(BenchmarkId::new("encode", side), &mask, |b, m| b.iter(|| rle_encode(black_box(m))));
        g.bench_with_input(BenchmarkId::new("decode", side), &counts, |b, c| {
            b.iter(|| rle_decode(black_box(c), side, side).unwrap())
        });
    }
    g.finish();
}

fn composite(c: &mut Criterion) {
    let (w, h) = (500u32, 375u32);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = RgbImage::from_fn(w, h, |_, _| image::Rgb(rng.random()));
    let mask = ellipse(h, w);
    let cfg = CompositeConfig::default();
    c.bench_function("compose_foreground/500x375", |b| {
        b.iter(|| compose_foreground(black_box(&img), black_box(&mask), &cfg).unwrap())
    });
}

fn analysis(c: &mut Criterion) {
    let (x, labels) = blobs(50, 4, 32, 2);
    c.bench_function("cluster_metrics/200x32", |b| b.iter(|| cluster_metrics(black_box(&x), &labels).unwrap()));

    let (x, _) = blobs(25, 4, 16, 3);
    let cfg = TsneConfig {
        perplexity: 10.0,
        iterations: 250,
        ..TsneConfig::default()
    };
    let mut g = c.benchmark_group("tsne");
    g.sample_size(10);
    g.bench_function("embed/100x16", |b| b.iter(|| tsne_embed(black_box(&x), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, rle, composite, analysis);
criterion_main!(benches);
