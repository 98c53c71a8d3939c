//! Parallel kernels against the same calls forced onto the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lplab::filters::{Profile, TensorFilterBank};
use lplab::grid::GridSpec;
use lplab::harness::corpus::{sample_corpus, CorpusSpec, Recipe};
use lplab::norms::{mixed_norm, MixedNormSpec};
use lplab::par;
use lplab::square::tensor_square_function;
use lplab::weights::{maximal_function, WindowMode};

fn kernels(c: &mut Criterion) {
    let spec = GridSpec::new(vec![8, 8], vec![1, 1]).unwrap();
    let cs = CorpusSpec { recipe: Recipe::Mixed, count: 1, vshape: vec![2], max_freq_log2: None };
    let f = sample_corpus(&cs, &spec, 1).unwrap().remove(0);
    let tb = TensorFilterBank::for_grid(&spec, Profile::SmoothBump).unwrap();
    let norm = MixedNormSpec::new(vec![0.5, 3.0], vec![0.7]).unwrap();
    let scalar = f.component_function(0);

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for mode in ["parallel", "sequential"] {
        let run = |work: &mut dyn FnMut()| {
            if mode == "sequential" {
                par::sequential(work)
            } else {
                work()
            }
        };
        g.bench_function(BenchmarkId::new("tensor_square_function_256x256", mode), |b| {
            b.iter(|| run(&mut || {
                black_box(tensor_square_function(&f, &tb).unwrap());
            }))
        });
        g.bench_function(BenchmarkId::new("mixed_norm_256x256", mode), |b| {
            b.iter(|| run(&mut || {
                black_box(mixed_norm(&f, &norm).unwrap());
            }))
        });
        g.bench_function(BenchmarkId::new("strong_maximal_256x256", mode), |b| {
            b.iter(|| run(&mut || {
                black_box(maximal_function(&scalar, WindowMode::Rectangles).unwrap());
            }))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
