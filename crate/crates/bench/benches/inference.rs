use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use entrodrop_bench::toy_model;
use entrodrop_core::model::Decoder;
use entrodrop_core::{BlockMask, Granularity};

fn generation(c: &mut Criterion) {
    let model = toy_model(128);
    let layers = model.config().layers;
    let prompt: Vec<u32> = (0..64).map(|i| (i * 7 % 256) as u32).collect();
    let mut group = c.benchmark_group("generate_64_plus_64");
    group.sample_size(10);
    for skipped in [0usize, 4, 8] {
        let blocks: Vec<usize> = (layers - skipped + 1..=layers).collect();
        let mask = BlockMask::from_blocks(layers, Granularity::AttentionBlock, &blocks).unwrap();
        group.bench_with_input(BenchmarkId::new("attention_skipped", skipped), &mask, |b, m| {
            b.iter(|| {
                let mut decoder = Decoder::new(&model, m).unwrap();
                black_box(decoder.generate(&prompt, 64).unwrap())
            })
        });
    }
    group.finish();
}

fn full_forward(c: &mut Criterion) {
    let model = toy_model(128);
    let tokens: Vec<u32> = (0..128).map(|i| (i * 13 % 256) as u32).collect();
    let mask = BlockMask::none(model.config().layers);
    c.bench_function("forward_128_tokens", |b| {
        b.iter(|| model.forward(black_box(&tokens), &mask, false).unwrap())
    });
}

criterion_group!(benches, generation, full_forward);
criterion_main!(benches);
