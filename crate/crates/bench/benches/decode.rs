use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use s4c_bench::{prompt, random_pair};
use s4c_core::tree::flatten;
use s4c_core::{generate, plain_generate, Drafter, GenerateOptions, NeuralDrafter, RoundContext, Rng, TreeInput};

fn decoding(c: &mut Criterion) {
    let (target, draft) = random_pair(0);
    let drafter = NeuralDrafter::new(&target, &draft).unwrap();
    let p = prompt(32);
    let opts = GenerateOptions { max_new: 32, ..Default::default() };
    let mut g = c.benchmark_group("decode_32_tokens");
    g.sample_size(20);
    g.bench_function("plain", |b| b.iter(|| plain_generate(&target, black_box(&p), &opts).unwrap()));
    g.bench_function("speculative", |b| b.iter(|| generate(&target, &drafter, black_box(&p), &opts).unwrap()));
    g.finish();
}

fn round_parts(c: &mut Criterion) {
    let (target, draft) = random_pair(1);
    let drafter = NeuralDrafter::new(&target, &draft).unwrap();
    let p = prompt(32);
    let cfg = draft.config().clone();
    let mut cache = target.new_cache();
    let pre = target.forward(&p[..31], &mut cache, None).unwrap();
    let feature = pre.features.row(30).to_vec();
    let ctx = RoundContext { history: &p, feature: &feature, max_depth: cfg.max_depth() };
    c.bench_function("draft_round", |b| {
        b.iter(|| drafter.draft_round(&ctx, &cfg, 0.0, &mut Rng::new(0)).unwrap())
    });
    let tree = drafter.draft_round(&ctx, &cfg, 0.0, &mut Rng::new(0)).unwrap();
    let flat = flatten(&tree, cache.len()).unwrap();
    c.bench_function("tree_verify_pass", |b| {
        b.iter(|| {
            let mut c2 = cache.clone();
            target
                .forward(&flat.tokens, &mut c2, Some(TreeInput { mask: &flat.mask, positions: &flat.positions }))
                .unwrap()
        })
    });
}

criterion_group!(benches, decoding, round_parts);
criterion_main!(benches);
