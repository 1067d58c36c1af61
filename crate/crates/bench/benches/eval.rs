use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use deadwood::eval::{average_precision_101, coco_map, match_detections, pr_curve};
use deadwood_bench::{eval_fixture, scored_flags};
use std::hint::black_box;

fn bench_ap(c: &mut Criterion) {
    let mut group = c.benchmark_group("ap101");
    for n in [1_000, 100_000] {
        let scored = scored_flags(n, 0.6, 11);
        group.bench_with_input(BenchmarkId::from_parameter(n), &scored, |b, s| {
            b.iter(|| average_precision_101(&pr_curve(black_box(s), n).unwrap()))
        });
    }
    group.finish();
}

fn bench_matching(c: &mut Criterion) {
    let (dets, gts) = eval_fixture(50, 40, 3);
    c.bench_function("match_50_images", |b| b.iter(|| match_detections(black_box(&dets), &gts, 0.5, false).unwrap()));
    let mut group = c.benchmark_group("coco_map");
    group.sample_size(20);
    group.bench_function("50_images", |b| b.iter(|| coco_map(black_box(&dets), &gts, false).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_ap, bench_matching);
criterion_main!(benches);
