use criterion::{criterion_group, criterion_main, Criterion};
use roofseg::dataset::{build_class_index, generate_synthetic, ImbalanceProfile, SyntheticStyle};
use roofseg::sampler::{build_plan, min_batch_count, SchedulerConfig};

fn plan(c: &mut Criterion) {
    let data = generate_synthetic(&ImbalanceProfile::rooftop_damage(), &SyntheticStyle::default(), 2000, 32, 3).unwrap();
    let index = build_class_index(&data.patches, 4).unwrap();
    let cfg = SchedulerConfig::new(8, 4, 0);
    c.bench_function("min_batch_count 2000 patches", |b| b.iter(|| min_batch_count(&index, &cfg).unwrap()));
    c.bench_function("build_plan 2000 patches", |b| b.iter(|| build_plan(&index, &cfg).unwrap()));
}

criterion_group!(benches, plan);
criterion_main!(benches);
