use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gpst_bench::ChartFixture;
use gpst_core::composition::{inside_full, inside_pruned, ChartOptions};
use gpst_core::numerics::Eager;

fn charts(c: &mut Criterion) {
    let mut group = c.benchmark_group("inside");
    group.sample_size(10);
    for n in [32, 64, 128, 256, 512, 1024] {
        let f = ChartFixture::new(n, 16);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("pruned", n), &f, |b, f| {
            b.iter(|| {
                let mut g = Eager::new(&f.store);
                inside_pruned(&mut g, &f.model.comp, &f.leaves, &f.schedule, ChartOptions::default()).unwrap()
            })
        });
        // The cubic chart takes minutes per run beyond this.
        if n <= 128 {
            group.bench_with_input(BenchmarkId::new("full", n), &f, |b, f| {
                b.iter(|| {
                    let mut g = Eager::new(&f.store);
                    inside_full(&mut g, &f.model.comp, &f.leaves, &[], ChartOptions::default()).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, charts);
criterion_main!(benches);
