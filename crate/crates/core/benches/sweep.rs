use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dagbft::oracle::check_seed;
use dagbft::scenario::Scenario;
use dagbft::sweep::{fuzz, fuzz_sequential, map_seeds, map_seeds_sequential};

fn base() -> Scenario {
    Scenario::from_toml(
        "name = \"bench\"\nn = 4\nrotate_byzantine = true\ngst = 2000\ntarget_round = 20\nmax_time = 60000\n\
         [load]\ntxs = 50\ninterval = 30\n[protocol]\nmin_digests = 1\nmax_header_delay = 150\n",
    )
    .expect("valid scenario")
}

fn fuzz_sweep(c: &mut Criterion) {
    let s = base();
    let mut g = c.benchmark_group("fuzz_16_seeds");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sweep", "default"), |b| b.iter(|| fuzz(&s, 0..16)));
    g.bench_function(BenchmarkId::new("sweep", "sequential"), |b| b.iter(|| fuzz_sequential(&s, 0..16)));
    g.finish();
}

fn oracle_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle_32_dags");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sweep", "default"), |b| b.iter(|| map_seeds(0..32, |s| check_seed(s, 4, 10, 5))));
    g.bench_function(BenchmarkId::new("sweep", "sequential"), |b| {
        b.iter(|| map_seeds_sequential(0..32, |s| check_seed(s, 4, 10, 5)))
    });
    g.finish();
}

criterion_group!(benches, fuzz_sweep, oracle_sweep);
criterion_main!(benches);
