use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use fvss_bench::{empty_warehouse, sales_rows, sales_warehouse};
use fvss_core::cost::{compute_rows, storage_rows, PricingPolicy, Scenario};
use fvss_core::cube::{cube_build, CubeSpec};
use fvss_core::outer_sig::VerifyScope;
use fvss_core::query;
use fvss_core::warehouse::RgChoice;

fn load(c: &mut Criterion) {
    let mut g = c.benchmark_group("load");
    for (n, t) in [(5, 4), (7, 4)] {
        g.bench_with_input(BenchmarkId::new("1000 rows", format!("n={n},t={t}")), &(n, t), |b, &(n, t)| {
            b.iter_batched(
                || (empty_warehouse(n, t), sales_rows(1000)),
                |(mut wh, rows)| wh.insert_rows("Sale", rows).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn read(c: &mut Criterion) {
    let wh = sales_warehouse(5, 4, 1000);
    c.bench_function("reconstruct one row", |b| {
        let mut pk = 0;
        b.iter(|| {
            pk = pk % 1000 + 1;
            wh.reconstruct_row("Sale", black_box(pk), &RgChoice::Auto).unwrap()
        })
    });
    let sql = "SELECT ProdNo, SUM(price), AVG(qty), MAX(qty) FROM Sale WHERE qty > 0 GROUP BY ProdNo";
    c.bench_function("grouped aggregate query, 1000 rows", |b| b.iter(|| query::run(&wh, black_box(sql), &RgChoice::Auto).unwrap()));
    c.bench_function("verify all CSPs, 1000 rows", |b| b.iter(|| wh.verify(None, &VerifyScope::Whole).unwrap()));
}

fn cube(c: &mut Criterion) {
    let spec = CubeSpec::new("c", "SELECT ProdNo, SUM(price), COUNT(*) FROM Sale GROUP BY ProdNo").unwrap();
    c.bench_function("cube build, 500 facts", |b| {
        b.iter_batched(|| sales_warehouse(5, 3, 500), |mut wh| cube_build(&mut wh, &spec, &RgChoice::Auto).unwrap(), BatchSize::LargeInput)
    });
}

fn cost(c: &mut Criterion) {
    let (s, p) = (Scenario::default(), PricingPolicy::public_cloud_2014());
    c.bench_function("cost model, all rows", |b| {
        b.iter(|| {
            (storage_rows(black_box(&s), &p).unwrap(), compute_rows(&s, &p, false).unwrap(), compute_rows(&s, &p, true).unwrap())
        })
    });
}

criterion_group!(benches, load, read, cube, cost);
criterion_main!(benches);
