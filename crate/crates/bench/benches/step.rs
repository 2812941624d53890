use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ocdci_core::calibration::practical_preset;
use ocdci_core::rng::stream_rng;
use ocdci_core::{DetectorConfig, DetectorState, ScaleGrid, Variant};
use rand::Rng;
use rand_distr::StandardNormal;

fn detector_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("detector_step");
    for p in [10usize, 100] {
        for variant in [Variant::Ocd, Variant::OcdPrime] {
            let a = practical_preset(p, 0.05, 0.5).unwrap().a;
            let det = DetectorConfig::new(ScaleGrid::new(p, 2.0).unwrap(), a, 1.0, 1.0, variant)
                .unwrap()
                .without_stopping();
            let mut rng = stream_rng(0, 0);
            let rows: Vec<Vec<f64>> = (0..256)
                .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let mut state = DetectorState::new(&det);
            let mut k = 0;
            group.throughput(Throughput::Elements(1));
            group.bench_function(BenchmarkId::new(variant.to_string(), p), |b| {
                b.iter(|| {
                    k = (k + 1) % rows.len();
                    state.step(&det, &rows[k]).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn snapshot(c: &mut Criterion) {
    let det = DetectorConfig::new(ScaleGrid::new(100, 2.0).unwrap(), 3.0, 1.0, 1.0, Variant::OcdPrime)
        .unwrap()
        .without_stopping();
    let state = DetectorState::new(&det);
    c.bench_function("snapshot_round_trip_p100", |b| {
        b.iter(|| DetectorState::restore(&state.snapshot()).unwrap())
    });
}

criterion_group!(benches, detector_step, snapshot);
criterion_main!(benches);
