//! Rayon with one worker against the default pool. Build with
//! `--no-default-features` to time the plain sequential code path instead.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ctxsim::embed::EmbeddingSpace;
use ctxsim::geotime::GeoPoint;
use ctxsim::rankopt::{
    optimize_alphas, rank_matrix, Batch, DistKind, FeatureValue, GridConfig, PairTables, SimKind,
};
use ctxsim::spectra::delta_cosine_experiment;
use ctxsim::tsne::{run_tsne, TsneConfig};

fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn batch(m: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = gaussian(m, 16, 12);
    let embeddings = e.row_iter().map(|r| r.transpose().normalize()).collect();
    let features = (0..m)
        .map(|_| {
            let p = GeoPoint::new(
                rng.random_range(30.0..45.0),
                rng.random_range(-120.0..-75.0),
            );
            vec![
                FeatureValue::Scalar(rng.random_range(0.0..30.0)),
                FeatureValue::Geo(p.unwrap()),
            ]
        })
        .collect();
    Batch::new(
        (0..m).map(|i| i.to_string()).collect(),
        embeddings,
        features,
    )
    .unwrap()
}

/// Runs `f` once per backend setting under `group/name`.
fn compare(c: &mut Criterion, name: &str, f: impl Fn() + Sync) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    #[cfg(feature = "parallel")]
    for threads in [1, rayon::current_num_threads().max(2)] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_function(format!("rayon/{threads}"), |b| pool.install(|| b.iter(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| b.iter(&f));
    group.finish();
}

fn benches(c: &mut Criterion) {
    let dists = [DistKind::InvAbs, DistKind::FloorGeo];

    let big = batch(300);
    compare(c, "pair_tables", || {
        let t = PairTables::build(&big, &dists).unwrap();
        std::hint::black_box(t.scores(SimKind::Pi, &[1.0, 2.0]));
    });

    let small = batch(40);
    let tables = PairTables::build(&small, &dists).unwrap();
    let labels = rank_matrix(&tables.scores(SimKind::Pi, &[3.0, 5.0])).unwrap();
    let grid = GridConfig {
        rounds: 3,
        ..GridConfig::default()
    };
    compare(c, "optimize_alphas", || {
        std::hint::black_box(optimize_alphas(&small, &labels, SimKind::Pi, &dists, &grid).unwrap());
    });

    let space = EmbeddingSpace::new(
        (0..400).map(|i| i.to_string()).collect(),
        gaussian(400, 50, 13),
    )
    .unwrap();
    let feats = gaussian(400, 5, 14);
    compare(c, "delta_cosine", || {
        std::hint::black_box(
            delta_cosine_experiment(&space, &feats, &[2, 8, 32], 4, 500, 15).unwrap(),
        );
    });

    let points = gaussian(200, 10, 16);
    let cfg = TsneConfig {
        iterations: 100,
        ..TsneConfig::default()
    };
    compare(c, "tsne", || {
        std::hint::black_box(run_tsne(&points, &cfg).unwrap());
    });
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
