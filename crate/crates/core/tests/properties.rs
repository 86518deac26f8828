use std::io::Write;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ctxsim::corpus::{
    load_corpus, preprocess, write_corpus_csv, CorpusFormat, Record, StopwordSet,
};
use ctxsim::embed::{ContextModel, EmbeddingSpace};
use ctxsim::evalkit::{
    component_sweep, load_labels, top_pair_quality, top_pair_quality_from_scores, LabeledPair,
    SweepVariant,
};
use ctxsim::geotime::{encode_time_cyclical, haversine_miles, GeoPoint};
use ctxsim::rankopt::{rank_loss, rank_matrix};
use ctxsim::spectra::cosine;
use ctxsim::tsne::{
    initial_layout, kl_divergence, run_tsne_from, squared_distances, AffinityModel, TsneConfig,
};

fn geo() -> impl Strategy<Value = GeoPoint> {
    (-90.0..=90.0f64, -180.0..=180.0f64).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn integer_scores(m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-20i32..20, m * m)
        .prop_map(move |v| DMatrix::from_iterator(m, m, v.into_iter().map(f64::from)))
}

fn record() -> impl Strategy<Value = Record> {
    (
        "[a-z][a-z #@,.\"']{0,30}[a-z]",
        0i64..4_000_000_000,
        prop::option::of("[A-Z][a-z ,]{0,12}[a-z]"),
        prop::option::of(geo()),
    )
        .prop_map(|(text, timestamp, location, coords)| Record {
            id: String::new(),
            text,
            timestamp,
            location,
            coords,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_is_idempotent(text in "[A-Za-z #@.,!?'-]{0,60}( https://x\\.co/[a-z]{3})?") {
        let stop = StopwordSet::english();
        let once = preprocess(&text, &stop);
        prop_assert!(once.iter().all(|t| !stop.contains(t)));
        prop_assert_eq!(preprocess(&once.join(" "), &stop), once);
    }

    #[test]
    fn corpus_csv_round_trips(mut recs in prop::collection::vec(record(), 1..8)) {
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = format!("r{i}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_corpus_csv(&recs, &path).unwrap();
        prop_assert_eq!(load_corpus(&path, CorpusFormat::Csv).unwrap(), recs);
    }

    #[test]
    fn haversine_is_a_metric(a in geo(), b in geo(), c in geo()) {
        let ab = haversine_miles(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert!(haversine_miles(a, a).abs() < 1e-9);
        prop_assert!((ab - haversine_miles(b, a)).abs() < 1e-9);
        prop_assert!(haversine_miles(a, c) <= ab + haversine_miles(b, c) + 1e-6);
    }

    #[test]
    fn day_phase_repeats_daily(t in 0i64..3_000_000_000, days in 1i64..50) {
        let a = encode_time_cyclical(t).unwrap();
        let b = encode_time_cyclical(t + days * 86_400).unwrap();
        prop_assert!((a.day_sin - b.day_sin).abs() < 1e-9);
        prop_assert!((a.day_cos - b.day_cos).abs() < 1e-9);
        prop_assert!((a.day_sin.hypot(a.day_cos) - 1.0).abs() < 1e-12);
        prop_assert!(b.years_linear > a.years_linear);
    }

    #[test]
    fn salience_is_translation_invariant(
        cov in matrix(4, 4, -1.0, 1.0),
        mean in prop::collection::vec(-2.0..2.0f64, 4),
        v in prop::collection::vec(-2.0..2.0f64, 4),
        shift in prop::collection::vec(-5.0..5.0f64, 4),
    ) {
        let cov = &cov * cov.transpose();
        let (mean, v, shift) = (DVector::from_vec(mean), DVector::from_vec(v), DVector::from_vec(shift));
        let base = ContextModel::new(mean.clone(), cov.clone(), 0.1).unwrap();
        let moved = ContextModel::new(&mean + &shift, cov, 0.1).unwrap();
        let (x, y) = (base.mahalanobis(&v), moved.mahalanobis(&(&v + &shift)));
        prop_assert!((x - y).abs() <= 1e-8 * x.max(1.0));
    }

    #[test]
    fn cosine_ignores_positive_scale(
        a in prop::collection::vec(-3.0..3.0f64, 5),
        b in prop::collection::vec(-3.0..3.0f64, 5),
        s in 1e-3..1e3f64,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        let c = cosine(&a, &b).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        prop_assert!((c - cosine(&scaled, &b).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn ranks_survive_monotone_maps(s in integer_scores(7)) {
        let mapped = s.map(|x| 0.5 * x * x * x + 7.0);
        prop_assert_eq!(rank_matrix(&s).unwrap(), rank_matrix(&mapped).unwrap());
    }

    #[test]
    fn rank_loss_is_symmetric_and_zero_on_self(a in integer_scores(6), b in integer_scores(6)) {
        let (ra, rb) = (rank_matrix(&a).unwrap(), rank_matrix(&b).unwrap());
        prop_assert_eq!(rank_loss(&ra, &rb).unwrap(), rank_loss(&rb, &ra).unwrap());
        prop_assert_eq!(rank_loss(&ra, &ra).unwrap(), 0.0);
    }

    #[test]
    fn joint_affinities_are_a_distribution(x in matrix(12, 3, -5.0, 5.0), perp in 2.0..8.0f64) {
        let model = AffinityModel::fit(&squared_distances(&x), perp).unwrap();
        let p = &model.p;
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert_eq!(p, &p.transpose());
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((0..12).all(|i| p[(i, i)] == 0.0));
    }

    #[test]
    fn kl_is_nonnegative(p in matrix(5, 5, 0.0, 1.0), q in matrix(5, 5, 0.01, 1.0)) {
        prop_assume!(p.sum() > 1e-6);
        let (p, q) = (&p / p.sum(), &q / q.sum());
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn loaded_labels_are_unit_interval(
        scores in prop::collection::vec(prop::collection::vec(0.0..=4.0f64, 1..4), 1..10),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "id_a,id_b,score_1,score_2,score_3").unwrap();
        for (i, s) in scores.iter().enumerate() {
            let cells: Vec<String> = s.iter().map(f64::to_string).collect();
            writeln!(f, "a{i},b{i},{}", cells.join(",")).unwrap();
        }
        drop(f);
        let labels = load_labels(&path, 4.0, None).unwrap();
        prop_assert_eq!(labels.len(), scores.len());
        prop_assert!(labels.iter().all(|l| (0.0..=1.0).contains(&l.label)));
    }

    #[test]
    fn top_quality_survives_monotone_maps(
        raw in prop::collection::vec((-50i32..50, 0.0..=4.0f64), 5..30),
        top in 1usize..5,
    ) {
        let labels: Vec<LabeledPair> = raw
            .iter()
            .enumerate()
            .map(|(i, &(_, s))| LabeledPair::new(format!("a{i}"), format!("b{i}"), vec![s], 4.0).unwrap())
            .collect();
        let scores: Vec<f64> = raw.iter().map(|&(s, _)| f64::from(s)).collect();
        let mapped: Vec<f64> = scores.iter().map(|x| x * x * x + 3.0).collect();
        prop_assert_eq!(
            top_pair_quality_from_scores(&scores, &labels, top).unwrap(),
            top_pair_quality_from_scores(&mapped, &labels, top).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tsne_commutes_with_permutation(
        x in matrix(10, 3, -4.0, 4.0),
        perm in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let cfg = TsneConfig { perplexity: 3.0, iterations: 40, ..TsneConfig::default() };
        let init = initial_layout(10, 5);
        let px = DMatrix::from_fn(10, 3, |i, j| x[(perm[i], j)]);
        let pinit = DMatrix::from_fn(10, 2, |i, j| init[(perm[i], j)]);
        let a = run_tsne_from(&x, &cfg, init.clone()).unwrap();
        let b = run_tsne_from(&px, &cfg, pinit).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..2 {
                prop_assert!((b.coords[(i, j)] - a.coords[(src, j)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn full_rank_pca_only_matches_centered_space() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (30, 5);
    let m = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let space = EmbeddingSpace::new(ids.clone(), m).unwrap();
    let labels: Vec<LabeledPair> = (0..40)
        .map(|t| {
            let (a, b) = (t % n, (t * 7 + 3) % n);
            let b = if a == b { (b + 1) % n } else { b };
            LabeledPair::new(
                ids[a].clone(),
                ids[b].clone(),
                vec![f64::from(t as u32 % 5)],
                4.0,
            )
            .unwrap()
        })
        .collect();
    let feats = DMatrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64);
    let sweep = component_sweep(&space, &feats, &feats, &labels, &[d], 10, 0).unwrap();
    let full = sweep.get(SweepVariant::PcaOnly, d).unwrap().mean_label;
    let centered = top_pair_quality(&space.centered(), &labels, 10).unwrap();
    assert!((full - centered).abs() < 1e-12, "{full} vs {centered}");
}
