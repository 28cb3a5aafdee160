use btl_core::metrics::*;
use btl_core::GaussianEmbedding;
use proptest::prelude::*;

fn result_from(flags: Vec<(Vec<bool>, usize, f64)>) -> RetrievalResult {
    RetrievalResult {
        version: 1,
        k: 10,
        mode: RetrievalMode::Means,
        queries: flags
            .into_iter()
            .map(|(rel, extra, var)| QueryResult {
                neighbors: (0..rel.len()).collect(),
                n_relevant: rel.iter().filter(|&&r| r).count() + extra,
                relevant: rel,
                query_variance: var,
                nn_covariance: var,
                truncated: false,
            })
            .collect(),
    }
}

fn arb_result() -> impl Strategy<Value = RetrievalResult> {
    prop::collection::vec((prop::collection::vec(any::<bool>(), 1..12), 0usize..4, 0.0f64..5.0), 1..40)
        .prop_map(result_from)
}

/// AP by explicit definition: precision at every relevant rank.
fn brute_ap(rel: &[bool], n_relevant: usize, k: usize) -> f64 {
    let denom = k.min(n_relevant);
    if denom == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..k.min(rel.len()) {
        if rel[i] {
            let hits = rel[..=i].iter().filter(|&&r| r).count();
            s += hits as f64 / (i + 1) as f64;
        }
    }
    s / denom as f64
}

proptest! {
    #[test]
    fn map_at_1_equals_recall_at_1(r in arb_result()) {
        prop_assert_eq!(map_at_k(&r, 1), recall_at_k(&r, 1));
    }

    #[test]
    fn recall_is_monotone_in_k(r in arb_result()) {
        for k in 1..12 {
            prop_assert!(recall_at_k(&r, k) <= recall_at_k(&r, k + 1));
        }
    }

    #[test]
    fn map_matches_brute_force(r in arb_result(), k in 1usize..12) {
        let want = r.queries.iter().map(|q| brute_ap(&q.relevant, q.n_relevant, k)).sum::<f64>() / r.queries.len() as f64;
        prop_assert!((map_at_k(&r, k) - want).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&map_at_k(&r, k)));
    }

    #[test]
    fn ece_is_a_weighted_gap_in_unit_interval(r in arb_result(), m in 1usize..6, k in 1usize..6) {
        prop_assume!(r.queries.len() >= m);
        let rep = calibration_bins(&r, m, k).unwrap();
        prop_assert_eq!(rep.n_queries(), r.queries.len());
        let e = ece_at_k(&rep);
        prop_assert!((0.0..=1.0).contains(&e));
        let mut matched = rep.clone();
        for b in &mut matched.bins {
            b.conf = b.map_at_k;
        }
        prop_assert_eq!(ece_at_k(&matched), 0.0);
        for w in rep.bins.windows(2) {
            prop_assert!(w[0].conf >= w[1].conf);
        }
    }

    #[test]
    fn expected_ranking_ignores_constant_variance_offset(
        pts in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), 0.01f64..2.0), 2..15),
        shift in 0.0f64..5.0,
    ) {
        let items: Vec<GaussianEmbedding<f64>> = pts.iter().map(|(m, v)| GaussianEmbedding::new(m.clone(), *v).unwrap()).collect();
        let shifted: Vec<GaussianEmbedding<f64>> = pts.iter().map(|(m, v)| GaussianEmbedding::new(m.clone(), v + shift).unwrap()).collect();
        let labels: Vec<usize> = (0..items.len()).map(|i| i % 3).collect();
        let q = GaussianEmbedding::new(vec![0.1, -0.2, 0.3], 0.5).unwrap();
        let a = retrieve(&Database::new(&items, &labels).unwrap(), &q, 0, None, items.len(), RetrievalMode::Expected).unwrap();
        let b = retrieve(&Database::new(&shifted, &labels).unwrap(), &q, 0, None, items.len(), RetrievalMode::Expected).unwrap();
        prop_assert_eq!(a.neighbors, b.neighbors);
    }

    #[test]
    fn equal_variances_make_modes_agree(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..15),
    ) {
        let items: Vec<GaussianEmbedding<f64>> = pts.iter().map(|m| GaussianEmbedding::new(m.clone(), 0.7).unwrap()).collect();
        let labels = vec![0; items.len()];
        let db = Database::new(&items, &labels).unwrap();
        let q = GaussianEmbedding::new(vec![0.0, 0.0], 0.2).unwrap();
        let a = retrieve(&db, &q, 0, None, items.len(), RetrievalMode::Means).unwrap();
        let b = retrieve(&db, &q, 0, None, items.len(), RetrievalMode::Expected).unwrap();
        prop_assert_eq!(a.neighbors, b.neighbors);
    }

    #[test]
    fn auroc_is_symmetric(a in prop::collection::vec(0.0f64..10.0, 1..30), b in prop::collection::vec(0.0f64..10.0, 1..30)) {
        let x = auroc(&a, &b).unwrap();
        let y = auroc(&b, &a).unwrap();
        prop_assert!((x + y - 1.0).abs() < 1e-12);
    }
}

#[test]
fn anticalibrated_set_has_large_ece() {
    // variance rank and AP perfectly aligned the wrong way round
    let n = 100;
    let r = result_from((0..n).map(|i| (vec![i >= n / 2], 0, i as f64)).collect());
    let rep = calibration_bins(&r, 10, 1).unwrap();
    assert!(ece_at_k(&rep) > 0.7, "{}", ece_at_k(&rep));
    let calibrated = result_from((0..n).map(|i| (vec![i < n / 2], 0, i as f64)).collect());
    assert!(ece_at_k(&calibration_bins(&calibrated, 10, 1).unwrap()) < 0.3);
}
