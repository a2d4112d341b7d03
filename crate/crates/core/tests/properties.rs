use std::collections::HashSet;

use proptest::prelude::*;

use tasb::corpus::{load_run, write_run, Qrels, Run};
use tasb::evaluation::{fuse_runs, mrr_at, ndcg_at, recall_at, FusionMethod};
use tasb::index::DenseIndex;

fn run_strategy() -> impl Strategy<Value = Run> {
    prop::collection::btree_map(
        "q[0-9]{1,2}",
        prop::collection::hash_map("p[0-9]{1,3}", -50.0f64..50.0, 1..25),
        1..6,
    )
    .prop_map(|queries| {
        let mut run = Run::new();
        for (q, passages) in queries {
            run.insert(&q, passages.into_iter().collect()).unwrap();
        }
        run
    })
}

fn qrels_for(run: &Run, grades: &[u32]) -> Qrels {
    let mut qrels = Qrels::new();
    let mut g = grades.iter().cycle();
    for (q, ranking) in run.iter() {
        for (i, s) in ranking.iter().enumerate() {
            if i % 2 == 0 {
                qrels.insert(q, &s.passage_id, *g.next().unwrap());
            }
        }
        qrels.insert(q, "unretrieved", *g.next().unwrap());
    }
    qrels
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn run_file_round_trips(run in run_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        write_run(&run, &path, "prop").unwrap();
        let back = load_run(&path).unwrap();
        // Scores are written with six decimals.
        prop_assert_eq!(back.len(), run.len());
        for (q, ranking) in run.iter() {
            let got = back.get(q).unwrap();
            prop_assert_eq!(got.len(), ranking.len());
            for (a, b) in ranking.iter().zip(got) {
                prop_assert!((a.score - b.score).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn search_equals_naive_scan(
        rows in prop::collection::vec(prop::collection::vec(-4i32..5, 3), 1..60),
        query in prop::collection::vec(-3i32..4, 3),
        k in 1usize..20,
    ) {
        // Small integer vectors make ties common.
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("d{i:03}")).collect();
        let flat: Vec<f64> = rows.iter().flatten().map(|&x| x as f64).collect();
        let index = DenseIndex::from_vectors(ids.clone(), 3, flat, 0).unwrap();
        let q: Vec<f64> = query.iter().map(|&x| x as f64).collect();
        let mut naive: Vec<(f64, &str)> = rows
            .iter()
            .zip(&ids)
            .map(|(r, id)| (r.iter().zip(&q).map(|(a, b)| *a as f64 * b).sum(), id.as_str()))
            .collect();
        // Numeric order: -0.0 and 0.0 are the same score.
        naive.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
        naive.truncate(k);
        let got = index.search(&q, k).unwrap();
        let got: Vec<(f64, &str)> = got.iter().map(|s| (s.score, s.passage_id.as_str())).collect();
        prop_assert_eq!(got, naive);
    }

    #[test]
    fn metrics_lie_in_unit_interval(run in run_strategy(), grades in prop::collection::vec(0u32..4, 1..8)) {
        let qrels = qrels_for(&run, &grades);
        for report in [
            ndcg_at(&run, &qrels, 10).unwrap(),
            mrr_at(&run, &qrels, 10, 2).unwrap(),
            recall_at(&run, &qrels, 5, 2).unwrap(),
        ] {
            for v in report.per_query().values() {
                prop_assert!((0.0..=1.0).contains(v), "{} = {v}", report.name());
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_cutoff(run in run_strategy(), grades in prop::collection::vec(0u32..4, 1..8)) {
        let qrels = qrels_for(&run, &grades);
        let mut previous: Option<tasb::evaluation::MetricReport> = None;
        for cutoff in [1, 2, 5, 10, 25, usize::MAX] {
            let r = recall_at(&run, &qrels, cutoff, 2).unwrap();
            if let Some(p) = &previous {
                for (q, v) in r.per_query() {
                    prop_assert!(*v >= p.get(q).unwrap());
                }
            }
            previous = Some(r);
        }
    }

    #[test]
    fn fusion_covers_both_pools(
        a in run_strategy(),
        b in run_strategy(),
        weight in 0.0f64..=1.0,
        rrf in any::<bool>(),
    ) {
        let method = if rrf { FusionMethod::Rrf } else { FusionMethod::MinMax };
        let fused = fuse_runs(&a, &b, weight, method).unwrap();
        let queries: HashSet<&str> = a.query_ids().chain(b.query_ids()).collect();
        prop_assert_eq!(fused.len(), queries.len());
        for q in queries {
            let pool = |r: &Run| -> HashSet<String> {
                r.get(q).unwrap_or(&[]).iter().map(|s| s.passage_id.clone()).collect()
            };
            let union: HashSet<String> = pool(&a).union(&pool(&b)).cloned().collect();
            prop_assert_eq!(pool(&fused), union);
        }
    }

    #[test]
    fn fusion_weight_zero_keeps_second_run_order(a in run_strategy(), b in run_strategy()) {
        let fused = fuse_runs(&a, &b, 0.0, FusionMethod::Rrf).unwrap();
        for (q, ranking) in b.iter() {
            let in_b: HashSet<&str> = ranking.iter().map(|s| s.passage_id.as_str()).collect();
            let kept: Vec<&str> = fused.get(q).unwrap().iter().map(|s| s.passage_id.as_str()).filter(|p| in_b.contains(p)).collect();
            let original: Vec<&str> = ranking.iter().map(|s| s.passage_id.as_str()).collect();
            prop_assert_eq!(kept, original);
        }
    }
}
