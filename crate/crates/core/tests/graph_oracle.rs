mod common;

use common::{civil_month, graph_entries, oracle_entries, random_corpus, rng};
use proptest::prelude::*;
use spamgraph::graph::{build_qa_graph, build_review_graph, utc_month, ReviewGraph};
use spamgraph::records::{Label, QaRecord};

#[test]
fn random_corpora_match_pairwise_rules() {
    for seed in 0..40 {
        let mut r = rng(seed);
        let n = 1 + (seed as usize * 7) % 150;
        let recs = random_corpus(&mut r, n);
        let g = build_review_graph(&recs);
        assert_eq!(graph_entries(&g), oracle_entries(&recs), "seed {seed}");
    }
}

#[test]
fn neighbor_lists_are_sorted_and_symmetric() {
    let recs = random_corpus(&mut rng(99), 120);
    let g = build_review_graph(&recs);
    for i in 0..g.n_nodes() {
        assert!(g.neighbors(i).windows(2).all(|w| w[0] < w[1]));
        for &j in g.neighbors(i) {
            assert_eq!(g.tag(i, j as usize), g.tag(j as usize, i));
        }
    }
}

#[test]
fn binary_round_trip_and_truncation() {
    let recs = random_corpus(&mut rng(5), 60);
    let g = build_review_graph(&recs);
    let mut buf = Vec::new();
    g.write_to(&mut buf).unwrap();
    let back = ReviewGraph::read_from(&buf[..]).unwrap();
    assert_eq!(graph_entries(&back), graph_entries(&g));
    let err = ReviewGraph::read_from(&buf[..buf.len() - 1]).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.rgph");
    g.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), buf);
}

#[test]
fn qa_rules() {
    let qa = |i: usize, q: &str, asker: &str, answerer: &str, qt: i64, at: i64| QaRecord {
        qa_id: i,
        question_id: q.into(),
        asker_id: asker.into(),
        answerer_id: answerer.into(),
        question_time: qt,
        answer_time: at,
        text: String::new(),
        label: Label::Unknown,
    };
    let jan = 1_577_836_800; // 2020-01-01
    let feb = 1_580_515_200; // 2020-02-01
    let recs = vec![
        qa(0, "q1", "a", "x", jan, jan + 10),
        qa(1, "q1", "b", "y", jan, feb),
        qa(2, "q2", "a", "z", jan + 5, feb + 5),
        qa(3, "q3", "c", "y", feb, feb + 1),
    ];
    let g = build_qa_graph(&recs);
    assert_eq!(g.tag(0, 1), Some(1)); // same question
    assert_eq!(g.tag(0, 2), Some(2)); // same asker, same month
    assert_eq!(g.tag(1, 3), Some(4)); // same answerer, same month
    assert_eq!(g.tag(2, 3), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn month_matches_civil_calendar(ts in -5_000_000_000i64..5_000_000_000) {
        let (y, m) = utc_month(ts);
        prop_assert_eq!((y as i64, m), civil_month(ts));
    }

    #[test]
    fn builder_equals_oracle(seed in any::<u64>(), n in 1usize..80) {
        let recs = random_corpus(&mut rng(seed), n);
        let g = build_review_graph(&recs);
        prop_assert_eq!(graph_entries(&g), oracle_entries(&recs));
        let st = g.stats();
        prop_assert_eq!(st.self_loops, n);
        prop_assert_eq!(st.directed_entries, 2 * st.relation_edges + n);
    }

    #[test]
    fn record_order_permutes_graph(seed in any::<u64>(), n in 2usize..40) {
        let recs = random_corpus(&mut rng(seed), n);
        let mut rev = recs.clone();
        rev.reverse();
        let a = graph_entries(&build_review_graph(&recs));
        let b = graph_entries(&build_review_graph(&rev));
        let mapped: std::collections::BTreeMap<_, _> =
            b.into_iter().map(|((i, j), t)| ((n - 1 - i, n - 1 - j), t)).collect();
        prop_assert_eq!(a, mapped);
    }
}
