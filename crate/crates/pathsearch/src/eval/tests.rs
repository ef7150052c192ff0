use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ranking(query: u16, retrieved: &[u16]) -> LabeledRanking {
    LabeledRanking {
        query_label: query,
        retrieved_labels: retrieved.to_vec(),
    }
}

// ---- top-k majority ----

#[test]
fn top1_is_a_direct_label_match() {
    assert!(top_k_majority(&ranking(2, &[2, 0, 1]), 1));
    assert!(!top_k_majority(&ranking(2, &[0, 2, 2]), 1));
}

#[test]
fn strict_majority_wins_regardless_of_order() {
    assert!(top_k_majority(&ranking(7, &[3, 7, 7]), 3));
    assert!(top_k_majority(&ranking(7, &[7, 3, 7]), 3));
    assert!(!top_k_majority(&ranking(3, &[3, 7, 7]), 3));
}

#[test]
fn modal_ties_go_to_the_best_rank() {
    // Three-way tie: the rank-1 label takes it.
    assert!(top_k_majority(&ranking(4, &[4, 5, 6]), 3));
    assert!(!top_k_majority(&ranking(4, &[5, 4, 6]), 3));
    // Two-way tie between pairs: first occurrence decides.
    assert!(top_k_majority(&ranking(1, &[1, 2, 1, 2, 3]), 5));
    assert!(!top_k_majority(&ranking(2, &[1, 2, 1, 2, 3]), 5));
}

#[test]
fn short_rankings_are_evaluated_on_the_prefix() {
    assert!(top_k_majority(&ranking(9, &[9, 9]), 5));
    assert!(!top_k_majority(&ranking(9, &[8]), 3));
}

#[test]
fn degenerate_k_and_empty_rankings_never_match() {
    assert!(!top_k_majority(&ranking(0, &[]), 1));
    assert!(!top_k_majority(&ranking(0, &[0]), 0));
}

#[test]
fn acc1_equals_mv1_on_random_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let r = ranking(
            rng.gen_range(0..4),
            &(0..5).map(|_| rng.gen_range(0..4)).collect::<Vec<u16>>(),
        );
        assert_eq!(
            top_k_majority(&r, 1),
            r.retrieved_labels[0] == r.query_label
        );
    }
}

// ---- accuracy suite ----

#[test]
fn all_correct_set_scores_ones() {
    let rankings = vec![ranking(1, &[1, 1, 1, 1, 1]); 8];
    let s = accuracy_suite(&rankings).unwrap();
    assert_eq!((s.acc1, s.mv3, s.mv5), (1.0, 1.0, 1.0));
    assert_eq!(s.n_queries, 8);
}

#[test]
fn empty_ranking_set_errors() {
    assert!(matches!(accuracy_suite(&[]), Err(Error::Empty(_))));
}

/// Independent recount: sort the label universe, count matches per k.
fn recount_fraction(rankings: &[LabeledRanking], k: usize) -> f64 {
    let correct = rankings
        .iter()
        .filter(|r| {
            let prefix = &r.retrieved_labels[..k.min(r.retrieved_labels.len())];
            let mut universe: Vec<u16> = prefix.to_vec();
            universe.sort_unstable();
            universe.dedup();
            let winner = universe
                .iter()
                .map(|&l| {
                    let count = prefix.iter().filter(|&&x| x == l).count();
                    let first = prefix.iter().position(|&x| x == l).unwrap();
                    (count, std::cmp::Reverse(first), l)
                })
                .max()
                .map(|(_, _, l)| l);
            winner == Some(r.query_label)
        })
        .count();
    correct as f64 / rankings.len() as f64
}

#[test]
fn suite_matches_recount_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let rankings: Vec<LabeledRanking> = (0..300)
        .map(|_| {
            ranking(
                rng.gen_range(0..5),
                &(0..5).map(|_| rng.gen_range(0..5)).collect::<Vec<u16>>(),
            )
        })
        .collect();
    let s = accuracy_suite(&rankings).unwrap();
    assert_eq!(s.acc1, recount_fraction(&rankings, 1));
    assert_eq!(s.mv3, recount_fraction(&rankings, 3));
    assert_eq!(s.mv5, recount_fraction(&rankings, 5));
}

#[test]
fn suite_report_renders_both_ways() {
    let s = AccuracySuite {
        acc1: 0.5,
        mv3: 0.75,
        mv5: 1.0,
        n_queries: 4,
    };
    let table = s.to_string();
    assert!(table.contains("acc@1   : 0.5000"));
    assert!(table.contains("mv@5    : 1.0000"));
    assert_eq!(
        s.csv_string(),
        "metric,value\nacc@1,0.5\nmv@3,0.75\nmv@5,1\nn_queries,4\n"
    );
}

// ---- rater table + Fleiss kappa ----

#[test]
fn rater_table_validates_shape_and_sums() {
    assert!(matches!(RaterTable::new(vec![]), Err(Error::Empty(_))));
    assert!(RaterTable::new(vec![vec![]]).is_err());
    assert!(RaterTable::new(vec![vec![2, 1], vec![3, 0]]).is_ok());
    assert!(matches!(
        RaterTable::new(vec![vec![2, 1], vec![2, 2]]),
        Err(Error::InvalidValue { .. })
    ));
    assert!(matches!(
        RaterTable::new(vec![vec![2, 1], vec![3]]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(RaterTable::new(vec![vec![0, 0]]).is_err());
}

#[test]
fn rater_table_from_labels_histograms_rows() {
    let t = RaterTable::from_labels(&[vec![0, 0, 2, 0], vec![2, 2, 1, 1]]).unwrap();
    assert_eq!(t.counts(), &[vec![3, 0, 1], vec![0, 2, 2]]);
    assert_eq!(t.n_raters(), 4);
    assert_eq!(t.n_categories(), 3);
}

#[test]
fn kappa_perfect_agreement_is_one() {
    let t = RaterTable::new(vec![vec![4, 0], vec![0, 4]]).unwrap();
    assert_eq!(fleiss_kappa(&t).unwrap(), Kappa::Value(1.0));
}

#[test]
fn kappa_worked_three_subject_example() {
    // Rows (4,0), (2,2), (0,4): P_i = {1, 1/3, 1}, pooled proportions are
    // even, so kappa = (7/9 - 1/2)/(1/2) = 5/9.
    let t = RaterTable::new(vec![vec![4, 0], vec![2, 2], vec![0, 4]]).unwrap();
    let k = fleiss_kappa(&t).unwrap().value().unwrap();
    assert!((k - 5.0 / 9.0).abs() < 1e-9, "kappa = {k}");
}

#[test]
fn kappa_single_category_is_degenerate() {
    let t = RaterTable::new(vec![vec![4, 0], vec![4, 0]]).unwrap();
    assert_eq!(fleiss_kappa(&t).unwrap(), Kappa::Degenerate);
    assert_eq!(fleiss_kappa(&t).unwrap().value(), None);
}

#[test]
fn kappa_at_chance_is_zero() {
    // Half the subjects unanimous (split between categories), half evenly
    // torn: observed agreement 1/2 equals chance agreement 1/2.
    let t = RaterTable::new(vec![vec![2, 0], vec![0, 2], vec![1, 1], vec![1, 1]]).unwrap();
    let k = fleiss_kappa(&t).unwrap().value().unwrap();
    assert!(k.abs() < 1e-12, "kappa = {k}");
}

#[test]
fn kappa_never_exceeds_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..200 {
        let subjects = rng.gen_range(2..10);
        let raters = rng.gen_range(2..6u64);
        let cats = rng.gen_range(2..5);
        let counts: Vec<Vec<u64>> = (0..subjects)
            .map(|_| {
                let mut row = vec![0u64; cats];
                for _ in 0..raters {
                    row[rng.gen_range(0..cats)] += 1;
                }
                row
            })
            .collect();
        let t = RaterTable::new(counts).unwrap();
        match fleiss_kappa(&t).unwrap() {
            Kappa::Value(k) => assert!(k <= 1.0 + 1e-12, "kappa = {k}"),
            Kappa::Degenerate => {}
        }
    }
}

#[test]
fn kappa_preconditions() {
    let one_rater = RaterTable::new(vec![vec![1, 0], vec![0, 1]]).unwrap();
    assert!(fleiss_kappa(&one_rater).is_err());
    let one_subject = RaterTable::new(vec![vec![2, 2]]).unwrap();
    assert!(fleiss_kappa(&one_subject).is_err());
}

// ---- panel majority vote ----

#[test]
fn panel_all_correct_is_one() {
    let d = vec![vec![true; 4]; 5];
    assert_eq!(panel_mv_accuracy(&d, 3).unwrap(), 1.0);
}

#[test]
fn panel_two_of_four_everywhere_is_zero() {
    let d = vec![vec![true, true, false, false]; 5];
    assert_eq!(panel_mv_accuracy(&d, 3).unwrap(), 0.0);
}

#[test]
fn panel_matches_recount_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let d: Vec<Vec<bool>> = (0..100)
        .map(|_| (0..4).map(|_| rng.gen_bool(0.6)).collect())
        .collect();
    let got = panel_mv_accuracy(&d, 3).unwrap();
    let want = d
        .iter()
        .map(|row| u32::from(row.iter().map(|&b| u32::from(b)).sum::<u32>() >= 3))
        .sum::<u32>() as f64
        / 100.0;
    assert_eq!(got, want);
}

#[test]
fn panel_validates_inputs() {
    assert!(panel_mv_accuracy(&[], 3).is_err());
    assert!(panel_mv_accuracy(&[vec![true], vec![]], 1).is_err());
    assert!(panel_mv_accuracy(&[vec![true; 4]], 0).is_err());
    assert!(panel_mv_accuracy(&[vec![true; 4]], 5).is_err());
}

// ---- consistency distribution ----

#[test]
fn unanimous_subjects_land_in_the_full_bucket() {
    let d = consistency_distribution(&[vec![1, 1, 1, 1], vec![0, 0, 0, 0]]).unwrap();
    assert_eq!(d.at(4), 1.0);
    assert_eq!(d.at(3), 0.0);
    assert_eq!(d.other(), 0.0);
    assert_eq!(d.n_raters(), 4);
}

#[test]
fn all_distinct_labels_land_in_other() {
    let d = consistency_distribution(&[vec![0, 1, 2, 3]]).unwrap();
    assert_eq!(d.other(), 1.0);
    assert_eq!(d.at(1), 1.0);
    assert_eq!(d.at(4), 0.0);
}

#[test]
fn mixed_panel_hand_example() {
    let d = consistency_distribution(&[
        vec![0, 0, 1, 1], // max group 2
        vec![0, 0, 0, 1], // 3
        vec![2, 2, 2, 2], // 4
        vec![0, 1, 2, 0], // 2
    ])
    .unwrap();
    assert_eq!(d.at(2), 0.5);
    assert_eq!(d.at(3), 0.25);
    assert_eq!(d.at(4), 0.25);
    assert_eq!(d.other(), 0.0);
}

#[test]
fn consistency_proportions_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let labels: Vec<Vec<u16>> = (0..60)
        .map(|_| (0..5).map(|_| rng.gen_range(0..3)).collect())
        .collect();
    let d = consistency_distribution(&labels).unwrap();
    let total: f64 = (0..=5).map(|k| d.at(k)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn consistency_validates_inputs() {
    assert!(consistency_distribution(&[]).is_err());
    assert!(consistency_distribution(&[vec![]]).is_err());
    assert!(consistency_distribution(&[vec![1, 2], vec![1]]).is_err());
}

// ---- McNemar ----

#[test]
fn mcnemar_no_discordance_is_one() {
    assert_eq!(mcnemar(0, 0), 1.0);
}

#[test]
fn mcnemar_small_sample_exact_value() {
    // b=5, c=1: exact two-sided binomial, 2 * (C(6,0)+C(6,1)) / 2^6.
    assert_eq!(mcnemar(5, 1), 0.21875);
    assert!((mcnemar(5, 1) - 0.21875).abs() < 1e-9);
}

#[test]
fn mcnemar_balanced_small_sample_caps_at_one() {
    assert_eq!(mcnemar(3, 3), 1.0);
    assert_eq!(mcnemar(12, 12), 1.0);
}

#[test]
fn mcnemar_large_sample_uses_corrected_chi_square() {
    // b=40, c=10: statistic (|30|-1)^2 / 50 = 16.82.
    let p = mcnemar(40, 10);
    assert!(p < 0.001, "p = {p}");
    assert!(p > 0.0);
    // Independent tail: chi-square_1 survival via the gamma-based CDF.
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let chi = ChiSquared::new(1.0).unwrap();
    let want = 1.0 - chi.cdf(16.82);
    assert!((p - want).abs() < 1e-10, "p = {p}, want = {want}");
}

#[test]
fn mcnemar_is_symmetric_in_both_regimes() {
    assert_eq!(mcnemar(5, 1), mcnemar(1, 5));
    assert_eq!(mcnemar(40, 10), mcnemar(10, 40));
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    for _ in 0..100 {
        let b = rng.gen_range(0..60);
        let c = rng.gen_range(0..60);
        assert_eq!(mcnemar(b, c), mcnemar(c, b));
        let p = mcnemar(b, c);
        assert!(p > 0.0 && p <= 1.0, "p({b},{c}) = {p}");
    }
}

#[test]
fn mcnemar_regime_boundary() {
    // 24 discordant pairs: exact path, p = 2 * 2^-24 exactly.
    assert_eq!(mcnemar(24, 0), 2.0f64.powi(-23));
    // 25: asymptotic path with statistic (25-1)^2/25 = 23.04.
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let chi = ChiSquared::new(1.0).unwrap();
    assert!((mcnemar(25, 0) - (1.0 - chi.cdf(23.04))).abs() < 1e-12);
}

// ---- CSV interchange ----

#[test]
fn rankings_csv_round_trips() {
    let records = vec![
        RankingRecord {
            query_id: "q1".into(),
            ranking: ranking(0, &[0, 1, 0]),
        },
        RankingRecord {
            query_id: "q2".into(),
            ranking: ranking(3, &[3]),
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rankings.csv");
    write_rankings_csv(&p, &records).unwrap();
    assert_eq!(read_rankings_csv(&p).unwrap(), records);
}

#[test]
fn rankings_csv_accepts_shuffled_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rankings.csv");
    std::fs::write(
        &p,
        "query_id,query_label,rank,candidate_label\nq1,0,2,1\nq2,1,1,1\nq1,0,1,0\n",
    )
    .unwrap();
    let records = read_rankings_csv(&p).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].query_id, "q1");
    assert_eq!(records[0].ranking.retrieved_labels, vec![0, 1]);
    assert_eq!(records[1].query_id, "q2");
}

#[test]
fn rankings_csv_rejects_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rankings.csv");
    let header = "query_id,query_label,rank,candidate_label\n";

    for (body, why) in [
        ("q1,0,1", "missing field"),
        ("q1,0,0,1", "rank zero"),
        ("q1,0,1,0\nq1,0,1,1", "duplicate rank"),
        ("q1,0,1,0\nq1,2,2,1", "conflicting query label"),
        ("q1,zero,1,0", "non-integer label"),
        (",0,1,0", "empty id"),
    ] {
        std::fs::write(&p, format!("{header}{body}\n")).unwrap();
        assert!(
            matches!(read_rankings_csv(&p), Err(Error::Parse { .. })),
            "{why} must be rejected"
        );
    }

    std::fs::write(&p, "wrong,header\n").unwrap();
    assert!(matches!(read_rankings_csv(&p), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn rater_study_csv_reads_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("study.csv");
    std::fs::write(
        &p,
        "subject_id,truth,r1,r2,r3,r4\ns1,0,0,0,1,0\ns2,2,2,2,2,2\n",
    )
    .unwrap();
    let study = read_rater_study_csv(&p).unwrap();
    assert_eq!(study.subject_ids, vec!["s1", "s2"]);
    assert_eq!(study.truth, vec![0, 2]);
    assert_eq!(study.n_raters(), 4);
    assert_eq!(
        study.correctness(),
        vec![
            vec![true, true, false, true],
            vec![true, true, true, true]
        ]
    );
    assert_eq!(panel_mv_accuracy(&study.correctness(), 3).unwrap(), 1.0);
    let table = RaterTable::from_labels(&study.labels).unwrap();
    assert_eq!(table.n_raters(), 4);
}

#[test]
fn rater_study_csv_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("study.csv");
    for (content, why) in [
        ("subject_id,truth\n", "no rater columns"),
        ("nope,truth,r1\ns,0,0\n", "wrong header"),
        ("subject_id,truth,r1\ns1,0,0\ns1,0,1\n", "duplicate subject"),
        ("subject_id,truth,r1,r2\ns1,0,0\n", "short row"),
        ("subject_id,truth,r1\ns1,zero,0\n", "non-integer truth"),
        ("subject_id,truth,r1\n", "no subjects"),
    ] {
        std::fs::write(&p, content).unwrap();
        assert!(
            matches!(
                read_rater_study_csv(&p),
                Err(Error::Parse { .. }) | Err(Error::Empty(_))
            ),
            "{why} must be rejected"
        );
    }
}
