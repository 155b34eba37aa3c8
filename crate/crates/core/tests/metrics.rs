//! Ranking and metric oracles.

mod common;

use cdcgcn::community::{ilfbi_init, CommunityAssignment};
use cdcgcn::dataset::InteractionDataset;
use cdcgcn::eval::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn three_user_fixture_matches_hand_values() {
    let (a, lists, truth) = metric_fixture();
    let want = metric_fixture_expected();
    let acc = precision_recall_ndcg(&lists, &truth, 3);
    assert_eq!(acc.users, 2);
    assert_eq!(acc.hits, 4);
    assert!((acc.precision - want.precision).abs() < 1e-15);
    assert!((acc.recall - want.recall).abs() < 1e-15);
    assert!((acc.ndcg - want.ndcg).abs() < 1e-15);
    assert!((ilfbi_at_k(&lists, &a, 3) - want.ilfbi).abs() < 1e-15);
    assert!((cgi_at_k(&lists, &a, 3, CgiMode::PerUser) - want.cgi).abs() < 1e-15);
    // pooled counts (3, 2, 4): 1 - 2 (2 + 5) / 27 - 1/3
    assert!((cgi_at_k(&lists, &a, 3, CgiMode::Pooled) - 4.0 / 27.0).abs() < 1e-15);
}

#[test]
fn gini_hand_cases() {
    assert_eq!(community_gini(&[2, 2, 2], 3), 0.0);
    assert!((community_gini(&[0, 0, 4], 3) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
    assert!((community_gini(&[0, 1, 3], 3) - 0.5).abs() < 1e-15);
    assert!((community_gini(&[5], 6) - (1.0 - 1.0 / 6.0)).abs() < 1e-15);
    // a single community has nothing to be unequal about
    assert_eq!(community_gini(&[7], 1), 0.0);
}

fn random_scores(seed: u64, users: usize, items: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..users)
        .map(|_| (0..items).map(|_| (r.random_range(0..6) as f64) * 0.25).collect())
        .collect()
}

fn sort_oracle(scores: &[f64], ds: &InteractionDataset, u: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !ds.is_train(u, i)).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_matches_full_sort(seed in 0u64..10_000, k in 1usize..12) {
        let ds = random_toy(seed, 5, 10, 0.3);
        let s = random_scores(seed, 5, 10);
        let scorer = FnScorer { num_items: 10, f: |u: usize, i: usize| s[u][i] };
        for l in rank_topk(&scorer, &ds, k) {
            let want = sort_oracle(&s[l.user], &ds, l.user, k);
            prop_assert_eq!(&l.items, &want);
            prop_assert_eq!(l.truncated, want.len() < k);
        }
    }

    #[test]
    fn affine_rescoring_keeps_every_metric(seed in 0u64..10_000) {
        let ds = random_toy(seed, 6, 12, 0.3);
        let a = random_labels(&ds, 3, seed);
        let s = random_scores(seed, 6, 12);
        let truth: Vec<Vec<usize>> = (0..6).map(|u| (0..12).filter(|&i| !ds.is_train(u, i) && (i + u) % 3 == 0).collect()).collect();
        let plain = FnScorer { num_items: 12, f: |u: usize, i: usize| s[u][i] };
        let moved = FnScorer { num_items: 12, f: |u: usize, i: usize| 2.0 * s[u][i] + 1.0 };
        let r1 = evaluate(&plain, &ds, &truth, &a, &[3, 5]);
        let r2 = evaluate(&moved, &ds, &truth, &a, &[3, 5]);
        prop_assert_eq!(r1.per_k, r2.per_k);
    }

    #[test]
    fn precision_counts_hits(seed in 0u64..10_000, k in 1usize..6) {
        let ds = random_toy(seed, 6, 12, 0.3);
        let s = random_scores(seed, 6, 12);
        let truth: Vec<Vec<usize>> = (0..6).map(|u| (0..12).filter(|&i| !ds.is_train(u, i) && (i * 7 + u) % 4 == 0).collect()).collect();
        let scorer = FnScorer { num_items: 12, f: |u: usize, i: usize| s[u][i] };
        let acc = precision_recall_ndcg(&rank_topk(&scorer, &ds, k), &truth, k);
        prop_assert!((acc.precision * (k * acc.users) as f64 - acc.hits as f64).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&acc.ndcg) && (0.0..=1.0).contains(&acc.recall));
    }

    #[test]
    fn bubble_indices_stay_in_range(seed in 0u64..10_000, k in 1usize..6, c in 1usize..5) {
        let ds = random_toy(seed, 6, 12, 0.3);
        let a = random_labels(&ds, c, seed);
        let s = random_scores(seed, 6, 12);
        let scorer = FnScorer { num_items: 12, f: |u: usize, i: usize| s[u][i] };
        let lists = rank_topk(&scorer, &ds, k);
        let n = a.num_communities as f64;
        let ilfbi = ilfbi_at_k(&lists, &a, k);
        prop_assert!((0.0..=1.0).contains(&ilfbi));
        for mode in [CgiMode::PerUser, CgiMode::Pooled] {
            let g = cgi_at_k(&lists, &a, k, mode);
            prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / n + 1e-12);
        }
    }

    #[test]
    fn debiased_test_keeps_one_item_per_community(seed in 0u64..10_000) {
        let base = random_toy(seed, 6, 14, 0.3);
        let mut r = rng(seed + 1);
        let test: Vec<(usize, usize)> = (0..6)
            .flat_map(|u| (0..14).map(move |i| (u, i)))
            .filter(|&(u, i)| !base.is_train(u, i) && r.random::<f64>() < 0.4)
            .collect();
        let train: Vec<(usize, usize)> = base.train.iter().map(|e| (e.user, e.item)).collect();
        let ds = InteractionDataset::from_dense(6, 14, &train, &[], &test);
        let a = random_labels(&ds, 3, seed);
        let deb = build_debiased_test(&ds, &a, seed);
        prop_assert_eq!(&deb, &build_debiased_test(&ds, &a, seed));
        let by_user = ds.test_by_user();
        for u in 0..6 {
            let kept: Vec<usize> = deb.iter().filter(|e| e.user == u).map(|e| e.item).collect();
            let mut comms: Vec<usize> = by_user[u].iter().map(|&i| a.item(i)).collect();
            comms.sort_unstable();
            comms.dedup();
            prop_assert_eq!(kept.len(), comms.len());
            let mut kc: Vec<usize> = kept.iter().map(|&i| a.item(i)).collect();
            kc.dedup();
            prop_assert_eq!(kc, comms);
            prop_assert!(kept.iter().all(|i| by_user[u].contains(i)));
        }
    }
}

#[test]
fn all_intra_lists_raise_each_bin_to_one() {
    let ds = random_toy(9, 8, 12, 0.4);
    let a = random_labels(&ds, 2, 9);
    let profile = ilfbi_init(&ds, &a);
    // lists of intra items only, padded with the user's community
    let lists: Vec<RankedList> = (0..8)
        .map(|u| {
            let items: Vec<usize> = (0..12).filter(|&i| a.item(i) == a.user(u)).take(2).collect();
            RankedList { user: u, scores: vec![0.0; items.len()], items, truncated: false }
        })
        .collect();
    let k = lists.iter().map(|l| l.items.len()).min().unwrap();
    assert!(k > 0);
    for row in user_group_report(&profile, &lists, &a, k, &DEFAULT_BINS).into_iter().flatten() {
        assert!((row.mean_ilfbi - 1.0).abs() < 1e-15);
        assert!((row.increment - (1.0 - row.mean_ilfbi_init)).abs() < 1e-15);
    }
}

#[test]
fn group_report_covers_every_user_once() {
    let ds = random_toy(4, 20, 15, 0.3);
    let a = random_labels(&ds, 3, 4);
    let profile = ilfbi_init(&ds, &a);
    let s = random_scores(4, 20, 15);
    let lists = rank_topk(&FnScorer { num_items: 15, f: |u: usize, i: usize| s[u][i] }, &ds, 3);
    let rows = user_group_report(&profile, &lists, &a, 3, &DEFAULT_BINS);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().flatten().map(|r| r.users).sum::<usize>(), 20);
}

#[test]
fn embedding_export_shape_and_round_trip() {
    let ds = random_toy(2, 4, 5, 0.5);
    let a = random_labels(&ds, 2, 2);
    let t = cdcgcn::model::EmbeddingModel::<f32>::init(4, 5, 4, cdcgcn::model::ModelKind::Mf, 0, 2).tables;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.tsv");
    export_embeddings(&t, &a, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 4 + 5);
    assert!(lines.iter().all(|l| l.split('\t').count() == 3 + 4));
    let comm_path = dir.path().join("communities.tsv");
    cdcgcn::community::write_communities(&comm_path, &ds, &a).unwrap();
    let reread: CommunityAssignment = cdcgcn::community::read_communities(&comm_path, &ds).unwrap();
    for (kind, idx, comm, values) in read_embeddings(&path).unwrap() {
        let (row, want) = match kind {
            'u' => (t.user(idx), reread.user(idx)),
            _ => (t.item(idx), reread.item(idx)),
        };
        assert_eq!(comm, want);
        for (v, w) in values.iter().zip(row) {
            assert!((v - *w as f64).abs() <= 1e-6 * w.abs().max(1.0) as f64);
        }
    }
}
