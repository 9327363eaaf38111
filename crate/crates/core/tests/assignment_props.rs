mod common;

use std::collections::BTreeSet;

use nwdkit::diagnostics::bucket_imbalance;
use nwdkit::metrics::pairwise_scores;
use nwdkit::{
    assign, assign_rka, assign_threshold, per_gt_positive_stats, pos_neg_totals, sample,
    AssignerConfig, BBox, Label, MetricKind, ScaleBucket,
};
use proptest::prelude::*;
use rand::Rng;

fn rka(k: usize, c: f64) -> AssignerConfig<f64> {
    AssignerConfig::rka(k, MetricKind::nwd(c).unwrap())
}

fn threshold_iou() -> AssignerConfig<f64> {
    AssignerConfig::threshold(MetricKind::Iou, 0.7, 0.3)
}

fn topk_oracle(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// True when the top-k sets of all gts are pairwise disjoint.
fn no_collisions(gts: &[BBox<f64>], anchors: &[BBox<f64>], k: usize, c: f64) -> bool {
    let scores = pairwise_scores(&MetricKind::nwd(c).unwrap(), gts, anchors);
    let mut seen = BTreeSet::new();
    (0..gts.len()).all(|i| {
        topk_oracle(scores.row(i), k)
            .into_iter()
            .all(|j| seen.insert(j))
    })
}

#[test]
fn threshold_matches_brute_force() {
    for seed in 0..300 {
        let mut r = common::rng(seed);
        let n_gts = r.gen_range(0..=5);
        let n_anchors = r.gen_range(1..=100);
        let gts: Vec<_> = (0..n_gts)
            .map(|_| common::random_box(&mut r, 60.0, 2.0, 30.0))
            .collect();
        let anchors: Vec<_> = (0..n_anchors)
            .map(|_| common::random_box(&mut r, 60.0, 2.0, 30.0))
            .collect();
        for (tp, tn, mp) in [(0.7, 0.3, 0.3), (0.5, 0.4, 0.0), (0.6, 0.6, 0.1)] {
            let mut cfg = AssignerConfig::threshold(MetricKind::Iou, tp, tn);
            cfg.min_pos_metric = mp;
            let got = assign_threshold(&cfg, &gts, &anchors).unwrap();
            let want = common::threshold_oracle(&gts, &anchors, tp, tn, mp);
            for (j, (l, w)) in got.labels.iter().zip(&want).enumerate() {
                let expect = match w {
                    None => Label::Negative,
                    Some(usize::MAX) => Label::Ignore,
                    Some(i) => Label::Positive(*i),
                };
                assert_eq!(*l, expect, "seed {seed}, anchor {j}");
            }
        }
    }
}

#[test]
fn rka_every_gt_gets_a_positive() {
    for seed in 0..1000 {
        let (gts, anchors) = common::random_scene(seed);
        for k in [1, 2, 3] {
            let res = assign_rka(&rka(k, 12.7), &gts, &anchors).unwrap();
            assert!(
                res.pos_count_per_gt.iter().all(|&n| n >= 1),
                "seed {seed} k {k}"
            );
            let total = res.num_positive();
            assert!(total >= gts.len() && total <= gts.len() * k);
            assert_eq!(total, res.pos_count_per_gt.iter().sum::<usize>());
            if no_collisions(&gts, &anchors, k, 12.7) {
                assert!(res.pos_count_per_gt.iter().all(|&n| n == k));
            }
            assert_eq!(res.num_ignored(), 0);
        }
    }
}

#[test]
fn rka_without_collisions_picks_oracle_top_k() {
    let mut checked = 0;
    for seed in 0..300 {
        let (gts, anchors) = common::random_scene(seed);
        if !no_collisions(&gts, &anchors, 2, 12.7) {
            continue;
        }
        checked += 1;
        let res = assign_rka(&rka(2, 12.7), &gts, &anchors).unwrap();
        let scores = pairwise_scores(&MetricKind::nwd_default(), &gts, &anchors);
        for i in 0..gts.len() {
            let mut want = topk_oracle(scores.row(i), 2);
            want.sort_unstable();
            let got: Vec<usize> = (0..anchors.len())
                .filter(|&j| res.labels[j] == Label::Positive(i))
                .collect();
            assert_eq!(got, want, "seed {seed} gt {i}");
        }
    }
    assert!(checked > 20);
}

#[test]
fn rka_labels_do_not_depend_on_c() {
    for seed in 0..100 {
        let (gts, anchors) = common::random_scene(seed);
        let base = assign_rka(&rka(2, 12.7), &gts, &anchors).unwrap().labels;
        for c in [8.0, 12.0, 24.0, 100.0] {
            assert_eq!(
                assign_rka(&rka(2, c), &gts, &anchors).unwrap().labels,
                base,
                "seed {seed} C {c}"
            );
        }
    }
}

#[test]
fn deterministic_across_thread_pools() {
    let (gts, anchors) = common::random_scene(9);
    // large enough to take the parallel pairwise path
    let big: Vec<_> = anchors.iter().cycle().take(20_000).copied().collect();
    let run = || {
        (
            assign(&rka(2, 12.7), &gts, &big).unwrap(),
            assign(&threshold_iou(), &gts, &big).unwrap(),
        )
    };
    let a = run();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(run);
    assert_eq!(a, b);
}

#[test]
fn two_gts_six_anchors_exhaustive() {
    let gts = [
        BBox::new(10.0, 10.0, 6.0, 6.0).unwrap(),
        BBox::new(30.0, 10.0, 6.0, 6.0).unwrap(),
    ];
    let anchors: Vec<_> = [8.0, 11.0, 14.0, 26.0, 29.0, 33.0]
        .iter()
        .map(|&x| BBox::new(x, 10.0, 6.0, 6.0).unwrap())
        .collect();
    let res = assign_rka(&rka(2, 12.7), &gts, &anchors).unwrap();
    assert_eq!(
        res.labels,
        vec![
            Label::Positive(0),
            Label::Positive(0),
            Label::Negative,
            Label::Negative,
            Label::Positive(1),
            Label::Positive(1),
        ]
    );
    assert_eq!(res.pos_count_per_gt, vec![2, 2]);
    // enumerate every possible pair of top-2 sets and check the chosen one is the best
    let scores = pairwise_scores(&MetricKind::nwd_default(), &gts, &anchors);
    for i in 0..2 {
        let chosen: f64 = (0..6)
            .filter(|&j| res.labels[j] == Label::Positive(i))
            .map(|j| scores.get(i, j))
            .sum();
        for x in 0..6 {
            for y in (x + 1)..6 {
                assert!(scores.get(i, x) + scores.get(i, y) <= chosen + 1e-15);
            }
        }
    }
}

#[test]
fn rka_balances_buckets_on_canonical_scene() {
    let gts = common::canonical_mixed_scene();
    let anchors = common::stride8_scale8_anchors(512.0);
    let thr = assign_threshold(&threshold_iou(), &gts, &anchors).unwrap();
    let rk = assign_rka(&rka(2, 12.7), &gts, &anchors).unwrap();
    let st = per_gt_positive_stats(&thr, &gts).unwrap();
    let sr = per_gt_positive_stats(&rk, &gts).unwrap();
    assert_eq!(st.len(), 4);
    assert!(bucket_imbalance(&sr).unwrap() < bucket_imbalance(&st).unwrap());
    assert!(st[&ScaleBucket::VeryTiny].mean_positives < 0.5);
    assert!(sr.values().all(|s| s.mean_positives >= 1.0));
}

#[test]
fn rka_yields_more_positives_than_threshold() {
    let mut scenes = Vec::new();
    for seed in 0..50 {
        scenes.push(common::random_scene(seed));
    }
    let thr: Vec<_> = scenes
        .iter()
        .map(|(g, a)| assign(&threshold_iou(), g, a).unwrap())
        .collect();
    let rk: Vec<_> = scenes
        .iter()
        .map(|(g, a)| assign(&rka(2, 12.7), g, a).unwrap())
        .collect();
    let (tp, _) = pos_neg_totals(&thr);
    let (rp, _) = pos_neg_totals(&rk);
    assert!(rp > tp, "rka {rp} vs threshold {tp}");
}

#[test]
fn gwd_ranking_prefers_small_distance() {
    let gts = [BBox::new(10.0, 10.0, 4.0, 4.0).unwrap()];
    let anchors: Vec<_> = [30.0, 11.0, 20.0]
        .iter()
        .map(|&x| BBox::new(x, 10.0, 4.0, 4.0).unwrap())
        .collect();
    let res = assign_rka(&AssignerConfig::rka(1, MetricKind::Gwd), &gts, &anchors).unwrap();
    assert_eq!(res.positive_indices(), vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sample_is_a_seeded_subset(seed in 0u64..1000, batch in 1usize..300, frac in 0.0..=1.0f64) {
        let (gts, anchors) = common::random_scene(seed);
        let res = assign(&threshold_iou(), &gts, &anchors).unwrap();
        let s = sample(&res, batch, frac, seed).unwrap();
        prop_assert_eq!(&s, &sample(&res, batch, frac, seed).unwrap());
        prop_assert!(s.positives.len() <= (batch as f64 * frac).floor() as usize);
        prop_assert!(s.positives.len() + s.negatives.len() <= batch);
        prop_assert!(s.positives.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.negatives.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.positives.iter().all(|&j| matches!(res.labels[j], Label::Positive(_))));
        prop_assert!(s.negatives.iter().all(|&j| res.labels[j] == Label::Negative));
        let want_neg = (batch - s.positives.len()).min(res.num_negative());
        prop_assert_eq!(s.negatives.len(), want_neg);
    }

    #[test]
    fn flat_labels_encode_labels(seed in 0u64..1000) {
        let (gts, anchors) = common::random_scene(seed);
        let res = assign(&threshold_iou(), &gts, &anchors).unwrap();
        for (l, f) in res.labels.iter().zip(res.flat_labels()) {
            match l {
                Label::Positive(i) => prop_assert_eq!(f, *i as i64),
                Label::Negative => prop_assert_eq!(f, -1),
                Label::Ignore => prop_assert_eq!(f, -2),
            }
        }
    }
}
