//! Randomized invariant checks over the geometry, feature, ranking, and
//! selection layers.

use nalgebra::DMatrix;
use proptest::prelude::*;
use scout_core::features::{
    aggregate_pair_features, assemble_unary_only, assemble_with_context, non_maximal_suppress,
    pair_features, unary_features, SentinelParams, PAIR_LEN, UNARY_LEN,
};
use scout_core::{
    average_precision, budget_grid, center_features, hamming_loss, select_subset, split_by_index,
    BBox, ClassId, Detection, GenConfig, Label, PredictionList, Region, RegionPrediction,
    SubsetProblem,
};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..500.0f64, 0.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn region(id: u32) -> impl Strategy<Value = Region> {
    (
        bbox(),
        0.0..1.0f64,
        0.5..8.0f64,
        0.0..8.0f64,
        0.0..1.5f64,
        0usize..50,
    )
        .prop_map(move |(bbox, obj, depth, back, minh, rank)| Region {
            id,
            bbox,
            proposal_rank: rank,
            objectness_score: obj,
            mean_depth: depth,
            mean_dist_back: back,
            min_height: minh,
            max_height: minh + 0.5,
            gt_class: Label::Background,
        })
}

fn detection(region_id: u32, class_count: usize) -> impl Strategy<Value = Detection> {
    (0..=class_count, 0.0..1.0f64).prop_map(move |(c, conf)| Detection {
        region_id,
        predicted_class: if c == class_count {
            Label::Background
        } else {
            Label::Class(ClassId(c))
        },
        confidence: conf,
    })
}

fn explored(len: usize, class_count: usize) -> impl Strategy<Value = Vec<(Region, Detection)>> {
    (0..len)
        .map(|i| (region(i as u32), detection(i as u32, class_count)))
        .collect::<Vec<_>>()
}

proptest! {
    #[test]
    fn iou_is_a_symmetric_unit_interval_score(a in bbox(), b in bbox()) {
        let ab = a.iou(&b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, b.iou(&a));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_features_ignore_argument_order(a in region(1), b in region(2)) {
        let ab = pair_features(&a, &b).unwrap();
        let ba = pair_features(&b, &a).unwrap();
        prop_assert_eq!(ab.0, ba.0);
        prop_assert!((0.0..=1.0).contains(&ab.0[0]));
        prop_assert!(ab.0[1] > 0.0 && ab.0[1] <= 1.0);
        prop_assert!(ab.0[2..].iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn pooled_context_never_exceeds_any_member(
        candidate in region(1000),
        kept in explored(6, 3),
    ) {
        let sentinel = SentinelParams {
            centroid_distance: 800.0,
            dist_back: 8.0,
            height: 3.0,
        };
        let agg = aggregate_pair_features(&candidate, &kept, 3, &sentinel).unwrap();
        let mut seen = [false; 3];
        for (r, d) in &kept {
            let Some(c) = d.predicted_class.class() else { continue };
            seen[c.0] = true;
            let pf = pair_features(&candidate, r).unwrap();
            for (pooled, member) in agg.slot(c).iter().zip(pf.0.iter()) {
                prop_assert!(pooled <= member);
            }
        }
        for c in 0..3 {
            if !seen[c] {
                prop_assert_eq!(agg.slot(ClassId(c)), &sentinel.pair_values()[..]);
            }
        }
    }

    #[test]
    fn suppression_keeps_a_conflict_free_subsequence(
        entries in explored(8, 2),
        threshold in 0.05..0.95f64,
    ) {
        let kept = non_maximal_suppress(&entries, threshold);
        prop_assert!(kept.len() <= entries.len());
        // order preserved: kept ids appear in the original order
        let orig: Vec<u32> = entries.iter().map(|(r, _)| r.id).collect();
        let mut cursor = 0;
        for (r, _) in &kept {
            let pos = orig[cursor..].iter().position(|id| *id == r.id);
            prop_assert!(pos.is_some());
            cursor += pos.unwrap() + 1;
        }
        // background always survives
        let bg_in = entries.iter().filter(|(_, d)| d.predicted_class.is_background()).count();
        let bg_out = kept.iter().filter(|(_, d)| d.predicted_class.is_background()).count();
        prop_assert_eq!(bg_in, bg_out);
        // no kept same-class pair overlaps above the threshold
        for i in 0..kept.len() {
            for j in (i + 1)..kept.len() {
                let (ri, di) = &kept[i];
                let (rj, dj) = &kept[j];
                if di.predicted_class.is_background() || di.predicted_class != dj.predicted_class {
                    continue;
                }
                prop_assert!(ri.bbox.iou(&rj.bbox) <= threshold);
            }
        }
    }

    #[test]
    fn assembled_state_ends_in_a_constant_bias(
        candidate in region(999),
        kept in explored(4, 2),
    ) {
        let sentinel = SentinelParams {
            centroid_distance: 800.0,
            dist_back: 8.0,
            height: 3.0,
        };
        let full = assemble_with_context(&candidate, &kept, 2, &sentinel).unwrap();
        prop_assert_eq!(full.len(), UNARY_LEN + 2 * PAIR_LEN + 1);
        prop_assert_eq!(full.values()[full.len() - 1], 1.0);
        let unary = assemble_unary_only(&candidate);
        prop_assert_eq!(unary.len(), UNARY_LEN + 1);
        prop_assert_eq!(&full.values()[..UNARY_LEN], &unary.values()[..UNARY_LEN]);
        prop_assert_eq!(&unary.values()[..UNARY_LEN], &unary_features(&candidate).0[..]);
    }

    #[test]
    fn disagreement_counts_match_the_flips_applied(labels in proptest::collection::vec(any::<bool>(), 1..40), flips in proptest::collection::vec(any::<bool>(), 1..40)) {
        let n = labels.len().min(flips.len());
        let a = PredictionList::new(
            (0..n)
                .map(|i| RegionPrediction { region_id: i as u32, label: labels[i], belief: 0.0 })
                .collect(),
        );
        let b = PredictionList::new(
            (0..n)
                .map(|i| RegionPrediction {
                    region_id: i as u32,
                    label: labels[i] ^ flips[i],
                    belief: 1.0,
                })
                .collect(),
        );
        let expected = flips[..n].iter().filter(|f| **f).count();
        prop_assert_eq!(hamming_loss(&a, &b).unwrap(), expected);
        prop_assert_eq!(hamming_loss(&b, &a).unwrap(), expected);
        prop_assert_eq!(hamming_loss(&a, &a).unwrap(), 0);
    }

    #[test]
    fn ranking_score_lives_on_the_unit_interval(
        hits in proptest::collection::vec(any::<bool>(), 0..60),
        extra_positives in 0usize..5,
    ) {
        let found = hits.iter().filter(|h| **h).count();
        let positives = found + extra_positives;
        let ap = average_precision(&hits, positives);
        prop_assert!((0.0..=1.0).contains(&ap));
        if positives == 0 {
            prop_assert_eq!(ap, 0.0);
        }
        // trailing misses change no recall point
        let mut padded = hits.clone();
        padded.push(false);
        prop_assert_eq!(average_precision(&padded, positives), ap);
    }

    #[test]
    fn promoting_a_hit_never_hurts_the_ranking_score(
        hits in proptest::collection::vec(any::<bool>(), 2..40),
        swap_at in 0usize..39,
    ) {
        let positives = hits.iter().filter(|h| **h).count();
        prop_assume!(positives > 0);
        let i = swap_at % (hits.len() - 1);
        prop_assume!(!hits[i] && hits[i + 1]);
        let before = average_precision(&hits, positives);
        let mut promoted = hits.clone();
        promoted.swap(i, i + 1);
        let after = average_precision(&promoted, positives);
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn budget_grids_step_up_to_the_maximum(interval in 1usize..30, max in 1usize..150) {
        let grid = budget_grid(interval, max).unwrap();
        prop_assert_eq!(*grid.last().unwrap(), max);
        prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(grid.iter().all(|b| *b >= 1 && *b <= max));
        for b in &grid[..grid.len() - 1] {
            prop_assert_eq!(b % interval, 0);
        }
    }

    #[test]
    fn row_selection_respects_its_contract(
        seed in 0u64..1000,
        entries in proptest::collection::vec(-3.0..3.0f64, 18..48),
        k_extra in 0usize..4,
    ) {
        let n = entries.len() / 3;
        let x = DMatrix::from_fn(n, 3, |r, c| entries[r * 3 + c]);
        let fixed = vec![0, 1];
        let k = (fixed.len() + 2 + k_extra).min(n);
        let problem = SubsetProblem::new(&x, fixed.clone(), k).unwrap();
        let solution = select_subset(&problem, 10, seed).unwrap();
        prop_assert_eq!(solution.selection.len(), k);
        prop_assert!(solution.selection.windows(2).all(|w| w[0] < w[1]));
        for f in &fixed {
            prop_assert!(solution.selection.contains(f));
        }
        // objective recomputed from scratch on the selected rows
        let centered = center_features(&x).unwrap();
        let p = centered.ncols();
        let mut scatter = DMatrix::from_diagonal_element(p, p, solution.ridge);
        for &i in &solution.selection {
            let row = centered.row(i).transpose();
            scatter += &row * row.transpose();
        }
        // skip inputs whose selected scatter is too ill conditioned for a
        // meaningful cross check
        let sym = nalgebra::SymmetricEigen::new(scatter.clone());
        let max_ev = sym.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = sym.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(min_ev > 1e-9 * max_ev.max(1.0));
        let dense: f64 = scatter
            .cholesky()
            .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            .unwrap();
        prop_assert!((dense - solution.logdet).abs() <= 1e-6 * solution.logdet.abs().max(1.0));
    }

    #[test]
    fn corpus_splits_partition_in_order(n in 0usize..40, frac in 0.0..1.0f64) {
        let config = GenConfig::default();
        let scenes = scout_core::generate_corpus(&config, n.min(6), 99).unwrap();
        let (head, tail) = split_by_index(&scenes, frac);
        prop_assert_eq!(head.len() + tail.len(), scenes.len());
        prop_assert_eq!(tail.len(), ((scenes.len() as f64) * frac).floor() as usize);
        let rejoined: Vec<u64> = head.iter().chain(tail.iter()).map(|s| s.id).collect();
        let original: Vec<u64> = scenes.iter().map(|s| s.id).collect();
        prop_assert_eq!(rejoined, original);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scenes_survive_a_disk_roundtrip(seed in 0u64..5000) {
        let config = GenConfig::default();
        let scenes = scout_core::generate_corpus(&config, 2, seed).unwrap();
        let dir = std::env::temp_dir().join(format!("scout-prop-{seed}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corpus.jsonl");
        scout_core::write_corpus(&path, &scenes).unwrap();
        let back = scout_core::read_corpus(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        prop_assert_eq!(back, scenes);
    }
}
