mod common;

use common::{ap101_oracle, match_oracle, pr_oracle, Item};
use deadwood::eval::{
    average_precision_101, category_counts, coco_map, evaluate, f1_score, match_detections, mean_prf, pr_curve,
    Detection, EvalParams, GroundTruth,
};
use deadwood::geom::BBox;
use deadwood::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage, InstanceMask, Segmentation};
use proptest::prelude::*;

fn grid_box() -> impl Strategy<Value = BBox> {
    (0u8..5, 0u8..5, 2u8..6, 2u8..6).prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
}

fn arb_item() -> impl Strategy<Value = Item> {
    (1u64..3, 1u64..3, grid_box(), 0u8..5).prop_map(|(image, cat, bbox, s)| Item { image, cat, bbox, score: s as f64 / 4.0 })
}

fn to_det(i: &Item) -> Detection {
    Detection { image_id: i.image, category_id: i.cat, bbox: i.bbox, score: i.score, mask: None }
}

fn to_gt(k: usize, i: &Item) -> GroundTruth {
    GroundTruth { id: k as u64 + 1, image_id: i.image, category_id: i.cat, bbox: i.bbox, iscrowd: false, mask: None }
}

fn scored_strategy() -> impl Strategy<Value = (Vec<(f64, bool)>, usize)> {
    (prop::collection::vec((0u8..20, any::<bool>()), 0..40), 1usize..30).prop_map(|(v, extra)| {
        let scored: Vec<(f64, bool)> = v.into_iter().map(|(s, t)| (s as f64 / 19.0, t)).collect();
        let tps = scored.iter().filter(|d| d.1).count();
        (scored, tps + extra - 1 + (tps == 0) as usize)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matching_equals_exhaustive_oracle(
        dets in prop::collection::vec(arb_item(), 0..=6),
        gts in prop::collection::vec(arb_item(), 0..=4),
        thresh in prop::sample::select(vec![0.1, 0.3, 0.5, 0.75]),
    ) {
        let d: Vec<Detection> = dets.iter().map(to_det).collect();
        let g: Vec<GroundTruth> = gts.iter().enumerate().map(|(k, i)| to_gt(k, i)).collect();
        let m = match_detections(&d, &g, thresh, false).unwrap();
        let want = match_oracle(&dets, &gts, thresh);
        let got: Vec<Option<usize>> = m.dets.iter().map(|r| r.gt).collect();
        prop_assert_eq!(&got, &want);
        for (i, r) in m.dets.iter().enumerate() {
            prop_assert_eq!(r.tp, want[i].is_some());
        }
        for (j, owner) in m.gts.iter().enumerate() {
            prop_assert_eq!(*owner, want.iter().position(|w| *w == Some(j)));
        }
    }

    #[test]
    fn pr_curve_equals_counting((scored, n_gt) in scored_strategy()) {
        let c = pr_curve(&scored, n_gt).unwrap();
        let want = pr_oracle(&scored, n_gt);
        prop_assert_eq!(c.points.len(), want.len());
        for (p, w) in c.points.iter().zip(&want) {
            prop_assert_eq!((p.threshold, p.precision, p.recall), *w);
        }
        prop_assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
    }

    #[test]
    fn ap101_equals_direct_sum((scored, n_gt) in scored_strategy()) {
        let ap = average_precision_101(&pr_curve(&scored, n_gt).unwrap());
        prop_assert!((ap - ap101_oracle(&scored, n_gt)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn extra_false_positive_never_raises_ap((scored, n_gt) in scored_strategy(), s in 0u8..20) {
        let base = average_precision_101(&pr_curve(&scored, n_gt).unwrap());
        let mut more = scored.clone();
        more.push((s as f64 / 19.0, false));
        prop_assert!(average_precision_101(&pr_curve(&more, n_gt).unwrap()) <= base);
    }

    #[test]
    fn top_true_positive_never_lowers_ap((scored, n_gt) in scored_strategy()) {
        let base = average_precision_101(&pr_curve(&scored, n_gt).unwrap());
        let mut more = scored.clone();
        more.push((2.0, true));
        prop_assert!(average_precision_101(&pr_curve(&more, n_gt + 1).unwrap()) >= base);
    }

    #[test]
    fn ap_is_antitone_in_threshold(
        dets in prop::collection::vec(arb_item(), 0..12),
        gts in prop::collection::vec(arb_item(), 1..8),
    ) {
        let d: Vec<Detection> = dets.iter().map(to_det).collect();
        let g: Vec<GroundTruth> = gts.iter().enumerate().map(|(k, i)| to_gt(k, i)).collect();
        let s = coco_map(&d, &g, false).unwrap();
        prop_assert!(s.ap_per_threshold.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.ap50 >= s.ap75);
    }

    #[test]
    fn order_preserving_permutation_is_stable(dets in prop::collection::vec(arb_item(), 2..7), gts in prop::collection::vec(arb_item(), 1..5)) {
        // reorder by descending score, keeping equal scores in index order;
        // the greedy rule must then assign the same gt to each detection
        let d: Vec<Detection> = dets.iter().map(to_det).collect();
        let g: Vec<GroundTruth> = gts.iter().enumerate().map(|(k, i)| to_gt(k, i)).collect();
        let mut perm: Vec<usize> = (0..d.len()).collect();
        perm.sort_by(|&a, &b| d[b].score.partial_cmp(&d[a].score).unwrap());
        let pd: Vec<Detection> = perm.iter().map(|&i| d[i].clone()).collect();
        let a = match_detections(&d, &g, 0.5, false).unwrap();
        let b = match_detections(&pd, &g, 0.5, false).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.dets[i], b.dets[k]);
        }
    }

    #[test]
    fn counts_ignore_order(dets in prop::collection::vec(arb_item(), 0..20)) {
        let d: Vec<Detection> = dets.iter().map(to_det).collect();
        let mut r = d.clone();
        r.reverse();
        prop_assert_eq!(category_counts(&d, &[1, 2]), category_counts(&r, &[1, 2]));
    }

    #[test]
    fn per_image_f1_is_harmonic_mean(dets in prop::collection::vec(arb_item(), 0..12), gts in prop::collection::vec(arb_item(), 0..8)) {
        let d: Vec<Detection> = dets.iter().map(to_det).collect();
        let g: Vec<GroundTruth> = gts.iter().enumerate().map(|(k, i)| to_gt(k, i)).collect();
        let m = match_detections(&d, &g, 0.5, false).unwrap();
        let s = mean_prf(&[1, 2], &d, &g, &m);
        for p in &s.per_image {
            let want = if p.precision + p.recall == 0.0 { 0.0 } else { 2.0 * p.precision * p.recall / (p.precision + p.recall) };
            prop_assert_eq!(p.f1, want);
            prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
        prop_assert_eq!(s.images_evaluated + s.images_skipped, 2);
    }
}

#[test]
fn perfect_detections_score_one() {
    let gts: Vec<GroundTruth> = (0..5)
        .map(|k| GroundTruth {
            id: k + 1,
            image_id: 1 + k % 2,
            category_id: 1 + k % 2,
            bbox: BBox::new(k as f64 * 10.0, 0.0, 8.0, 8.0),
            iscrowd: false,
            mask: None,
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection { image_id: g.image_id, category_id: g.category_id, bbox: g.bbox, score: 0.9, mask: None })
        .collect();
    let s = coco_map(&dets, &gts, false).unwrap();
    assert_eq!((s.ap50, s.ap75, s.map), (1.0, 1.0, 1.0));
    let m = match_detections(&dets, &gts, 0.5, false).unwrap();
    let p = mean_prf(&[1, 2], &dets, &gts, &m);
    assert_eq!((p.m_precision, p.m_recall, p.m_f1), (1.0, 1.0, 1.0));
}

#[test]
fn jitter_between_thresholds() {
    // gt 10×10, det shifted by 2 → IoU 80/120 = 2/3, inside (0.5, 0.75)
    let gts: Vec<GroundTruth> = (0..3)
        .map(|k| GroundTruth {
            id: k + 1,
            image_id: 1,
            category_id: 1,
            bbox: BBox::new(k as f64 * 20.0, 0.0, 10.0, 10.0),
            iscrowd: false,
            mask: None,
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection { image_id: 1, category_id: 1, bbox: BBox::new(g.bbox.x + 2.0, 0.0, 10.0, 10.0), score: 0.8, mask: None })
        .collect();
    assert!((deadwood::iou(&dets[0].bbox, &gts[0].bbox) - 2.0 / 3.0).abs() < 1e-15);
    let s = coco_map(&dets, &gts, false).unwrap();
    assert_eq!(s.ap50, 1.0);
    assert_eq!(s.ap75, 0.0);
    // thresholds 0.50, 0.55, 0.60, 0.65 pass
    assert!((s.map - 0.4).abs() < 1e-15);
}

#[test]
fn mask_matching_uses_pixels() {
    let m = InstanceMask::from_rect(20, 20, 0, 0, 10, 10);
    let gts = vec![GroundTruth { id: 1, image_id: 1, category_id: 1, bbox: BBox::new(0.0, 0.0, 10.0, 10.0), iscrowd: false, mask: Some(m.clone()) }];
    // box agrees, mask is a sliver
    let sliver = InstanceMask::from_rect(20, 20, 0, 0, 10, 2);
    let dets = vec![Detection { image_id: 1, category_id: 1, bbox: BBox::new(0.0, 0.0, 10.0, 10.0), score: 0.9, mask: Some(sliver) }];
    assert!(match_detections(&dets, &gts, 0.5, false).unwrap().dets[0].tp);
    assert!(!match_detections(&dets, &gts, 0.5, true).unwrap().dets[0].tp);
    let no_mask = vec![Detection { mask: None, ..dets[0].clone() }];
    assert!(match_detections(&no_mask, &gts, 0.5, true).is_err());
}

#[test]
fn evaluate_counts_and_skips() {
    let ds = CocoDataset {
        images: (1..=3).map(|id| CocoImage { id, file_name: format!("{id}.png"), width: 50, height: 50 }).collect(),
        annotations: vec![
            CocoAnnotation { id: 1, image_id: 1, category_id: 1, bbox: BBox::new(0.0, 0.0, 10.0, 10.0), area: 100.0, segmentation: Segmentation::default(), iscrowd: 0 },
            CocoAnnotation { id: 2, image_id: 1, category_id: 2, bbox: BBox::new(20.0, 20.0, 10.0, 10.0), area: 100.0, segmentation: Segmentation::default(), iscrowd: 0 },
        ],
        categories: vec![CocoCategory { id: 1, name: "type_a".into() }, CocoCategory { id: 2, name: "type_b".into() }],
    };
    let det = |cat, x, score| Detection { image_id: 1, category_id: cat, bbox: BBox::new(x, x, 10.0, 10.0), score, mask: None };
    let dets = vec![det(1, 0.0, 0.9), det(1, 30.0, 0.4), det(1, 40.0, 0.3), det(2, 20.0, 0.8), det(2, 35.0, 0.2)];
    let r = evaluate(&ds, &dets, EvalParams::default()).unwrap();
    assert_eq!(r.images_evaluated, 1);
    assert_eq!(r.images_skipped, 2);
    assert_eq!(r.m_precision, 0.4);
    assert_eq!(r.m_recall, 1.0);
    assert_eq!(r.m_f1, f1_score(0.4, 1.0));
    assert_eq!(r.category_counts.iter().map(|c| (c.name.as_str(), c.count)).collect::<Vec<_>>(), vec![("type_a", 3), ("type_b", 2)]);
    assert!(r.to_csv().starts_with("metric,value\nap50,1.0\n"));
    assert_eq!(r.histogram_csv().lines().count(), 21);
}
