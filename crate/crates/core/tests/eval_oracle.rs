mod common;

use common::{brute_force_ap, brute_force_map, brute_force_matching, random_scene, rational_ap};
use sodkit::eval::{
    average_precision, map_at, map_range, match_detections, range_thresholds, Detection, EvalError,
    GroundTruth, Interpolation,
};
use sodkit::losses::Bbox;

const ALL: Interpolation = Interpolation::AllPoint;

#[test]
fn greedy_matching_agrees_with_exhaustive_search() {
    for seed in 0..2000 {
        let (dets, gts) = random_scene(seed, 6);
        for img in ["img0", "img1"] {
            let d: Vec<Detection> = dets.iter().filter(|d| d.image_id == img).cloned().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.image_id == img).cloned().collect();
            for t in [0.3, 0.5, 0.75] {
                assert_eq!(
                    match_detections(&d, &g, t).det_match,
                    brute_force_matching(&d, &g, t),
                    "seed {seed} image {img} threshold {t}"
                );
            }
        }
    }
}

#[test]
fn ap_matches_direct_definition_exactly() {
    // Every TP/FP sequence up to length 8, against every feasible positive count.
    for len in 0..=8u32 {
        for bits in 0..(1u32 << len) {
            let labels: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let hits = labels.iter().filter(|&&t| t).count();
            for total in hits.max(1)..=hits + 2 {
                let ap = average_precision(&labels, total, ALL).unwrap();
                assert_eq!(ap, brute_force_ap(&labels, total), "{labels:?} / {total}");
                let (num, den) = rational_ap(&labels, total);
                assert!((ap - num as f64 / den as f64).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn map_matches_brute_force_on_small_scenes() {
    let mut partial = 0;
    for seed in 0..3000 {
        let (dets, gts) = random_scene(seed, 6);
        for t in range_thresholds() {
            let r = map_at(&dets, &gts, t, ALL).unwrap();
            assert_eq!(r.map, brute_force_map(&dets, &gts, t), "seed {seed} t {t}");
            partial += usize::from(r.map > 0.0 && r.map < 1.0);
        }
    }
    // The scenes must exercise more than the all-or-nothing cases.
    assert!(partial > 3000, "{partial}");
}

#[test]
fn tp_fp_tp_fixture() {
    let gts = vec![
        GroundTruth::new("a", 1, Bbox::new(0., 0., 10., 10.)),
        GroundTruth::new("a", 1, Bbox::new(20., 0., 30., 10.)),
    ];
    let dets = vec![
        Detection::new("a", 1, Bbox::new(0., 0., 10., 10.), 0.9),
        Detection::new("a", 1, Bbox::new(50., 50., 60., 60.), 0.8),
        Detection::new("a", 1, Bbox::new(20., 0., 30., 10.), 0.7),
    ];
    let r = map_at(&dets, &gts, 0.5, ALL).unwrap();
    assert!((r.map - 0.833_333_333_333_333_3).abs() < 1e-9);
    assert_eq!(
        r.classes[0].pr_curve,
        [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]
    );
}

#[test]
fn map_range_is_the_mean_of_fixed_thresholds() {
    for seed in 0..300 {
        let (dets, gts) = random_scene(seed, 6);
        let mean: f64 = range_thresholds()
            .iter()
            .map(|&t| map_at(&dets, &gts, t, ALL).unwrap().map)
            .sum::<f64>()
            / 10.0;
        assert!((map_range(&dets, &gts, ALL).unwrap() - mean).abs() <= 1e-12);
    }
}

#[test]
fn ap_depends_only_on_ranking() {
    for seed in 0..300 {
        let (dets, gts) = random_scene(seed, 6);
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                score: d.score.powi(3) * 0.5 + 0.1,
                ..d.clone()
            })
            .collect();
        let a = map_at(&dets, &gts, 0.5, ALL).unwrap().map;
        let b = map_at(&squashed, &gts, 0.5, ALL).unwrap().map;
        assert_eq!(a, b, "seed {seed}");
    }
}

#[test]
fn lowest_ranked_fp_never_helps() {
    for seed in 0..300 {
        let (mut dets, gts) = random_scene(seed, 6);
        let before = map_at(&dets, &gts, 0.5, ALL).unwrap();
        for c in before.classes.iter().map(|c| c.class_id) {
            dets.push(Detection::new(
                "img0",
                c,
                Bbox::new(900., 900., 901., 901.),
                0.0,
            ));
        }
        let after = map_at(&dets, &gts, 0.5, ALL).unwrap();
        assert!(after.map <= before.map);
        assert_eq!(after.recall, before.recall);
    }
}

#[test]
fn empty_ground_truth_is_an_error() {
    let dets = vec![Detection::new("a", 1, Bbox::new(0., 0., 1., 1.), 0.5)];
    assert_eq!(
        map_at(&dets, &[], 0.5, ALL),
        Err(EvalError::EmptyGroundTruth)
    );
    assert_eq!(map_range(&dets, &[], ALL), Err(EvalError::EmptyGroundTruth));
}
