//! Independent reference implementations used by several test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sodkit::eval::{rank_order, Detection, GroundTruth};
use sodkit::losses::{iou, Bbox};

/// Matching by exhaustive search: among every one-to-one assignment of
/// detections to same-class ground truths at IoU >= threshold, the one whose
/// per-detection IoU vector (rank order, -1 when unmatched) is
/// lexicographically largest. Greedy matching must agree with it whenever
/// IoUs are distinct.
pub fn brute_force_matching(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
) -> Vec<Option<usize>> {
    let order = rank_order(dets);
    let mut best: Option<(Vec<f64>, Vec<Option<usize>>)> = None;
    let mut current = vec![None; dets.len()];
    let mut used = vec![false; gts.len()];
    search(
        dets,
        gts,
        threshold,
        &order,
        0,
        &mut current,
        &mut used,
        &mut best,
    );
    best.expect("the empty assignment always exists").1
}

#[allow(clippy::too_many_arguments)]
fn search(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
    order: &[usize],
    pos: usize,
    current: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    best: &mut Option<(Vec<f64>, Vec<Option<usize>>)>,
) {
    if pos == order.len() {
        let key: Vec<f64> = order
            .iter()
            .map(|&d| current[d].map_or(-1.0, |g| iou(&dets[d].bbox, &gts[g].bbox)))
            .collect();
        let better = match best {
            None => true,
            Some((k, _)) => key.partial_cmp(k) == Some(std::cmp::Ordering::Greater),
        };
        if better {
            *best = Some((key, current.clone()));
        }
        return;
    }
    let d = order[pos];
    search(dets, gts, threshold, order, pos + 1, current, used, best);
    for g in 0..gts.len() {
        let ok = !used[g]
            && !gts[g].ignore
            && gts[g].class_id == dets[d].class_id
            && iou(&dets[d].bbox, &gts[g].bbox) >= threshold;
        if ok {
            used[g] = true;
            current[d] = Some(g);
            search(dets, gts, threshold, order, pos + 1, current, used, best);
            current[d] = None;
            used[g] = false;
        }
    }
}

/// All-point AP by direct definition: for each recall level k / G reached,
/// the best precision at any rank whose recall is at least k / G.
pub fn brute_force_ap(labels: &[bool], total_gt: usize) -> f64 {
    let n = labels.len();
    let tp_at = |j: usize| labels[..=j].iter().filter(|&&t| t).count();
    let mut sum = 0.0;
    let total_tp = labels.iter().filter(|&&t| t).count();
    for k in 1..=total_tp {
        let mut best = 0.0f64;
        for j in 0..n {
            if tp_at(j) >= k {
                best = best.max(tp_at(j) as f64 / (j + 1) as f64);
            }
        }
        sum += best;
    }
    sum / total_gt as f64
}

/// Same quantity in exact rational arithmetic, returned as (num, den).
pub fn rational_ap(labels: &[bool], total_gt: usize) -> (u128, u128) {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let n = labels.len();
    let tp_at = |j: usize| labels[..=j].iter().filter(|&&t| t).count() as u128;
    let total_tp = if n == 0 { 0 } else { tp_at(n - 1) };
    let (mut num, mut den) = (0u128, 1u128);
    for k in 1..=total_tp {
        let (mut bn, mut bd) = (0u128, 1u128);
        for j in 0..n {
            let (pn, pd) = (tp_at(j), j as u128 + 1);
            if pn >= k && pn * bd > bn * pd {
                (bn, bd) = (pn, pd);
            }
        }
        num = num * bd + bn * den;
        den *= bd;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den *= total_gt as u128;
    let g = gcd(num, den);
    (num / g, den / g)
}

/// mAP from the brute-force matcher and AP, classes in ascending id.
pub fn brute_force_map(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> f64 {
    let mut images: Vec<&str> = dets.iter().map(|d| d.image_id.as_str()).collect();
    images.extend(gts.iter().map(|g| g.image_id.as_str()));
    images.sort_unstable();
    images.dedup();
    let mut tp = vec![false; dets.len()];
    for img in images {
        let di: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].image_id == img)
            .collect();
        let g: Vec<GroundTruth> = gts.iter().filter(|g| g.image_id == img).cloned().collect();
        let d: Vec<Detection> = di.iter().map(|&i| dets[i].clone()).collect();
        for (local, m) in brute_force_matching(&d, &g, threshold)
            .into_iter()
            .enumerate()
        {
            tp[di[local]] = m.is_some();
        }
    }
    let mut classes: Vec<usize> = gts
        .iter()
        .filter(|g| !g.ignore)
        .map(|g| g.class_id)
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let order = rank_order(dets);
    let mut sum = 0.0;
    for &c in &classes {
        let labels: Vec<bool> = order
            .iter()
            .filter(|&&i| dets[i].class_id == c)
            .map(|&i| tp[i])
            .collect();
        let g = gts.iter().filter(|g| !g.ignore && g.class_id == c).count();
        sum += brute_force_ap(&labels, g);
    }
    sum / classes.len() as f64
}

/// Small random scene: up to `max_boxes` boxes in total over two images and
/// two classes. Detections are jittered copies of ground truths or random
/// boxes, so matches, misses and duplicates all occur.
pub fn random_scene(seed: u64, max_boxes: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.gen_range(2..=max_boxes);
    let n_gt = rng.gen_range(1..total);
    let rand_box = |rng: &mut ChaCha8Rng| {
        let (x, y) = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0));
        Bbox::new(
            x,
            y,
            x + rng.gen_range(4.0..15.0),
            y + rng.gen_range(4.0..15.0),
        )
    };
    let image = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.7) { "img0" } else { "img1" };
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|_| GroundTruth::new(image(&mut rng), rng.gen_range(1..=2), rand_box(&mut rng)))
        .collect();
    let dets = (0..total - n_gt)
        .map(|_| {
            let score = rng.gen_range(0.0..1.0);
            if rng.gen_bool(0.7) {
                let g = &gts[rng.gen_range(0..gts.len())];
                let j = |rng: &mut ChaCha8Rng| rng.gen_range(-2.5..2.5);
                let b = Bbox::new(
                    g.bbox.x1 + j(&mut rng),
                    g.bbox.y1 + j(&mut rng),
                    g.bbox.x2 + j(&mut rng),
                    g.bbox.y2 + j(&mut rng),
                )
                .ordered();
                let class = if rng.gen_bool(0.85) {
                    g.class_id
                } else {
                    3 - g.class_id
                };
                Detection::new(g.image_id.clone(), class, b, score)
            } else {
                Detection::new(
                    image(&mut rng),
                    rng.gen_range(1..=2),
                    rand_box(&mut rng),
                    score,
                )
            }
        })
        .collect();
    (dets, gts)
}
