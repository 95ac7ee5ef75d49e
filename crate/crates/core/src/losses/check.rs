use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    finite_diff_gradient, iou, loss_gradient, Bbox, LossId, LossParams, Result, WiouState,
};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-6;
/// Pairs with any anchor edge within this distance of a target edge are
/// skipped: the losses have kinks there.
pub const BOUNDARY_MARGIN: f64 = 1e-5;
/// Floor on the gradient norm in the relative-error denominator.
const REL_FLOOR: f64 = 1e-8;

/// Seeded generator of anchor/target pairs covering overlapping, nested and
/// disjoint configurations at mixed scales and aspect ratios.
#[derive(Debug, Clone)]
pub struct PairSampler {
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_pair(&mut self) -> (Bbox, Bbox) {
        sample_pair(&mut self.rng)
    }
}

pub fn sample_pair<R: Rng>(rng: &mut R) -> (Bbox, Bbox) {
    let (gw, gh) = (rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0));
    let gt = Bbox::from_center(rng.gen_range(2.0..8.0), rng.gen_range(2.0..8.0), gw, gh);
    let (gcx, gcy) = gt.center();
    let a = Bbox::from_center(
        gcx + rng.gen_range(-1.5..1.5) * gw,
        gcy + rng.gen_range(-1.5..1.5) * gh,
        gw * rng.gen_range(0.3..3.0),
        gh * rng.gen_range(0.3..3.0),
    );
    (a, gt)
}

/// Smallest distance between an anchor edge and any target edge on the same
/// axis. Every non-differentiable configuration of the losses has this
/// distance equal to zero.
pub fn boundary_distance(a: &Bbox, gt: &Bbox) -> f64 {
    let mut m = f64::INFINITY;
    for ax in [a.x1, a.x2] {
        for gx in [gt.x1, gt.x2] {
            m = m.min((ax - gx).abs());
        }
    }
    for ay in [a.y1, a.y2] {
        for gy in [gt.y1, gt.y2] {
            m = m.min((ay - gy).abs());
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstPair {
    pub index: usize,
    pub anchor: Bbox,
    pub target: Bbox,
    pub analytic: [f64; 4],
    pub numeric: [f64; 4],
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: LossId,
    pub pairs_checked: usize,
    pub skipped_near_boundary: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: Option<WorstPair>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf, floor)`.
pub fn relative_error(analytic: &[f64; 4], numeric: &[f64; 4]) -> f64 {
    let inf = |v: &[f64; 4]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = std::array::from_fn::<f64, 4, _>(|i| analytic[i] - numeric[i]);
    inf(&diff) / inf(analytic).max(inf(numeric)).max(REL_FLOOR)
}

/// Compares analytic gradients with central finite differences on `pairs`
/// seeded random anchor/target pairs. WIoU v3 streams its running mean over
/// the pairs in order.
pub fn grad_check(
    id: LossId,
    pairs: usize,
    seed: u64,
    tolerance: f64,
    params: &LossParams,
) -> Result<GradCheckReport> {
    params.validate()?;
    let mut sampler = PairSampler::new(seed);
    let mut state = WiouState::default();
    let mut report = GradCheckReport {
        loss: id,
        pairs_checked: 0,
        skipped_near_boundary: 0,
        tolerance,
        max_rel_error: 0.0,
        worst: None,
    };
    while report.pairs_checked < pairs {
        let (a, gt) = sampler.next_pair();
        if boundary_distance(&a, &gt) < BOUNDARY_MARGIN {
            report.skipped_near_boundary += 1;
            continue;
        }
        let analytic = loss_gradient(id, &a, &gt, params, Some(&state))?;
        let numeric = finite_diff_gradient(id, &a, &gt, params, Some(&state), FD_STEP)?;
        let err = relative_error(&analytic, &numeric);
        if report.worst.is_none() || err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = Some(WorstPair {
                index: report.pairs_checked,
                anchor: a,
                target: gt,
                analytic,
                numeric,
                rel_error: err,
            });
        }
        if id == LossId::WiouV3 {
            state.update(1.0 - iou(&a, &gt), params.wiou_momentum);
        }
        report.pairs_checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let variants = [
            LossParams::default(),
            LossParams {
                ciou_alpha_weighting: true,
                piou_nonneg_variant: true,
                ..LossParams::default()
            },
        ];
        for params in &variants {
            for id in LossId::ALL {
                let r = grad_check(id, 1000, 17, 1e-4, params).unwrap();
                assert!(r.passed(), "{id}: {:?}", r.worst);
                assert_eq!(r.pairs_checked, 1000);
            }
        }
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!(
            (relative_error(&[1.0, 0.0, 0.0, 0.0], &[1.1, 0.0, 0.0, 0.0]) - 0.1 / 1.1).abs()
                < 1e-15
        );
    }

    #[test]
    fn boundary_pairs_are_skipped() {
        let a = Bbox::new(0.0, 0.0, 1.0, 1.0);
        let gt = Bbox::new(1.0, 0.5, 2.0, 3.0);
        assert_eq!(boundary_distance(&a, &gt), 0.0);
    }
}
