//! IoU-based bounding-box regression losses with analytic anchor gradients.
//!
//! Every loss is a function of an anchor box `a` and a fixed target `gt`.
//! Gradients are taken with respect to the anchor corners
//! `(x1, y1, x2, y2)`. Quantities that are detached (held constant during
//! differentiation) are captured in [`Detached`] so the finite-difference
//! oracle can freeze exactly the same terms.

mod check;
mod geometry;
mod piou;
mod wiou;

pub use check::{grad_check, sample_pair, GradCheckReport, PairSampler, WorstPair};
pub use geometry::{iou, Bbox, PairGeometry};
pub use piou::{piou_attention, piou_loss, piou_penalty, piou_penalty_term, PiouTerms};
pub use wiou::{wiou_loss, wiou_v3_with_beta, WiouState, WiouVersion};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use geometry::{distance_term_vg, enclosing_x_grad, enclosing_y_grad, iou_vg, Vg};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("unknown loss '{0}' (expected one of: {names})", names = LossId::names().join(", "))]
    UnknownLoss(String),
    #[error("{role} box {bbox} must have positive, finite width and height")]
    DegenerateBox { role: &'static str, bbox: Bbox },
    #[error("invalid loss parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossId {
    /// `1 - IoU`.
    Iou,
    Ciou,
    Eiou,
    WiouV1,
    WiouV3,
    /// PIoU without the attention factor: `1 - IoU - exp(-P^2)`.
    PiouBase,
    /// PIoU base loss scaled by the attention `u(lambda * q)`.
    Piou,
}

impl LossId {
    pub const ALL: [LossId; 7] = [
        LossId::Iou,
        LossId::Ciou,
        LossId::Eiou,
        LossId::WiouV1,
        LossId::WiouV3,
        LossId::PiouBase,
        LossId::Piou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossId::Iou => "iou",
            LossId::Ciou => "ciou",
            LossId::Eiou => "eiou",
            LossId::WiouV1 => "wiou-v1",
            LossId::WiouV3 => "wiou-v3",
            LossId::PiouBase => "piou-base",
            LossId::Piou => "piou",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|l| l.name()).collect()
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossId {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LossError::UnknownLoss(s.to_string()))
    }
}

/// Hyperparameters and formula switches for the loss family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// PIoU attention scale.
    pub lambda: f64,
    /// WIoU v3 focusing parameters.
    pub delta: f64,
    pub alpha: f64,
    /// Scale the CIoU aspect term by the detached trade-off weight
    /// `v / ((1 - IoU) + v)`.
    pub ciou_alpha_weighting: bool,
    /// Use `1 - IoU + 1 - exp(-P^2)` as the PIoU base instead of
    /// `1 - IoU - exp(-P^2)`.
    pub piou_nonneg_variant: bool,
    /// Momentum of the WIoU running mean of `1 - IoU`.
    pub wiou_momentum: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            lambda: 1.2,
            delta: 3.0,
            alpha: 1.9,
            ciou_alpha_weighting: false,
            piou_nonneg_variant: false,
            wiou_momentum: 0.01,
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !positive(self.lambda) {
            return Err(LossError::InvalidParams(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !positive(self.alpha) {
            return Err(LossError::InvalidParams(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !positive(self.delta) {
            return Err(LossError::InvalidParams(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !(self.wiou_momentum > 0.0 && self.wiou_momentum <= 1.0) {
            return Err(LossError::InvalidParams(format!(
                "momentum must lie in (0, 1], got {}",
                self.wiou_momentum
            )));
        }
        Ok(())
    }
}

/// Values treated as constants when differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Detached {
    /// CIoU trade-off weight (only with `ciou_alpha_weighting`).
    pub ciou_alpha: Option<f64>,
    /// WIoU v3 gradient gain `r = beta / (delta * alpha^(beta - delta))`.
    pub wiou_gain: Option<f64>,
}

impl Detached {
    /// Captures the detached terms of `id` at anchor `a`. `wiou` supplies the
    /// running mean for v3; `None` behaves like a fresh state.
    pub fn capture(
        id: LossId,
        a: &Bbox,
        gt: &Bbox,
        p: &LossParams,
        wiou: Option<&WiouState>,
    ) -> Self {
        match id {
            LossId::Ciou if p.ciou_alpha_weighting => Self {
                ciou_alpha: Some(ciou_alpha(a, gt)),
                wiou_gain: None,
            },
            LossId::WiouV3 => {
                let fresh = WiouState::default();
                let state = wiou.unwrap_or(&fresh);
                Self {
                    ciou_alpha: None,
                    wiou_gain: Some(wiou::gain(state.beta(1.0 - iou(a, gt)), p)),
                }
            }
            _ => Self::default(),
        }
    }
}

const ASPECT_K: f64 = 4.0 / (PI * PI);

fn aspect_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let (w, h) = (a.width(), a.height());
    let r = w / h;
    let delta = (gt.width() / gt.height()).atan() - r.atan();
    let denom = 1.0 + r * r;
    let dv_dw = -2.0 * ASPECT_K * delta / (h * denom);
    let dv_dh = 2.0 * ASPECT_K * delta * w / (h * h * denom);
    Vg {
        v: ASPECT_K * delta * delta,
        g: [-dv_dw, -dv_dh, dv_dw, dv_dh],
    }
}

fn ciou_alpha(a: &Bbox, gt: &Bbox) -> f64 {
    let v = aspect_vg(a, gt).v;
    let denom = (1.0 - iou(a, gt)) + v;
    if denom <= 0.0 {
        0.0
    } else {
        v / denom
    }
}

fn one_minus_iou(a: &Bbox, gt: &Bbox) -> Vg {
    iou_vg(a, gt).scale(-1.0).add(Vg::constant(1.0))
}

fn ciou_vg(a: &Bbox, gt: &Bbox, alpha: Option<f64>) -> Vg {
    let aspect = aspect_vg(a, gt);
    let aspect = match alpha {
        Some(w) => aspect.scale(w),
        None => aspect,
    };
    one_minus_iou(a, gt)
        .add(distance_term_vg(a, gt))
        .add(aspect)
}

fn eiou_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let geo = PairGeometry::new(a, gt);
    let size_term = |diff: f64, d_diff: [f64; 4], c: f64, d_c: [f64; 4]| {
        let t = diff * diff / (c * c);
        Vg {
            v: t,
            g: std::array::from_fn(|i| 2.0 * diff * d_diff[i] / (c * c) - 2.0 * t * d_c[i] / c),
        }
    };
    let tw = size_term(
        a.width() - gt.width(),
        [-1.0, 0.0, 1.0, 0.0],
        geo.w_c,
        enclosing_x_grad(a, gt),
    );
    let th = size_term(
        a.height() - gt.height(),
        [0.0, -1.0, 0.0, 1.0],
        geo.h_c,
        enclosing_y_grad(a, gt),
    );
    one_minus_iou(a, gt)
        .add(distance_term_vg(a, gt))
        .add(tw)
        .add(th)
}

fn check_pair(a: &Bbox, gt: &Bbox) -> Result<()> {
    gt.require_positive("target")?;
    a.require_positive("anchor")
}

/// Loss value and gradient with the detached terms supplied explicitly.
fn evaluate(id: LossId, a: &Bbox, gt: &Bbox, p: &LossParams, frozen: &Detached) -> Result<Vg> {
    check_pair(a, gt)?;
    Ok(match id {
        LossId::Iou => one_minus_iou(a, gt),
        LossId::Ciou => ciou_vg(a, gt, frozen.ciou_alpha),
        LossId::Eiou => eiou_vg(a, gt),
        LossId::WiouV1 => wiou::v1_vg(a, gt),
        LossId::WiouV3 => wiou::v1_vg(a, gt).scale(frozen.wiou_gain.unwrap_or(1.0)),
        LossId::PiouBase => piou::base_vg(a, gt, p),
        LossId::Piou => piou::full_vg(a, gt, p),
    })
}

/// Loss value with detached terms frozen at `frozen`.
pub fn loss_value_detached(
    id: LossId,
    a: &Bbox,
    gt: &Bbox,
    p: &LossParams,
    frozen: &Detached,
) -> Result<f64> {
    evaluate(id, a, gt, p, frozen).map(|vg| vg.v)
}

/// Loss value at `a`. WIoU v3 reads (but does not update) `wiou`.
pub fn loss_value(
    id: LossId,
    a: &Bbox,
    gt: &Bbox,
    p: &LossParams,
    wiou: Option<&WiouState>,
) -> Result<f64> {
    let frozen = Detached::capture(id, a, gt, p, wiou);
    loss_value_detached(id, a, gt, p, &frozen)
}

/// Analytic gradient of the loss with respect to the anchor corners.
pub fn loss_gradient(
    id: LossId,
    a: &Bbox,
    gt: &Bbox,
    p: &LossParams,
    wiou: Option<&WiouState>,
) -> Result<[f64; 4]> {
    let frozen = Detached::capture(id, a, gt, p, wiou);
    evaluate(id, a, gt, p, &frozen).map(|vg| vg.g)
}

/// Value and gradient in one pass.
pub fn loss_value_and_gradient(
    id: LossId,
    a: &Bbox,
    gt: &Bbox,
    p: &LossParams,
    wiou: Option<&WiouState>,
) -> Result<(f64, [f64; 4])> {
    let frozen = Detached::capture(id, a, gt, p, wiou);
    evaluate(id, a, gt, p, &frozen).map(|vg| (vg.v, vg.g))
}

/// Central finite differences of the loss value, with detached terms frozen
/// at the unperturbed anchor.
pub fn finite_diff_gradient(
    id: LossId,
    a: &Bbox,
    gt: &Bbox,
    p: &LossParams,
    wiou: Option<&WiouState>,
    step: f64,
) -> Result<[f64; 4]> {
    if !positive(step) {
        return Err(LossError::InvalidParams(format!(
            "step must be > 0, got {step}"
        )));
    }
    let frozen = Detached::capture(id, a, gt, p, wiou);
    let base = a.to_array();
    let mut grad = [0.0; 4];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += step;
        minus[i] -= step;
        let fp = loss_value_detached(id, &Bbox::from_array(plus), gt, p, &frozen)?;
        let fm = loss_value_detached(id, &Bbox::from_array(minus), gt, p, &frozen)?;
        *g = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Printed CIoU: `(1 - IoU) + d^2/c^2 + v`, optionally with the trade-off
/// weight on `v`.
pub fn ciou_loss(a: &Bbox, gt: &Bbox, p: &LossParams) -> Result<f64> {
    loss_value(LossId::Ciou, a, gt, p, None)
}

/// EIoU: `(1 - IoU) + d^2/c^2 + (w - w_gt)^2/w_c^2 + (h - h_gt)^2/h_c^2`.
pub fn eiou_loss(a: &Bbox, gt: &Bbox) -> Result<f64> {
    loss_value(LossId::Eiou, a, gt, &LossParams::default(), None)
}

/// The `d^2 / c^2` centre-distance penalty shared by CIoU and EIoU, with
/// its anchor gradient.
pub fn center_distance_penalty(a: &Bbox, gt: &Bbox) -> (f64, [f64; 4]) {
    let vg = distance_term_vg(a, gt);
    (vg.v, vg.g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-6;

    fn p() -> LossParams {
        LossParams::default()
    }

    #[test]
    fn ciou_hand_values() {
        let b = Bbox::new(0.3, 0.1, 2.0, 5.0);
        assert!(ciou_loss(&b, &b, &p()).unwrap().abs() < 1e-12);
        let inner = Bbox::new(1.0, 1.0, 3.0, 3.0);
        let outer = Bbox::new(0.0, 0.0, 4.0, 4.0);
        assert!((ciou_loss(&inner, &outer, &p()).unwrap() - 0.75).abs() < TOL);
        let far = ciou_loss(&Bbox::new(0., 0., 1., 1.), &Bbox::new(2., 2., 3., 3.), &p()).unwrap();
        assert!((far - (1.0 + 4.0 / 9.0)).abs() < TOL);
    }

    #[test]
    fn eiou_hand_values_and_dominance() {
        let inner = Bbox::new(1.0, 1.0, 3.0, 3.0);
        let outer = Bbox::new(0.0, 0.0, 4.0, 4.0);
        assert!((eiou_loss(&inner, &outer).unwrap() - 1.25).abs() < TOL);
        assert_eq!(eiou_loss(&outer, &outer).unwrap(), 0.0);
        let mut sampler = PairSampler::new(7);
        for _ in 0..500 {
            let (a, gt) = sampler.next_pair();
            let without_v = 1.0 - iou(&a, &gt) + center_distance_penalty(&a, &gt).0;
            assert!(eiou_loss(&a, &gt).unwrap() >= without_v - 1e-15);
        }
    }

    #[test]
    fn alpha_weighting_only_scales_aspect_term() {
        let a = Bbox::new(0.0, 0.0, 3.0, 1.0);
        let gt = Bbox::new(0.5, 0.0, 2.0, 2.0);
        let printed = ciou_loss(&a, &gt, &p()).unwrap();
        let weighted = ciou_loss(
            &a,
            &gt,
            &LossParams {
                ciou_alpha_weighting: true,
                ..p()
            },
        )
        .unwrap();
        assert!(weighted < printed);
        assert!(weighted > 1.0 - iou(&a, &gt));
    }

    #[test]
    fn degenerate_boxes_are_errors() {
        let gt = Bbox::new(0.0, 0.0, 1.0, 0.0);
        let a = Bbox::new(0.0, 0.0, 1.0, 1.0);
        for id in LossId::ALL {
            assert!(matches!(
                loss_value(id, &a, &gt, &p(), None),
                Err(LossError::DegenerateBox { role: "target", .. })
            ));
            assert!(matches!(
                loss_gradient(id, &gt, &a, &p(), None),
                Err(LossError::DegenerateBox { role: "anchor", .. })
            ));
        }
    }

    #[test]
    fn loss_ids_parse() {
        for id in LossId::ALL {
            assert_eq!(id.name().parse::<LossId>().unwrap(), id);
        }
        assert!(matches!(
            "hexfusion".parse::<LossId>(),
            Err(LossError::UnknownLoss(_))
        ));
    }

    #[test]
    fn eiou_minimum_has_zero_gradient() {
        let gt = Bbox::new(1.0, 2.0, 4.0, 3.5);
        let g = loss_gradient(LossId::Eiou, &gt, &gt, &p(), None).unwrap();
        assert_eq!(g, [0.0; 4]);
    }

    #[test]
    fn distance_gradient_shrinks_as_enclosure_grows() {
        // Same centre offset, larger anchor: c grows, so the translation
        // derivative 2d/c^2 of d^2/c^2 shrinks.
        let gt = Bbox::from_center(0.0, 0.0, 1.0, 1.0);
        let small = Bbox::from_center(3.0, 0.0, 1.0, 1.0);
        let large = Bbox::from_center(3.0, 0.0, 3.0, 3.0);
        let shift = |a: &Bbox| {
            let g = center_distance_penalty(a, &gt).1;
            (g[0] + g[2]).abs()
        };
        assert_eq!(
            PairGeometry::new(&small, &gt).d,
            PairGeometry::new(&large, &gt).d
        );
        assert!(PairGeometry::new(&large, &gt).c > PairGeometry::new(&small, &gt).c);
        assert!(shift(&large) < shift(&small));
    }

    #[test]
    fn central_difference_is_second_order() {
        let a = Bbox::new(0.2, 0.1, 2.3, 1.7);
        let gt = Bbox::new(1.0, 0.6, 3.1, 2.9);
        let exact = loss_gradient(LossId::Ciou, &a, &gt, &p(), None).unwrap();
        let err = |h: f64| {
            let fd = finite_diff_gradient(LossId::Ciou, &a, &gt, &p(), None, h).unwrap();
            fd.iter()
                .zip(&exact)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn symmetric_configuration_gives_antisymmetric_gradient() {
        let a = Bbox::new(1.0, 1.0, 3.0, 3.0);
        let gt = Bbox::new(0.0, 0.0, 4.0, 4.0);
        for id in [LossId::Iou, LossId::Ciou, LossId::Eiou, LossId::PiouBase] {
            let g = loss_gradient(id, &a, &gt, &p(), None).unwrap();
            assert!((g[0] + g[2]).abs() < 1e-12, "{id}: {g:?}");
            assert!((g[1] + g[3]).abs() < 1e-12, "{id}: {g:?}");
            assert!(
                g[0] > 0.0 && g[2] < 0.0,
                "{id} should grow the anchor: {g:?}"
            );
        }
    }
}
