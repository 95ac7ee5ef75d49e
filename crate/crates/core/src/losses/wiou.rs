use super::geometry::{iou_vg, Vg};
use super::{iou, Bbox, LossParams, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WiouVersion {
    V1,
    V3,
}

/// Running mean of `1 - IoU` over the pairs seen so far.
///
/// Single writer: parallel callers keep one state each and [`merge`] them.
///
/// [`merge`]: WiouState::merge
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WiouState {
    mean: f64,
    count: u64,
}

impl WiouState {
    /// A state holding the plain mean of `values`, for replaying one batch.
    pub fn from_batch(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            count: values.len() as u64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Outlier degree `beta = L_IoU / mean`. Defined as 1 before the first
    /// update, and when the mean is zero.
    pub fn beta(&self, l_iou: f64) -> f64 {
        if self.count == 0 || self.mean <= 0.0 {
            1.0
        } else {
            l_iou / self.mean
        }
    }

    /// The first update seeds the mean; later ones blend with `momentum`.
    pub fn update(&mut self, l_iou: f64, momentum: f64) {
        self.mean = if self.count == 0 {
            l_iou
        } else {
            (1.0 - momentum) * self.mean + momentum * l_iou
        };
        self.count += 1;
    }

    /// Count-weighted combination of two states.
    pub fn merge(&self, other: &WiouState) -> WiouState {
        let count = self.count + other.count;
        if count == 0 {
            return WiouState::default();
        }
        WiouState {
            mean: (self.mean * self.count as f64 + other.mean * other.count as f64) / count as f64,
            count,
        }
    }
}

/// Gradient gain `r = beta / (delta * alpha^(beta - delta))`.
pub(crate) fn gain(beta: f64, p: &LossParams) -> f64 {
    beta / (p.delta * p.alpha.powf(beta - p.delta))
}

/// `exp(((x - x_gt)^2 + (y - y_gt)^2) / (w_gt^2 + h_gt^2)) * (1 - IoU)`.
/// The denominator depends only on the target, so it is constant in the
/// anchor gradient.
pub(crate) fn v1_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let (ax, ay) = a.center();
    let (gx, gy) = gt.center();
    let (dx, dy) = (ax - gx, ay - gy);
    let s = gt.width() * gt.width() + gt.height() * gt.height();
    let e = ((dx * dx + dy * dy) / s).exp();
    let focus = Vg {
        v: e,
        g: [e * dx / s, e * dy / s, e * dx / s, e * dy / s],
    };
    let l_iou = iou_vg(a, gt).scale(-1.0).add(Vg::constant(1.0));
    focus.mul(l_iou)
}

/// WIoU loss. For v3 the gain uses the state's current mean and the state
/// is then updated with this pair's `1 - IoU`.
pub fn wiou_loss(
    a: &Bbox,
    gt: &Bbox,
    version: WiouVersion,
    p: &LossParams,
    state: &mut WiouState,
) -> Result<f64> {
    p.validate()?;
    gt.require_positive("target")?;
    a.require_positive("anchor")?;
    let v1 = v1_vg(a, gt).v;
    match version {
        WiouVersion::V1 => Ok(v1),
        WiouVersion::V3 => {
            let l_iou = 1.0 - iou(a, gt);
            let r = gain(state.beta(l_iou), p);
            state.update(l_iou, p.wiou_momentum);
            Ok(r * v1)
        }
    }
}

/// WIoU v3 with an explicit outlier degree.
pub fn wiou_v3_with_beta(a: &Bbox, gt: &Bbox, p: &LossParams, beta: f64) -> Result<f64> {
    gt.require_positive("target")?;
    a.require_positive("anchor")?;
    Ok(gain(beta, p) * v1_vg(a, gt).v)
}
