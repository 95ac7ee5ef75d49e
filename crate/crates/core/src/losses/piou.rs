use super::geometry::{iou_vg, Vg};
use super::{Bbox, LossParams, Result};

/// Intermediate values of the corner-edge penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiouTerms {
    pub dw1: f64,
    pub dw2: f64,
    pub dh1: f64,
    pub dh2: f64,
    /// Edge penalty, `>= 0`.
    pub p: f64,
    /// Anchor quality `exp(-P)` in `(0, 1]`.
    pub q: f64,
    /// Attention `u(lambda * q)` at the default `lambda`.
    pub u: f64,
}

/// Non-monotonic attention `u(x) = 3x * exp(-x^2)`.
pub fn piou_attention(x: f64) -> f64 {
    3.0 * x * (-x * x).exp()
}

fn attention_derivative(x: f64) -> f64 {
    3.0 * (-x * x).exp() * (1.0 - 2.0 * x * x)
}

/// Corner-edge penalty between corresponding edges of anchor and target,
/// normalized by the target size:
/// `P = ((|dx1| + |dx2|) / w_gt + (|dy1| + |dy2|) / h_gt) / 4`.
pub fn piou_penalty(a: &Bbox, gt: &Bbox) -> Result<PiouTerms> {
    gt.require_positive("target")?;
    let vg = penalty_vg(a, gt);
    let q = (-vg.v).exp();
    Ok(PiouTerms {
        dw1: (a.x1 - gt.x1).abs(),
        dw2: (a.x2 - gt.x2).abs(),
        dh1: (a.y1 - gt.y1).abs(),
        dh2: (a.y2 - gt.y2).abs(),
        p: vg.v,
        q,
        u: piou_attention(LossParams::default().lambda * q),
    })
}

/// PIoU loss with attention: `u(lambda * q) * L`.
pub fn piou_loss(a: &Bbox, gt: &Bbox, p: &LossParams) -> Result<f64> {
    p.validate()?;
    gt.require_positive("target")?;
    a.require_positive("anchor")?;
    Ok(full_vg(a, gt, p).v)
}

pub(crate) fn penalty_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let (wg, hg) = (gt.width(), gt.height());
    let e = [a.x1 - gt.x1, a.y1 - gt.y1, a.x2 - gt.x2, a.y2 - gt.y2];
    let norm = [wg, hg, wg, hg];
    let v = 0.25 * ((e[0].abs() + e[2].abs()) / wg + (e[1].abs() + e[3].abs()) / hg);
    Vg {
        v,
        g: std::array::from_fn(|i| 0.25 * sign(e[i]) / norm[i]),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn penalty_term_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let pen = penalty_vg(a, gt);
    let e = (-pen.v * pen.v).exp();
    pen.chain(1.0 - e, 2.0 * pen.v * e)
}

/// The penalty term on its own, `1 - exp(-P^2)`, with its anchor gradient.
/// It has no IoU component and no attention factor.
pub fn piou_penalty_term(a: &Bbox, gt: &Bbox) -> Result<(f64, [f64; 4])> {
    gt.require_positive("target")?;
    a.require_positive("anchor")?;
    let vg = penalty_term_vg(a, gt);
    Ok((vg.v, vg.g))
}

/// `1 - IoU - exp(-P^2)`, or `2 - IoU - exp(-P^2)` under the non-negative
/// variant.
pub(crate) fn base_vg(a: &Bbox, gt: &Bbox, p: &LossParams) -> Vg {
    let penalty_term = penalty_term_vg(a, gt);
    let offset = if p.piou_nonneg_variant { 1.0 } else { 0.0 };
    iou_vg(a, gt)
        .scale(-1.0)
        .add(Vg::constant(offset))
        .add(penalty_term)
}

pub(crate) fn full_vg(a: &Bbox, gt: &Bbox, p: &LossParams) -> Vg {
    let pen = penalty_vg(a, gt);
    let q = (-pen.v).exp();
    let x = p.lambda * q;
    // du/dP = u'(x) * dx/dP, dx/dP = -lambda * q
    let attention = pen.chain(piou_attention(x), attention_derivative(x) * -x);
    attention.mul(base_vg(a, gt, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::iou;

    #[test]
    fn penalty_hand_values() {
        let b = Bbox::new(0.0, 0.0, 2.0, 2.0);
        let t = piou_penalty(&b, &b).unwrap();
        assert_eq!((t.p, t.q), (0.0, 1.0));
        let t = piou_penalty(&b, &Bbox::new(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert_eq!([t.dw1, t.dw2, t.dh1, t.dh2], [1.0; 4]);
        assert!((t.p - 0.5).abs() < 1e-12);
        assert!((t.q - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_translation_invariant() {
        let a = Bbox::new(0.3, -1.0, 2.0, 4.0);
        let gt = Bbox::new(1.0, 0.5, 3.5, 2.0);
        let p0 = piou_penalty(&a, &gt).unwrap().p;
        let p1 = piou_penalty(&a.translate(7.25, -3.5), &gt.translate(7.25, -3.5))
            .unwrap()
            .p;
        assert!((p0 - p1).abs() < 1e-12);
    }

    #[test]
    fn zero_size_target_is_an_error() {
        let a = Bbox::new(0.0, 0.0, 1.0, 1.0);
        assert!(piou_penalty(&a, &Bbox::new(0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn loss_hand_values() {
        let p = LossParams::default();
        let b = Bbox::new(0.0, 0.0, 2.0, 2.0);
        // L = -1, u(1.2) = 3.6 exp(-1.44)
        let expected = -3.6 * (-1.44f64).exp();
        assert!((piou_loss(&b, &b, &p).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.852_939_931).abs() < 1e-9);

        let gt = Bbox::new(1.0, 1.0, 3.0, 3.0);
        let base = base_vg(&b, &gt, &p).v;
        assert!((base - (1.0 - iou(&b, &gt) - (-0.25f64).exp())).abs() < 1e-15);
        assert!((base - 0.078_342).abs() < 1e-6);
        assert!((piou_loss(&b, &gt, &p).unwrap() - 0.100_712_735).abs() < 1e-9);

        let nonneg = LossParams {
            piou_nonneg_variant: true,
            ..p
        };
        assert_eq!(piou_loss(&b, &b, &nonneg).unwrap(), 0.0);
    }

    #[test]
    fn penalty_term_matches_finite_differences() {
        let gt = Bbox::new(1.0, 1.0, 3.0, 4.0);
        let a = Bbox::new(-0.3, 2.2, 1.4, 5.1);
        let (v, g) = piou_penalty_term(&a, &gt).unwrap();
        let pen = piou_penalty(&a, &gt).unwrap().p;
        assert!((v - (1.0 - (-pen * pen).exp())).abs() < 1e-15);
        let h = 1e-6;
        for i in 0..4 {
            let shift = |d: f64| {
                let mut c = a.to_array();
                c[i] += d;
                piou_penalty_term(&Bbox::from_array(c), &gt).unwrap().0
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "corner {i}: {fd} vs {}", g[i]);
        }
        assert_eq!(piou_penalty_term(&gt, &gt).unwrap(), (0.0, [0.0; 4]));
    }

    #[test]
    fn attention_peaks_at_inverse_sqrt_two() {
        let x0 = std::f64::consts::FRAC_1_SQRT_2;
        assert!(attention_derivative(x0).abs() < 1e-15);
        let h = 1e-6;
        let numeric = (piou_attention(x0 + h) - piou_attention(x0 - h)) / (2.0 * h);
        assert!(numeric.abs() < 1e-9);
        for x in [0.0, 0.3, 0.7, 1.0, 2.0, 5.0] {
            assert!(piou_attention(x) >= 0.0);
            assert!(piou_attention(x) <= piou_attention(x0) + 1e-15);
        }
    }
}
