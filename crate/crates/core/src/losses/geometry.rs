use std::fmt;

use serde::Serialize;

use super::LossError;

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bbox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Bbox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_xywh(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self::new(left, top, left + width, top + height)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Swaps inverted corners so that `x1 <= x2` and `y1 <= y2`.
    pub fn ordered(&self) -> Self {
        Self::new(
            self.x1.min(self.x2),
            self.y1.min(self.y2),
            self.x1.max(self.x2),
            self.y1.max(self.y2),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Finite corners with `x2 >= x1` and `y2 >= y1`.
    pub fn is_valid(&self) -> bool {
        self.is_finite() && self.x2 >= self.x1 && self.y2 >= self.y1
    }

    pub(crate) fn require_positive(&self, role: &'static str) -> Result<(), LossError> {
        if !self.is_finite() || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(LossError::DegenerateBox { role, bbox: *self });
        }
        Ok(())
    }
}

impl fmt::Display for Bbox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Intersection over union; `0` for disjoint boxes and for a zero-area union.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Overlap and enclosing-box quantities shared by the loss family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub iou: f64,
    /// Center distance.
    pub d: f64,
    /// Diagonal of the smallest enclosing box.
    pub c: f64,
    pub w_c: f64,
    pub h_c: f64,
    /// Center deltas `x - x_gt` and `y - y_gt`.
    pub dx: f64,
    pub dy: f64,
}

impl PairGeometry {
    pub fn new(a: &Bbox, gt: &Bbox) -> Self {
        let (ax, ay) = a.center();
        let (gx, gy) = gt.center();
        let w_c = a.x2.max(gt.x2) - a.x1.min(gt.x1);
        let h_c = a.y2.max(gt.y2) - a.y1.min(gt.y1);
        let (dx, dy) = (ax - gx, ay - gy);
        Self {
            iou: iou(a, gt),
            d: (dx * dx + dy * dy).sqrt(),
            c: (w_c * w_c + h_c * h_c).sqrt(),
            w_c,
            h_c,
            dx,
            dy,
        }
    }
}

/// A scalar together with its gradient with respect to the anchor corners
/// `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Vg {
    pub v: f64,
    pub g: [f64; 4],
}

impl Vg {
    pub fn constant(v: f64) -> Self {
        Self { v, g: [0.0; 4] }
    }

    pub fn add(self, o: Vg) -> Vg {
        Vg {
            v: self.v + o.v,
            g: std::array::from_fn(|i| self.g[i] + o.g[i]),
        }
    }

    pub fn scale(self, k: f64) -> Vg {
        Vg {
            v: self.v * k,
            g: self.g.map(|x| x * k),
        }
    }

    pub fn mul(self, o: Vg) -> Vg {
        Vg {
            v: self.v * o.v,
            g: std::array::from_fn(|i| self.g[i] * o.v + self.v * o.g[i]),
        }
    }

    /// Applies a scalar function with known derivative.
    pub fn chain(self, f: f64, df: f64) -> Vg {
        Vg {
            v: f,
            g: self.g.map(|x| x * df),
        }
    }
}

/// `1` if `x > y`, `0` if `x < y`, and `1/2` on a tie: the midpoint of the
/// one-sided derivatives of `max(x, y)` with respect to `x`.
fn step_above(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x < y {
        0.0
    } else {
        0.5
    }
}

/// IoU with its anchor gradient. Where an anchor edge coincides with a
/// target edge the midpoint of the one-sided derivatives is used, which
/// makes a perfect fit a stationary point.
pub(crate) fn iou_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let iw_raw = a.x2.min(gt.x2) - a.x1.max(gt.x1);
    let ih_raw = a.y2.min(gt.y2) - a.y1.max(gt.y1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let (w, h) = (a.width(), a.height());
    let union = w * h + gt.area() - inter;
    if union <= 0.0 {
        return Vg::constant(0.0);
    }
    let overlap = if iw_raw > 0.0 && ih_raw > 0.0 {
        1.0
    } else {
        0.0
    };
    let d_iw = [
        -overlap * step_above(a.x1, gt.x1),
        0.0,
        overlap * step_above(gt.x2, a.x2),
        0.0,
    ];
    let d_ih = [
        0.0,
        -overlap * step_above(a.y1, gt.y1),
        0.0,
        overlap * step_above(gt.y2, a.y2),
    ];
    let d_area = [-h, -w, h, w];
    let g = std::array::from_fn(|i| {
        let d_inter = d_iw[i] * ih + d_ih[i] * iw;
        let d_union = d_area[i] - d_inter;
        (d_inter * union - inter * d_union) / (union * union)
    });
    Vg {
        v: inter / union,
        g,
    }
}

/// Squared center distance over squared enclosing diagonal, `d^2 / c^2`.
pub(crate) fn distance_term_vg(a: &Bbox, gt: &Bbox) -> Vg {
    let geo = PairGeometry::new(a, gt);
    let d2 = geo.dx * geo.dx + geo.dy * geo.dy;
    let c2 = geo.w_c * geo.w_c + geo.h_c * geo.h_c;
    if c2 <= 0.0 {
        return Vg::constant(0.0);
    }
    let d_d2 = [geo.dx, geo.dy, geo.dx, geo.dy];
    let d_wc = enclosing_x_grad(a, gt);
    let d_hc = enclosing_y_grad(a, gt);
    let r = d2 / c2;
    let g = std::array::from_fn(|i| {
        let d_c2 = 2.0 * geo.w_c * d_wc[i] + 2.0 * geo.h_c * d_hc[i];
        (d_d2[i] - r * d_c2) / c2
    });
    Vg { v: r, g }
}

pub(crate) fn enclosing_x_grad(a: &Bbox, gt: &Bbox) -> [f64; 4] {
    [-step_above(gt.x1, a.x1), 0.0, step_above(a.x2, gt.x2), 0.0]
}

pub(crate) fn enclosing_y_grad(a: &Bbox, gt: &Bbox) -> [f64; 4] {
    [0.0, -step_above(gt.y1, a.y1), 0.0, step_above(a.y2, gt.y2)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = Bbox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(
            iou(&Bbox::new(0., 0., 1., 1.), &Bbox::new(2., 2., 3., 3.)),
            0.0
        );
        let b = Bbox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
        let p = Bbox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn geometry_invariants() {
        let a = Bbox::new(0.0, 0.0, 2.0, 1.0);
        let gt = Bbox::new(3.0, -1.0, 4.0, 4.0);
        let g = PairGeometry::new(&a, &gt);
        assert!(g.c >= g.d && g.d >= 0.0);
        assert!(g.w_c >= a.width().max(gt.width()));
        assert_eq!(g.iou, 0.0);
    }

    #[test]
    fn ordered_swaps_inverted_corners() {
        let b = Bbox::new(3.0, 4.0, 1.0, 2.0).ordered();
        assert_eq!(b, Bbox::new(1.0, 2.0, 3.0, 4.0));
    }
}
