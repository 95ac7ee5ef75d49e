//! Dense NCHW tensors in `f64` and the forward primitives the blocks need.
//!
//! Tensors are immutable values: every operation returns a new tensor and
//! shape problems come back as [`TensorError`] rather than panics.

use std::fmt;

use thiserror::Error;

/// Extents of a rank-4 tensor in batch/channel/height/width order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn from_dims(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }

    fn strides(&self) -> [usize; 4] {
        [self.c * self.h * self.w, self.h * self.w, self.w, 1]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Axis names used in error messages.
pub const AXIS_NAMES: [&str; 4] = ["batch", "channels", "height", "width"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: {axis} mismatch (expected {expected}, got {actual})")]
    DimMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: buffer of length {len} does not fill shape {shape}")]
    BufferLength {
        op: &'static str,
        shape: Shape,
        len: usize,
    },
    #[error("{op}: invalid axis {axis}")]
    InvalidAxis { op: &'static str, axis: usize },
    #[error("{op}: {what}")]
    InvalidArgument { op: &'static str, what: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn dim_mismatch(op: &'static str, axis: usize, expected: usize, actual: usize) -> TensorError {
    TensorError::DimMismatch {
        op,
        axis: AXIS_NAMES[axis],
        expected,
        actual,
    }
}

fn invalid(op: &'static str, what: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        what: what.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(TensorError::BufferLength {
                op: "from_vec",
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        let s = self.shape.strides();
        self.data[idx[0] * s[0] + idx[1] * s[1] + idx[2] * s[2] + idx[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.data.len() {
            return Err(TensorError::BufferLength {
                op: "reshape",
                shape,
                len: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_same(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        check_same_shape(op, self.shape, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Elementwise product with `other` broadcast along every axis where
    /// `other` has extent 1.
    pub fn mul_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        let s = self.shape.dims();
        let o = other.shape.dims();
        for axis in 0..4 {
            if o[axis] != 1 && o[axis] != s[axis] {
                return Err(dim_mismatch("mul_broadcast", axis, s[axis], o[axis]));
            }
        }
        let os = other.shape.strides();
        let eff: Vec<usize> = (0..4).map(|a| if o[a] == 1 { 0 } else { os[a] }).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut i = 0;
        for n in 0..s[0] {
            for c in 0..s[1] {
                for h in 0..s[2] {
                    let base = n * eff[0] + c * eff[1] + h * eff[2];
                    for w in 0..s[3] {
                        data.push(self.data[i] * other.data[base + w * eff[3]]);
                        i += 1;
                    }
                }
            }
        }
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }
}

fn check_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    let (ad, bd) = (a.dims(), b.dims());
    for axis in 0..4 {
        if ad[axis] != bd[axis] {
            return Err(dim_mismatch(op, axis, ad[axis], bd[axis]));
        }
    }
    Ok(())
}

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D cross-correlation with zero padding.
///
/// `weight` is laid out as `(C_out, C_in / groups, kH, kW)`. Each group is
/// lowered to a column matrix and multiplied with a GEMM.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let xs = x.shape;
    let ws = weight.shape;
    if stride == 0 {
        return Err(invalid(OP, "stride must be at least 1"));
    }
    if groups == 0 || !xs.c.is_multiple_of(groups) {
        return Err(invalid(
            OP,
            format!("input channels {} not divisible by groups {}", xs.c, groups),
        ));
    }
    if !ws.n.is_multiple_of(groups) {
        return Err(invalid(
            OP,
            format!(
                "output channels {} not divisible by groups {}",
                ws.n, groups
            ),
        ));
    }
    let cin_g = xs.c / groups;
    if ws.c != cin_g {
        return Err(dim_mismatch(OP, 1, cin_g, ws.c));
    }
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(dim_mismatch(OP, 0, ws.n, b.len()));
        }
    }
    let (kh, kw) = (ws.h, ws.w);
    let oh = conv_out_size(xs.h, kh, stride, padding)
        .ok_or_else(|| invalid(OP, format!("kernel height {kh} exceeds padded input")))?;
    let ow = conv_out_size(xs.w, kw, stride, padding)
        .ok_or_else(|| invalid(OP, format!("kernel width {kw} exceeds padded input")))?;

    let cout = ws.n;
    let cout_g = cout / groups;
    let out_shape = Shape::new(xs.n, cout, oh, ow);
    let mut out = vec![0.0; out_shape.numel()];
    let k = cin_g * kh * kw;
    let p = oh * ow;
    let mut cols = vec![0.0; k * p];
    let plane = xs.h * xs.w;

    for n in 0..xs.n {
        for g in 0..groups {
            im2col(
                &x.data[(n * xs.c + g * cin_g) * plane..],
                cin_g,
                (xs.h, xs.w),
                (kh, kw),
                stride,
                padding,
                (oh, ow),
                &mut cols,
            );
            let w_off = g * cout_g * k;
            let o_off = (n * cout + g * cout_g) * p;
            // out[cout_g x p] = weight[cout_g x k] * cols[k x p]
            unsafe {
                matrixmultiply::dgemm(
                    cout_g,
                    k,
                    p,
                    1.0,
                    weight.data[w_off..].as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    out[o_off..].as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
        }
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                let off = (n * cout + co) * p;
                out[off..off + p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(Tensor {
        shape: out_shape,
        data: out,
    })
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f64],
    channels: usize,
    (h, w): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    (oh, ow): (usize, usize),
    cols: &mut [f64],
) {
    let p = oh * ow;
    let mut row = 0;
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    /// Sliding-window max with `-inf` padding of `kernel / 2`.
    Max2d,
    GlobalAvg2d,
    /// Average over the width axis: `N x C x H x 1`.
    AvgAlongW,
    /// Average over the height axis: `N x C x 1 x W`.
    AvgAlongH,
}

pub fn pool(x: &Tensor, kind: PoolKind, kernel: usize, stride: usize) -> Result<Tensor> {
    let s = x.shape;
    match kind {
        PoolKind::Max2d => max_pool2d(x, kernel, stride, kernel / 2),
        PoolKind::GlobalAvg2d => {
            let plane = s.h * s.w;
            let data = x
                .data
                .chunks(plane.max(1))
                .take(s.n * s.c)
                .map(|ch| ch.iter().sum::<f64>() / plane as f64)
                .collect();
            Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
        }
        PoolKind::AvgAlongW => {
            let data = x
                .data
                .chunks(s.w.max(1))
                .take(s.n * s.c * s.h)
                .map(|row| row.iter().sum::<f64>() / s.w as f64)
                .collect();
            Tensor::from_vec(Shape::new(s.n, s.c, s.h, 1), data)
        }
        PoolKind::AvgAlongH => {
            let mut data = vec![0.0; s.n * s.c * s.w];
            for (nc, plane) in x.data.chunks(s.h * s.w).enumerate().take(s.n * s.c) {
                let dst = &mut data[nc * s.w..(nc + 1) * s.w];
                for row in plane.chunks(s.w) {
                    dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                dst.iter_mut().for_each(|d| *d /= s.h as f64);
            }
            Tensor::from_vec(Shape::new(s.n, s.c, 1, s.w), data)
        }
    }
}

fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    const OP: &str = "max2d";
    let s = x.shape;
    let oh = conv_out_size(s.h, kernel, stride, padding)
        .ok_or_else(|| invalid(OP, format!("kernel {kernel} exceeds padded input")))?;
    let ow = conv_out_size(s.w, kernel, stride, padding)
        .ok_or_else(|| invalid(OP, format!("kernel {kernel} exceeds padded input")))?;
    let mut data = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in x.data.chunks(s.h * s.w).take(s.n * s.c) {
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - padding as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - padding as isize;
                let mut m = f64::NEG_INFINITY;
                for iy in y0.max(0)..(y0 + kernel as isize).min(s.h as isize) {
                    let row = &plane[iy as usize * s.w..];
                    for ix in x0.max(0)..(x0 + kernel as isize).min(s.w as isize) {
                        m = m.max(row[ix as usize]);
                    }
                }
                data.push(m);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Silu,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Silu => x.map(|t| t * sigmoid(t)),
    }
}

/// Numerically stable softmax along `axis` (0..=3).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis > 3 {
        return Err(TensorError::InvalidAxis {
            op: "softmax",
            axis,
        });
    }
    let dims = x.shape.dims();
    let stride = x.shape.strides()[axis];
    let len = dims[axis];
    let outer: usize = dims[..axis].iter().product();
    let mut data = x.data.clone();
    for o in 0..outer {
        for inner in 0..stride {
            let base = o * len * stride + inner;
            let idx = |i: usize| base + i * stride;
            let m = (0..len)
                .map(|i| x.data[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..len {
                let e = (x.data[idx(i)] - m).exp();
                data[idx(i)] = e;
                sum += e;
            }
            for i in 0..len {
                data[idx(i)] /= sum;
            }
        }
    }
    Ok(Tensor {
        shape: x.shape,
        data,
    })
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    const OP: &str = "concat";
    if axis > 3 {
        return Err(TensorError::InvalidAxis { op: OP, axis });
    }
    let first = parts
        .first()
        .ok_or_else(|| invalid(OP, "no inputs"))?
        .shape
        .dims();
    let mut out_dims = first;
    out_dims[axis] = 0;
    for p in parts {
        let d = p.shape.dims();
        for a in (0..4).filter(|&a| a != axis) {
            if d[a] != first[a] {
                return Err(dim_mismatch(OP, a, first[a], d[a]));
            }
        }
        out_dims[axis] += d[axis];
    }
    let outer: usize = first[..axis].iter().product();
    let mut data = Vec::with_capacity(Shape::from_dims(out_dims).numel());
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape.dims()[axis..].iter().product::<usize>();
            data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::from_vec(Shape::from_dims(out_dims), data)
}

/// Splits `x` along `axis` into pieces of the given sizes.
pub fn split_sizes(x: &Tensor, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
    const OP: &str = "split";
    if axis > 3 {
        return Err(TensorError::InvalidAxis { op: OP, axis });
    }
    let dims = x.shape.dims();
    let total: usize = sizes.iter().sum();
    if total != dims[axis] {
        return Err(dim_mismatch(OP, axis, dims[axis], total));
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &sz in sizes {
        let mut d = dims;
        d[axis] = sz;
        let mut data = Vec::with_capacity(outer * sz * inner);
        for o in 0..outer {
            let start = (o * dims[axis] + offset) * inner;
            data.extend_from_slice(&x.data[start..start + sz * inner]);
        }
        out.push(Tensor::from_vec(Shape::from_dims(d), data)?);
        offset += sz;
    }
    Ok(out)
}

/// Splits `x` along `axis` into `parts` equal pieces.
pub fn split(x: &Tensor, axis: usize, parts: usize) -> Result<Vec<Tensor>> {
    if axis > 3 {
        return Err(TensorError::InvalidAxis { op: "split", axis });
    }
    let len = x.shape.dims()[axis];
    if parts == 0 || !len.is_multiple_of(parts) {
        return Err(invalid(
            "split",
            format!(
                "{} of extent {len} is not divisible into {parts} parts",
                AXIS_NAMES[axis]
            ),
        ));
    }
    split_sizes(x, axis, &vec![len / parts; parts])
}

pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(invalid("upsample_nearest", "factor must be at least 1"));
    }
    let s = x.shape;
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut data = Vec::with_capacity(s.n * s.c * oh * ow);
    for plane in x.data.chunks(s.h * s.w).take(s.n * s.c) {
        for y in 0..oh {
            let row = &plane[(y / factor) * s.w..(y / factor + 1) * s.w];
            for xx in 0..ow {
                data.push(row[xx / factor]);
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), data)
}

/// Swaps the height and width axes of every `(n, c)` plane.
pub fn transpose(x: &Tensor) -> Tensor {
    let s = x.shape;
    let mut data = Vec::with_capacity(x.data.len());
    for plane in x.data.chunks(s.h * s.w).take(s.n * s.c) {
        for j in 0..s.w {
            for i in 0..s.h {
                data.push(plane[i * s.w + j]);
            }
        }
    }
    Tensor {
        shape: Shape::new(s.n, s.c, s.w, s.h),
        data,
    }
}

/// Batched matrix product over the trailing `(h, w)` axes:
/// `(n, c, m, k) x (n, c, k, p) -> (n, c, m, p)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "matmul";
    let (sa, sb) = (a.shape, b.shape);
    if sa.n != sb.n {
        return Err(dim_mismatch(OP, 0, sa.n, sb.n));
    }
    if sa.c != sb.c {
        return Err(dim_mismatch(OP, 1, sa.c, sb.c));
    }
    if sa.w != sb.h {
        return Err(TensorError::DimMismatch {
            op: OP,
            axis: "inner (width of lhs vs height of rhs)",
            expected: sa.w,
            actual: sb.h,
        });
    }
    let (m, k, p) = (sa.h, sa.w, sb.w);
    let mut data = vec![0.0; sa.n * sa.c * m * p];
    for bi in 0..sa.n * sa.c {
        let lhs = &a.data[bi * m * k..(bi + 1) * m * k];
        let rhs = &b.data[bi * k * p..(bi + 1) * k * p];
        let dst = &mut data[bi * m * p..(bi + 1) * m * p];
        for i in 0..m {
            let out_row = &mut dst[i * p..(i + 1) * p];
            for kk in 0..k {
                let av = lhs[i * k + kk];
                let rhs_row = &rhs[kk * p..(kk + 1) * p];
                out_row
                    .iter_mut()
                    .zip(rhs_row)
                    .for_each(|(o, &r)| *o += av * r);
            }
        }
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c, m, p), data)
}

/// Per-channel inference-mode batch normalization.
pub fn batch_norm_inference(
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<Tensor> {
    const OP: &str = "batch_norm_inference";
    let c = x.shape.c;
    for v in [mean, var, gamma, beta] {
        if v.len() != c {
            return Err(dim_mismatch(OP, 1, c, v.len()));
        }
    }
    if eps <= 0.0 {
        return Err(invalid(OP, "eps must be positive"));
    }
    if var.iter().any(|&v| v < 0.0) {
        return Err(invalid(OP, "variance must be non-negative"));
    }
    let plane = x.shape.h * x.shape.w;
    let mut data = x.data.clone();
    for (i, chunk) in data
        .chunks_mut(plane.max(1))
        .enumerate()
        .take(x.shape.n * c)
    {
        let ch = i % c;
        let scale = gamma[ch] / (var[ch] + eps).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(Tensor {
        shape: x.shape,
        data,
    })
}
