use super::{GradBundle, Layer, LayerParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 3-D cross-correlation with zero padding. The kernel size is taken from
/// the weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3d {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Conv3d { stride, padding }
    }
}

/// `⌊(len + 2·pad − k)/stride⌋ + 1`, or `None` when that would be < 1.
pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output indices `o` in `[lo, hi)` for which `o·s + k − p` lands inside `[0, len)`.
fn valid_range(out_len: usize, in_len: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    if in_len + p <= k {
        return (0, 0);
    }
    let hi = ((in_len - 1 + p - k) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: [usize; 3], pad: [usize; 3]) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 || x[1] != w[1] {
            return Err(Error::shape(format!(
                "conv3d input {x:?} incompatible with weight {w:?}"
            )));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_output_len(x[2 + a], w[2 + a], stride[a], pad[a]).ok_or_else(|| {
                Error::shape(format!(
                    "conv3d output collapses on axis {a}: input {x:?}, kernel {:?}, stride {stride:?}, padding {pad:?}",
                    &w[2..]
                ))
            })?;
        }
        Ok(Geometry {
            n: x[0],
            c_in: x[1],
            c_out: w[0],
            input: [x[2], x[3], x[4]],
            kernel: [w[2], w[3], w[4]],
            output,
            stride,
            pad,
        })
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn k_vol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Calls `f(out_row_offset, in_row_offset, ow_lo, ow_hi, iw_start)` for
    /// every (output row, input row) pair touched by kernel offset
    /// `(kd, kh, kw)`; `iw_start` is the input column of output column 0.
    #[inline]
    fn for_each_row(&self, kd: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize, isize)) {
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let [id_len, ih_len, iw_len] = self.input;
        let [od_len, oh_len, ow_len] = self.output;
        let (d_lo, d_hi) = valid_range(od_len, id_len, kd, sd, pd);
        let (h_lo, h_hi) = valid_range(oh_len, ih_len, kh, sh, ph);
        let (w_lo, w_hi) = valid_range(ow_len, iw_len, kw, sw, pw);
        if w_lo >= w_hi {
            return;
        }
        let iw_start = kw as isize - pw as isize;
        for od in d_lo..d_hi {
            let id = od * sd + kd - pd;
            for oh in h_lo..h_hi {
                let ih = oh * sh + kh - ph;
                f(
                    (od * oh_len + oh) * ow_len,
                    (id * ih_len + ih) * iw_len,
                    w_lo,
                    w_hi,
                    iw_start,
                );
            }
        }
    }
}

impl Geometry {
    /// Unfolds one sample into a `(c_in·k_vol) × out_vol` patch matrix.
    /// Padded positions are never written, so `col` must start zeroed; the
    /// written pattern is the same for every sample.
    fn im2col(&self, xs: &[f64], col: &mut [f64]) {
        let (in_vol, out_vol, k_vol) = (self.in_vol(), self.out_vol(), self.k_vol());
        let [_, kh_len, kw_len] = self.kernel;
        let sw = self.stride[2];
        for ci in 0..self.c_in {
            let xi = &xs[ci * in_vol..][..in_vol];
            for ki in 0..k_vol {
                let row = &mut col[(ci * k_vol + ki) * out_vol..][..out_vol];
                let (kd, kh, kw) = (ki / (kh_len * kw_len), (ki / kw_len) % kh_len, ki % kw_len);
                self.for_each_row(kd, kh, kw, |orow, irow, lo, hi, iw0| {
                    let dst = &mut row[orow + lo..orow + hi];
                    let base = irow as isize + iw0;
                    if sw == 1 {
                        let start = (base + lo as isize) as usize;
                        dst.copy_from_slice(&xi[start..start + (hi - lo)]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = xi[(base + ((lo + j) * sw) as isize) as usize];
                        }
                    }
                });
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulates patch gradients into
    /// the input gradient of one sample.
    fn col2im(&self, col: &[f64], gx: &mut [f64]) {
        let (in_vol, out_vol, k_vol) = (self.in_vol(), self.out_vol(), self.k_vol());
        let [_, kh_len, kw_len] = self.kernel;
        let sw = self.stride[2];
        for ci in 0..self.c_in {
            let gxi = &mut gx[ci * in_vol..][..in_vol];
            for ki in 0..k_vol {
                let row = &col[(ci * k_vol + ki) * out_vol..][..out_vol];
                let (kd, kh, kw) = (ki / (kh_len * kw_len), (ki / kw_len) % kh_len, ki % kw_len);
                self.for_each_row(kd, kh, kw, |orow, irow, lo, hi, iw0| {
                    let src = &row[orow + lo..orow + hi];
                    let base = irow as isize + iw0;
                    if sw == 1 {
                        let start = (base + lo as isize) as usize;
                        for (g, &v) in gxi[start..start + (hi - lo)].iter_mut().zip(src) {
                            *g += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            gxi[(base + ((lo + j) * sw) as isize) as usize] += v;
                        }
                    }
                });
            }
        }
    }
}

const BLOCK: usize = 256;

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorises
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub fn conv3d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor> {
    let g = Geometry::new(x.shape(), weight.shape(), stride, padding)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::shape(format!(
            "conv3d bias {:?} for {} output channels",
            bias.shape(),
            g.c_out
        )));
    }
    let (in_vol, out_vol) = (g.in_vol(), g.out_vol());
    let rows = g.c_in * g.k_vol();
    let wd = weight.data();
    let mut out = vec![0.0; g.n * g.c_out * out_vol];
    let mut col = vec![0.0; rows * out_vol];

    for n in 0..g.n {
        g.im2col(&x.data()[n * g.c_in * in_vol..][..g.c_in * in_vol], &mut col);
        for co in 0..g.c_out {
            let o = &mut out[(n * g.c_out + co) * out_vol..][..out_vol];
            o.fill(bias.data()[co]);
            for (r, &w) in wd[co * rows..][..rows].iter().enumerate() {
                if w != 0.0 {
                    axpy(w, &col[r * out_vol..][..out_vol], o);
                }
            }
        }
    }
    let mut shape = vec![g.n, g.c_out];
    shape.extend_from_slice(&g.output);
    Tensor::new(&shape, out)
}

/// Gradients w.r.t. `(input, weight, bias)`.
pub fn conv3d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<(Tensor, Tensor, Tensor)> {
    let (gx, gw, gb) = backward_impl(x, weight, grad_out, stride, padding, true)?;
    Ok((gx.expect("input gradient requested"), gw, gb))
}

/// Weight and bias gradients only, for layers whose input needs none.
pub fn conv3d_param_grads(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<(Tensor, Tensor)> {
    let (_, gw, gb) = backward_impl(x, weight, grad_out, stride, padding, false)?;
    Ok((gw, gb))
}

fn backward_impl(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: [usize; 3],
    padding: [usize; 3],
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let g = Geometry::new(x.shape(), weight.shape(), stride, padding)?;
    let mut expected = vec![g.n, g.c_out];
    expected.extend_from_slice(&g.output);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::shape(format!(
            "conv3d grad_out {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let (in_vol, out_vol) = (g.in_vol(), g.out_vol());
    let rows = g.c_in * g.k_vol();
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut gx = vec![0.0; if want_input { xd.len() } else { 0 }];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; g.c_out];
    let mut col = vec![0.0; rows * out_vol];
    let mut gcol = vec![0.0; if want_input { rows * out_vol } else { 0 }];

    for n in 0..g.n {
        g.im2col(&xd[n * g.c_in * in_vol..][..g.c_in * in_vol], &mut col);
        if want_input {
            gcol.fill(0.0);
        }
        let go_n = &gd[n * g.c_out * out_vol..][..g.c_out * out_vol];
        for co in 0..g.c_out {
            gb[co] += go_n[co * out_vol..][..out_vol].iter().sum::<f64>();
        }
        // blocked over output positions so the working set stays in cache
        for b0 in (0..out_vol).step_by(BLOCK) {
            let b1 = (b0 + BLOCK).min(out_vol);
            for r in 0..rows {
                let c = &col[r * out_vol + b0..r * out_vol + b1];
                for co in 0..g.c_out {
                    let go = &go_n[co * out_vol + b0..co * out_vol + b1];
                    gw[co * rows + r] += dot(go, c);
                }
                if want_input {
                    let gc = &mut gcol[r * out_vol + b0..r * out_vol + b1];
                    for co in 0..g.c_out {
                        axpy(wd[co * rows + r], &go_n[co * out_vol + b0..co * out_vol + b1], gc);
                    }
                }
            }
        }
        if want_input {
            g.col2im(&gcol, &mut gx[n * g.c_in * in_vol..][..g.c_in * in_vol]);
        }
    }
    Ok((
        if want_input {
            Some(Tensor::new(x.shape(), gx)?)
        } else {
            None
        },
        Tensor::new(weight.shape(), gw)?,
        Tensor::new(&[g.c_out], gb)?,
    ))
}

impl Layer for Conv3d {
    type Cache = Tensor;

    fn forward(&self, params: &LayerParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let y = conv3d_forward(x, params.get("weight")?, params.get("bias")?, self.stride, self.padding)?;
        Ok((y, x.clone()))
    }

    fn backward(&self, params: &LayerParams, x: &Tensor, grad_out: &Tensor) -> Result<GradBundle> {
        let (gx, gw, gb) = conv3d_backward(x, params.get("weight")?, grad_out, self.stride, self.padding)?;
        Ok(GradBundle {
            input: gx,
            params: LayerParams::new().with("weight", gw).with("bias", gb),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::test_util::{check_layer, random};

    /// Direct 7-loop cross-correlation with explicit bounds checks.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: [usize; 3], p: [usize; 3]) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        let od = (xs[2] + 2 * p[0] - ws[2]) / s[0] + 1;
        let oh = (xs[3] + 2 * p[1] - ws[3]) / s[1] + 1;
        let ow = (xs[4] + 2 * p[2] - ws[4]) / s[2] + 1;
        let mut out = Tensor::zeros(&[xs[0], ws[0], od, oh, ow]);
        let xv = |n, c, d: isize, h: isize, ww: isize| -> f64 {
            if d < 0 || h < 0 || ww < 0 || d >= xs[2] as isize || h >= xs[3] as isize || ww >= xs[4] as isize {
                return 0.0;
            }
            x.data()[(((n * xs[1] + c) * xs[2] + d as usize) * xs[3] + h as usize) * xs[4] + ww as usize]
        };
        for n in 0..xs[0] {
            for co in 0..ws[0] {
                for d in 0..od {
                    for h in 0..oh {
                        for ww in 0..ow {
                            let mut acc = b.data()[co];
                            for ci in 0..ws[1] {
                                for kd in 0..ws[2] {
                                    for kh in 0..ws[3] {
                                        for kw in 0..ws[4] {
                                            let wv =
                                                w.data()[(((co * ws[1] + ci) * ws[2] + kd) * ws[3] + kh) * ws[4] + kw];
                                            acc += wv
                                                * xv(
                                                    n,
                                                    ci,
                                                    (d * s[0] + kd) as isize - p[0] as isize,
                                                    (h * s[1] + kh) as isize - p[1] as isize,
                                                    (ww * s[2] + kw) as isize - p[2] as isize,
                                                );
                                        }
                                    }
                                }
                            }
                            let idx = (((n * ws[0] + co) * od + d) * oh + h) * ow + ww;
                            out.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = random(&[1, 1, 4, 5, 6], 1);
        let mut w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        w.data_mut()[13] = 1.0;
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[1]), [1; 3], [1; 3]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn strided_output_shape() {
        let x = random(&[1, 1, 8, 8, 8], 2);
        let w = random(&[5, 1, 3, 3, 3], 3);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(&[5]), [2; 3], [1; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 5, 4, 4, 4]);
    }

    #[test]
    fn collapsed_output_is_shape_error() {
        let x = random(&[1, 1, 1, 4, 4], 2);
        let w = random(&[1, 1, 3, 3, 3], 3);
        let err = conv3d_forward(&x, &w, &Tensor::zeros(&[1]), [1; 3], [0; 3]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn matches_naive_oracle() {
        let x = random(&[2, 3, 4, 6, 6], 4);
        let w = random(&[2, 3, 3, 3, 3], 5);
        let b = random(&[2], 6);
        for (s, p) in [
            ([1; 3], [1; 3]),
            ([2; 3], [1; 3]),
            ([1, 2, 3], [0, 1, 2]),
            ([2, 1, 1], [0; 3]),
        ] {
            let fast = conv3d_forward(&x, &w, &b, s, p).unwrap();
            let slow = naive_conv(&x, &w, &b, s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "stride {s:?} pad {p:?}");
            }
        }
    }

    #[test]
    fn stride_one_pad_one_preserves_shape() {
        for (i, dims) in [[3, 4, 5], [1, 1, 1], [2, 7, 3]].iter().enumerate() {
            let x = random(&[1, 2, dims[0], dims[1], dims[2]], i as u64);
            let w = random(&[3, 2, 3, 3, 3], 9);
            let y = conv3d_forward(&x, &w, &Tensor::zeros(&[3]), [1; 3], [1; 3]).unwrap();
            assert_eq!(&y.shape()[2..], dims);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cases = [
            ([1, 2, 3, 4, 4], 3, [1; 3], [1; 3], [3, 3, 3]),
            ([2, 1, 5, 4, 3], 2, [2; 3], [1; 3], [3, 3, 3]),
            ([1, 3, 4, 5, 6], 2, [1, 2, 2], [1, 0, 1], [3, 3, 3]),
            ([2, 3, 2, 3, 3], 1, [1; 3], [0; 3], [1, 1, 1]),
        ];
        for (i, (xs, cout, s, p, k)) in cases.into_iter().enumerate() {
            let x = random(&xs, 10 + i as u64);
            let params = LayerParams::new()
                .with("weight", random(&[cout, xs[1], k[0], k[1], k[2]], 20 + i as u64))
                .with("bias", random(&[cout], 30 + i as u64));
            let err = check_layer(&Conv3d::new(s, p), &params, &x, i as u64);
            assert!(err < 1e-4, "case {i}: {err}");
        }
    }
}
