//! Slice-level compute kernels behind the graph ops. Shapes are validated by
//! the callers in `graph`; kernels only assert internal consistency.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub(crate) fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Output positions `lo..hi` whose tap `k` lands inside `0..size`.
fn valid_span(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if size + pad > k { ((size + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one image `[C, H, W]` into `[C*kh*kw, out_h*out_w]`.
pub(crate) fn im2col<S: Scalar>(img: &[S], g: &ConvGeom, cols: &mut [S]) {
    let ncols = g.cols();
    debug_assert_eq!(cols.len(), g.rows() * ncols);
    let s = g.stride;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_span(g.out_h, g.height, ki, s, g.pad);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_span(g.out_w, g.width, kj, s, g.pad);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                dst[..ylo * g.out_w].fill(S::zero());
                dst[yhi * g.out_w..].fill(S::zero());
                for oy in ylo..yhi {
                    let iy = oy * s + ki - g.pad;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    line[..xlo].fill(S::zero());
                    line[xhi..].fill(S::zero());
                    if s == 1 {
                        let x0 = xlo + kj - g.pad;
                        line[xlo..xhi].copy_from_slice(&src[x0..x0 + xhi - xlo]);
                    } else {
                        for ox in xlo..xhi {
                            line[ox] = src[ox * s + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image `[C, H, W]`.
pub(crate) fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom, img: &mut [S]) {
    let ncols = g.cols();
    let s = g.stride;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            let (ylo, yhi) = valid_span(g.out_h, g.height, ki, s, g.pad);
            for kj in 0..g.kw {
                let (xlo, xhi) = valid_span(g.out_w, g.width, kj, s, g.pad);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = oy * s + ki - g.pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    if s == 1 {
                        let x0 = xlo + kj - g.pad;
                        for (d, &v) in dst[x0..x0 + xhi - xlo].iter_mut().zip(&line[xlo..xhi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            let ix = ox * s + kj - g.pad;
                            dst[ix] = dst[ix] + line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds one image `[C, H, W]` into one row of `C*kh*kw` taps per output
/// pixel, i.e. the transpose of [`im2col`].
pub(crate) fn im2row<S: Scalar>(img: &[S], g: &ConvGeom, patches: &mut [S]) {
    let rows = g.rows();
    debug_assert_eq!(patches.len(), rows * g.cols());
    let s = g.stride;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let dst = &mut patches[(oy * g.out_w + ox) * rows..(oy * g.out_w + ox + 1) * rows];
            let x0 = ox * s;
            let klo = g.pad.saturating_sub(x0).min(g.kw);
            let khi = (g.width + g.pad).saturating_sub(x0).min(g.kw).max(klo);
            for c in 0..g.channels {
                let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
                for ki in 0..g.kh {
                    let seg = &mut dst[(c * g.kh + ki) * g.kw..(c * g.kh + ki + 1) * g.kw];
                    let iy = (oy * s + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        seg.fill(S::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    seg[..klo].fill(S::zero());
                    seg[khi..].fill(S::zero());
                    let start = x0 + klo - g.pad;
                    seg[klo..khi].copy_from_slice(&line[start..start + khi - klo]);
                }
            }
        }
    }
}

/// `x: [N, Ci, H, W]`, `w: [Co, Ci, kh, kw]` -> `[N, Co, out_h, out_w]`.
pub(crate) fn conv2d<S: Scalar>(x: &[S], n: usize, g: &ConvGeom, w: &[S], co: usize) -> Vec<S> {
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![S::zero(); rows * ncols];
    let mut out = vec![S::zero(); n * co * ncols];
    let in_stride = g.channels * g.height * g.width;
    for b in 0..n {
        im2col(&x[b * in_stride..(b + 1) * in_stride], g, &mut cols);
        let dst = &mut out[b * co * ncols..(b + 1) * co * ncols];
        S::gemm(co, rows, ncols, w, (rows as isize, 1), &cols, (ncols as isize, 1), S::zero(), dst, (ncols as isize, 1));
    }
    out
}

/// Adjoint of [`conv2d`] in its input. `x: [N, Co, out_h, out_w]` (the
/// geometry's output grid), `w: [Co, Ci, kh, kw]` -> `[N, Ci, H, W]`.
pub(crate) fn conv2d_adjoint<S: Scalar>(x: &[S], n: usize, g: &ConvGeom, w: &[S], co: usize) -> Vec<S> {
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![S::zero(); rows * ncols];
    let img_len = g.channels * g.height * g.width;
    let mut out = vec![S::zero(); n * img_len];
    for b in 0..n {
        let src = &x[b * co * ncols..(b + 1) * co * ncols];
        // cols = w^T * x_b
        S::gemm(rows, co, ncols, w, (1, rows as isize), src, (ncols as isize, 1), S::zero(), &mut cols, (ncols as isize, 1));
        col2im(&cols, g, &mut out[b * img_len..(b + 1) * img_len]);
    }
    out
}

/// Kernel gradient of [`conv2d`]: `x: [N, Ci, H, W]`, `dy: [N, Co, out_h, out_w]`
/// -> `[Co, Ci, kh, kw]`.
pub(crate) fn conv2d_kernel_grad<S: Scalar>(x: &[S], n: usize, g: &ConvGeom, dy: &[S], co: usize) -> Vec<S> {
    let (rows, ncols) = (g.rows(), g.cols());
    let mut patches = vec![S::zero(); ncols * rows];
    let mut out = vec![S::zero(); co * rows];
    let in_stride = g.channels * g.height * g.width;
    for b in 0..n {
        im2row(&x[b * in_stride..(b + 1) * in_stride], g, &mut patches);
        let src = &dy[b * co * ncols..(b + 1) * co * ncols];
        S::gemm(co, ncols, rows, src, (ncols as isize, 1), &patches, (rows as isize, 1), S::one(), &mut out, (rows as isize, 1));
    }
    out
}

/// Window-mean pooling over `[N*C, H, W]` planes.
pub(crate) fn avg_pool<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize, k: usize, s: usize) -> Vec<S> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let inv = 1.0 / (k * k) as f64;
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for i in 0..k {
                    for j in 0..k {
                        acc += plane[(oy * s + i) * w + ox * s + j].f64();
                    }
                }
                out.push(S::of(acc * inv));
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool`]: spreads each pooled value over its window.
pub(crate) fn avg_pool_adjoint<S: Scalar>(g: &[S], planes: usize, h: usize, w: usize, k: usize, s: usize) -> Vec<S> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let inv = S::of(1.0 / (k * k) as f64);
    let mut out = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let plane = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[(p * oh + oy) * ow + ox] * inv;
                for i in 0..k {
                    for j in 0..k {
                        let idx = (oy * s + i) * w + ox * s + j;
                        plane[idx] = plane[idx] + v;
                    }
                }
            }
        }
    }
    out
}

/// Flat input index of each window maximum; ties resolve to the first index
/// in row-major window order.
pub(crate) fn max_pool_routes<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize, k: usize, s: usize) -> Vec<usize> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let mut routes = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * s * w + ox * s;
                for i in 0..k {
                    for j in 0..k {
                        let idx = base + (oy * s + i) * w + ox * s + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                routes.push(best);
            }
        }
    }
    routes
}

/// Right-aligned broadcast strides of `src` inside `dst` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let offset = dst.len() - src.len();
    let mut strides = vec![0; dst.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    strides
}

pub(crate) fn broadcast_compatible(src: &[usize], dst: &[usize]) -> bool {
    src.len() <= dst.len()
        && src.iter().rev().zip(dst.iter().rev()).all(|(&a, &b)| a == b || a == 1)
}

/// Visits every index of `dst_shape` with the matching broadcast source offset.
fn for_each_broadcast(src_shape: &[usize], dst_shape: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(src_shape, dst_shape);
    let nd = dst_shape.len();
    let total: usize = dst_shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for flat in 0..total {
        f(flat, src);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < dst_shape[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_to<S: Scalar>(x: &[S], src_shape: &[usize], dst_shape: &[usize]) -> Vec<S> {
    let mut out = vec![S::zero(); dst_shape.iter().product()];
    for_each_broadcast(src_shape, dst_shape, |d, s| out[d] = x[s]);
    out
}

/// Reduces `x` (shaped `src_shape`) onto the broadcastable `dst_shape`,
/// accumulating in 64-bit.
pub(crate) fn sum_to<S: Scalar>(x: &[S], src_shape: &[usize], dst_shape: &[usize]) -> Vec<S> {
    let mut acc = vec![0.0f64; dst_shape.iter().product()];
    for_each_broadcast(dst_shape, src_shape, |s, d| acc[d] += x[s].f64());
    acc.into_iter().map(S::of).collect()
}

/// `(outer, axis_len, inner)` decomposition around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn narrow<S: Scalar>(x: &[S], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<S> {
    let (outer, full, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

pub(crate) fn embed<S: Scalar>(x: &[S], shape: &[usize], axis: usize, start: usize, full: usize) -> Vec<S> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut out = vec![S::zero(); outer * full * inner];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

pub(crate) fn transpose2<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
