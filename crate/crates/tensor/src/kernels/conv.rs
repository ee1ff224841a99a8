use rayon::prelude::*;

use crate::error::{shape_err, Result, TensorError};
use crate::{Scalar, Shape};

// Batch items are processed in fixed-size groups so that the reduction order
// of weight gradients does not depend on the thread count.
const GROUP: usize = 4;

/// Validated geometry of a square-kernel, zero-padded 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Self> {
        if weight.h != weight.w {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: format!("kernel must be square, got {}x{}", weight.h, weight.w),
            });
        }
        let k = weight.h;
        if k != 1 && k != 3 {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: format!("kernel size {k} not supported (1 or 3)"),
            });
        }
        if stride != 1 && stride != 2 {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: format!("stride {stride} not supported (1 or 2)"),
            });
        }
        if padding != k / 2 {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: format!("padding {padding} for kernel {k}; expected {}", k / 2),
            });
        }
        if weight.c != input.c {
            return Err(shape_err(
                "conv2d",
                format!("weight {} expects {} input channels, input is {}", weight, weight.c, input),
            ));
        }
        if input.h == 0 || input.w == 0 {
            return Err(shape_err("conv2d", format!("empty spatial extent {input}")));
        }
        Ok(ConvGeometry {
            input,
            out_channels: weight.n,
            kernel: k,
            stride,
            padding,
        })
    }

    pub fn out_h(&self) -> usize {
        (self.input.h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.input.w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.input.n, self.out_channels, self.out_h(), self.out_w())
    }

    /// Rows of the unfolded input matrix, `in_c * k * k`.
    pub fn patch_len(&self) -> usize {
        self.input.c * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    // A 1x1 stride-1 convolution is a plain matrix product on the input.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

/// Output columns `ox` whose input column `ox * s + kx - p` lies in `[0, w)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, s: usize, offset: isize) -> (usize, usize) {
    // need 0 <= ox*s + offset < in_len
    let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(s) };
    let hi_excl = if (in_len as isize) <= offset {
        0
    } else {
        ((in_len as isize - offset - 1) as usize) / s + 1
    };
    let hi_excl = hi_excl.min(out_len);
    (lo.min(hi_excl), hi_excl)
}

fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], cols: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let p_len = oh * ow;
    for c in 0..g.input.c {
        let plane = &x[c * g.input.plane()..(c + 1) * g.input.plane()];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, s, ky as isize - p);
            for kx in 0..k {
                let x_off = kx as isize - p;
                let (x_lo, x_hi) = valid_range(ow, w, s, x_off);
                let row = (c * k + ky) * k + kx;
                let out = &mut cols[row * p_len..(row + 1) * p_len];
                out[..y_lo * ow].iter_mut().for_each(|v| *v = T::zero());
                out[y_hi * ow..].iter_mut().for_each(|v| *v = T::zero());
                for oy in y_lo..y_hi {
                    let iy = (oy * s) as isize + ky as isize - p;
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut out[oy * ow..(oy + 1) * ow];
                    dst[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                    dst[x_hi..].iter_mut().for_each(|v| *v = T::zero());
                    if x_hi > x_lo {
                        let ix0 = (x_lo * s) as isize + x_off;
                        if s == 1 {
                            dst[x_lo..x_hi].copy_from_slice(&src[ix0 as usize..ix0 as usize + (x_hi - x_lo)]);
                        } else {
                            for (j, d) in dst[x_lo..x_hi].iter_mut().enumerate() {
                                *d = src[ix0 as usize + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let p_len = oh * ow;
    for c in 0..g.input.c {
        let plane = &mut dx[c * g.input.plane()..(c + 1) * g.input.plane()];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(oh, h, s, ky as isize - p);
            for kx in 0..k {
                let x_off = kx as isize - p;
                let (x_lo, x_hi) = valid_range(ow, w, s, x_off);
                if x_hi <= x_lo {
                    continue;
                }
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p_len..(row + 1) * p_len];
                for oy in y_lo..y_hi {
                    let iy = (oy * s) as isize + ky as isize - p;
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let from = &src[oy * ow + x_lo..oy * ow + x_hi];
                    let ix0 = ((x_lo * s) as isize + x_off) as usize;
                    if s == 1 {
                        for (d, &v) in dst[ix0..ix0 + from.len()].iter_mut().zip(from) {
                            *d = *d + v;
                        }
                    } else {
                        for (j, &v) in from.iter().enumerate() {
                            let d = &mut dst[ix0 + j * s];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; `weight` is `(out_c, in_c, k, k)`, `bias` is `out_c`.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeometry, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let out_shape = g.output();
    let (oc, kk, pl) = (g.out_channels, g.patch_len(), g.positions());
    let in_item = g.input.item();
    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_shape.item())
        .enumerate()
        .for_each_init(
            || if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * pl] },
            |cols, (n, y)| {
                let xi = &x[n * in_item..(n + 1) * in_item];
                let rhs: &[T] = if g.is_pointwise() {
                    xi
                } else {
                    im2col(g, xi, cols);
                    cols
                };
                T::gemm(false, false, oc, kk, pl, T::one(), weight, rhs, T::zero(), y);
                if let Some(b) = bias {
                    for (c, row) in y.chunks_mut(pl).enumerate() {
                        row.iter_mut().for_each(|v| *v = *v + b[c]);
                    }
                }
            },
        );
    out
}

/// Gradients of a convolution.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let (oc, kk, pl) = (g.out_channels, g.patch_len(), g.positions());
    let in_item = g.input.item();
    let out_item = oc * pl;
    let n = g.input.n;

    let mut dx = if need_input {
        Some(vec![T::zero(); g.input.numel()])
    } else {
        None
    };

    let groups: Vec<usize> = (0..n).step_by(GROUP).collect();
    let partials: Vec<(Vec<T>, Vec<T>)> = {
        // Split dx into per-group disjoint chunks so groups can run in parallel.
        let mut dx_chunks: Vec<Option<&mut [T]>> = match dx.as_mut() {
            Some(d) => d.chunks_mut(GROUP * in_item).map(Some).collect(),
            None => groups.iter().map(|_| None).collect(),
        };
        groups
            .par_iter()
            .zip(dx_chunks.par_iter_mut())
            .map(|(&start, dx_chunk)| {
                let mut dw = vec![T::zero(); oc * kk];
                let mut db = vec![T::zero(); oc];
                let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * pl] };
                let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * pl] };
                for i in start..(start + GROUP).min(n) {
                    let xi = &x[i * in_item..(i + 1) * in_item];
                    let dyi = &dy[i * out_item..(i + 1) * out_item];
                    let rhs: &[T] = if g.is_pointwise() {
                        xi
                    } else {
                        im2col(g, xi, &mut cols);
                        &cols
                    };
                    T::gemm(false, true, oc, pl, kk, T::one(), dyi, rhs, T::one(), &mut dw);
                    for (c, row) in dyi.chunks(pl).enumerate() {
                        db[c] = db[c] + row.iter().copied().sum::<T>();
                    }
                    if let Some(chunk) = dx_chunk.as_deref_mut() {
                        let local = i - start;
                        let dxi = &mut chunk[local * in_item..(local + 1) * in_item];
                        if g.is_pointwise() {
                            T::gemm(true, false, kk, oc, pl, T::one(), weight, dyi, T::zero(), dxi);
                        } else {
                            T::gemm(true, false, kk, oc, pl, T::one(), weight, dyi, T::zero(), &mut dcols);
                            col2im(g, &dcols, dxi);
                        }
                    }
                }
                (dw, db)
            })
            .collect()
    };

    let mut dw = vec![T::zero(); oc * kk];
    let mut db = vec![T::zero(); oc];
    for (pw, pb) in partials {
        dw.iter_mut().zip(&pw).for_each(|(a, &b)| *a = *a + b);
        db.iter_mut().zip(&pb).for_each(|(a, &b)| *a = *a + b);
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct summation over every output position and kernel tap.
    fn direct(g: &ConvGeometry, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
        let o = g.output();
        let s = g.input;
        let k = g.kernel;
        let mut out = vec![0.0; o.numel()];
        for n in 0..o.n {
            for oc in 0..o.c {
                for oy in 0..o.h {
                    for ox in 0..o.w {
                        let mut acc = b.map_or(0.0, |b| b[oc]);
                        for ic in 0..s.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                        continue;
                                    }
                                    acc += x[s.index(n, ic, iy as usize, ix as usize)]
                                        * w[((oc * s.c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[o.index(n, oc, oy, ox)] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + seed) * 12.9898).sin() * 2.0).collect()
    }

    #[test]
    fn all_ones_3x3_matches_direct_sum() {
        let g = ConvGeometry::new(Shape::new(1, 1, 3, 3), Shape::new(1, 1, 3, 3), 1, 1).unwrap();
        let out = conv2d_forward(&g, &[1.0f64; 9], &[1.0; 9], None);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(out, direct(&g, &[1.0; 9], &[1.0; 9], None));
    }

    #[test]
    fn forward_matches_direct_for_all_geometries() {
        for &(k, s) in &[(1, 1), (1, 2), (3, 1), (3, 2)] {
            for &(h, w) in &[(5, 7), (6, 6), (1, 3)] {
                let input = Shape::new(5, 3, h, w);
                let wshape = Shape::new(4, 3, k, k);
                let g = ConvGeometry::new(input, wshape, s, k / 2).unwrap();
                assert_eq!(g.out_h(), h.div_ceil(s));
                assert_eq!(g.out_w(), w.div_ceil(s));
                let x = pseudo(input.numel(), 1.0);
                let wt = pseudo(wshape.numel(), 2.0);
                let b = pseudo(4, 3.0);
                let got = conv2d_forward(&g, &x, &wt, Some(&b));
                let want = direct(&g, &x, &wt, Some(&b));
                for (a, e) in got.iter().zip(&want) {
                    assert!((a - e).abs() < 1e-12, "k={k} s={s} h={h} w={w}");
                }
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), dy> = <x, dx> + <w, dw> (bias-free, linear in each argument)
        for &(k, s) in &[(1, 1), (1, 2), (3, 1), (3, 2)] {
            let input = Shape::new(6, 2, 6, 5);
            let wshape = Shape::new(3, 2, k, k);
            let g = ConvGeometry::new(input, wshape, s, k / 2).unwrap();
            let x = pseudo(input.numel(), 4.0);
            let wt = pseudo(wshape.numel(), 5.0);
            let y = conv2d_forward(&g, &x, &wt, None);
            let dy = pseudo(y.len(), 6.0);
            let grads = conv2d_backward(&g, &x, &wt, &dy, true);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.iter().zip(grads.input.as_ref().unwrap()).map(|(a, b)| a * b).sum();
            let via_w: f64 = wt.iter().zip(&grads.weight).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
            let db_sum: f64 = dy.iter().sum();
            let got: f64 = grads.bias.iter().sum();
            assert!((db_sum - got).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_unsupported_configurations() {
        let x = Shape::new(1, 2, 4, 4);
        assert!(matches!(
            ConvGeometry::new(x, Shape::new(1, 2, 5, 5), 1, 2),
            Err(TensorError::Config { .. })
        ));
        assert!(matches!(
            ConvGeometry::new(x, Shape::new(1, 2, 3, 3), 3, 1),
            Err(TensorError::Config { .. })
        ));
        assert!(matches!(
            ConvGeometry::new(x, Shape::new(1, 3, 3, 3), 1, 1),
            Err(TensorError::Shape { .. })
        ));
    }
}
