use crate::{Scalar, Shape};

/// Per-output-index interpolation taps along one axis: `(lo, hi, frac)`
/// so that `out = (1 - frac) * src[lo] + frac * src[hi]`.
///
/// Output index `j` samples source coordinate `(j + 0.5) / 2 - 0.5`,
/// clamped to `[0, len - 1]`.
pub fn axis_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|j| {
            let src = ((j as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample2x_shape(input: Shape) -> Shape {
    Shape::new(input.n, input.c, input.h * 2, input.w * 2)
}

pub fn bilinear_upsample2x_forward<T: Scalar>(input: Shape, x: &[T]) -> Vec<T> {
    let out = upsample2x_shape(input);
    let ty = axis_taps(input.h);
    let tx: Vec<(usize, usize, T)> = axis_taps(input.w)
        .into_iter()
        .map(|(a, b, f)| (a, b, T::from_f64_lossy(f)))
        .collect();
    let mut y = vec![T::zero(); out.numel()];
    for plane in 0..input.n * input.c {
        let src = &x[plane * input.plane()..(plane + 1) * input.plane()];
        let dst = &mut y[plane * out.plane()..(plane + 1) * out.plane()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            let r0 = &src[y0 * input.w..(y0 + 1) * input.w];
            let r1 = &src[y1 * input.w..(y1 + 1) * input.w];
            let row = &mut dst[oy * out.w..(oy + 1) * out.w];
            for (o, &(x0, x1, fx)) in row.iter_mut().zip(&tx) {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                *o = top + (bot - top) * fy;
            }
        }
    }
    y
}

/// Transpose of [`bilinear_upsample2x_forward`].
pub fn bilinear_upsample2x_backward<T: Scalar>(input: Shape, dy: &[T]) -> Vec<T> {
    let out = upsample2x_shape(input);
    let ty = axis_taps(input.h);
    let tx: Vec<(usize, usize, T)> = axis_taps(input.w)
        .into_iter()
        .map(|(a, b, f)| (a, b, T::from_f64_lossy(f)))
        .collect();
    let one = T::one();
    let mut dx = vec![T::zero(); input.numel()];
    for plane in 0..input.n * input.c {
        let g = &dy[plane * out.plane()..(plane + 1) * out.plane()];
        let d = &mut dx[plane * input.plane()..(plane + 1) * input.plane()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * out.w + ox];
                let top = v * (one - fy);
                let bot = v * fy;
                d[y0 * input.w + x0] = d[y0 * input.w + x0] + top * (one - fx);
                d[y0 * input.w + x1] = d[y0 * input.w + x1] + top * fx;
                d[y1 * input.w + x0] = d[y1 * input.w + x0] + bot * (one - fx);
                d[y1 * input.w + x1] = d[y1 * input.w + x1] + bot * fx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_axis_interpolates_at_quarter_points() {
        let y = bilinear_upsample2x_forward(Shape::new(1, 1, 1, 2), &[0.0f64, 1.0]);
        assert_eq!(&y[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&y[4..], &y[..4]);
    }

    #[test]
    fn square_input_first_row() {
        let y = bilinear_upsample2x_forward(Shape::new(1, 1, 2, 2), &[0.0f64, 1.0, 2.0, 3.0]);
        assert_eq!(&y[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&y[12..], &[2.0, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn single_pixel_replicates() {
        let y = bilinear_upsample2x_forward(Shape::new(1, 1, 1, 1), &[7.0f32]);
        assert_eq!(y, vec![7.0; 4]);
    }

    #[test]
    fn backward_is_adjoint() {
        let s = Shape::new(2, 3, 3, 5);
        let x: Vec<f64> = (0..s.numel()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = bilinear_upsample2x_forward(s, &x);
        let dy: Vec<f64> = (0..y.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let dx = bilinear_upsample2x_backward(s, &dy);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
