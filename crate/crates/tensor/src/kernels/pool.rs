use crate::error::{shape_err, Result};
use crate::{Scalar, Shape};

pub fn maxpool2x_shape(input: Shape) -> Result<Shape> {
    if input.h % 2 != 0 || input.w % 2 != 0 {
        return Err(shape_err(
            "maxpool2x",
            format!("spatial dims of {input} must be even"),
        ));
    }
    Ok(Shape::new(input.n, input.c, input.h / 2, input.w / 2))
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, for every
/// output, the flat input index it was taken from (first maximum in scan
/// order on ties).
pub fn maxpool2x_forward<T: Scalar>(input: Shape, x: &[T]) -> Result<(Vec<T>, Vec<usize>)> {
    let out = maxpool2x_shape(input)?;
    let mut vals = Vec::with_capacity(out.numel());
    let mut arg = Vec::with_capacity(out.numel());
    let w = input.w;
    for plane in 0..input.n * input.c {
        let base = plane * input.plane();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    // strict comparison keeps the first maximum
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                vals.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((vals, arg))
}

pub fn maxpool2x_backward<T: Scalar>(input: Shape, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input.numel()];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i] = dx[i] + g;
    }
    dx
}
