//! 2×2/2 max pooling with recorded switches, and quadrant (average) pooling.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Arg positions of a max-pool forward pass: for every output entry, the
/// linear index of the winning input entry.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolSwitches {
    pub input_shape: [usize; 4],
    pub argmax: Vec<usize>,
}

pub fn maxpool_output_hw(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 2 || w < 2 {
        return Err(shape_err!("max pooling needs at least 2x2, got {h}x{w}"));
    }
    Ok((h / 2, w / 2))
}

pub fn maxpool2_forward<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, PoolSwitches)> {
    let shape = input.shape();
    let [n, c, h, w] = shape;
    let (oh, ow) = maxpool_output_hw(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * w + 2 * xo;
                // Window visited in ascending linear index; strict > keeps the first max.
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, oh, ow], out)?, PoolSwitches { input_shape: shape, argmax }))
}

/// Routes each output gradient to its recorded arg position (max-unpooling).
pub fn maxpool2_backward<S: Scalar>(grad_out: &Tensor<S>, switches: &PoolSwitches) -> Result<Tensor<S>> {
    if grad_out.len() != switches.argmax.len() {
        return Err(shape_err!(
            "gradient has {} entries, switches {}",
            grad_out.len(),
            switches.argmax.len()
        ));
    }
    let mut grad_in = Tensor::zeros(switches.input_shape);
    let g = grad_in.data_mut();
    for (&src, &dst) in grad_out.data().iter().zip(&switches.argmax) {
        g[dst] = g[dst] + src;
    }
    Ok(grad_in)
}

/// Row and column split points: the top/left quadrants take `ceil(h/2)`.
fn quadrant_bounds(h: usize, w: usize) -> [(usize, usize, usize, usize); 4] {
    let (hy, hx) = (h.div_ceil(2), w.div_ceil(2));
    [(0, hy, 0, hx), (0, hy, hx, w), (hy, h, 0, hx), (hy, h, hx, w)]
}

/// Averages each of the four quadrants of every channel: `(n, c, 2, 2)` out.
pub fn quadrantpool_forward<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.shape();
    if h < 2 || w < 2 {
        return Err(shape_err!("quadrant pooling needs at least 2x2, got {h}x{w}"));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * 4);
    for plane in 0..n * c {
        let base = plane * h * w;
        for (y0, y1, x0, x1) in quadrant_bounds(h, w) {
            let mut acc = 0.0f64;
            for y in y0..y1 {
                for v in &x[base + y * w + x0..base + y * w + x1] {
                    acc += v.as_f64();
                }
            }
            out.push(S::from_f64(acc / ((y1 - y0) * (x1 - x0)) as f64));
        }
    }
    Tensor::from_vec([n, c, 2, 2], out)
}

pub fn quadrantpool_backward<S: Scalar>(grad_out: &Tensor<S>, input_shape: [usize; 4]) -> Result<Tensor<S>> {
    let [n, c, h, w] = input_shape;
    if grad_out.shape() != [n, c, 2, 2] {
        return Err(shape_err!("gradient {:?} does not match [{n}, {c}, 2, 2]", grad_out.shape()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_in.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for (q, (y0, y1, x0, x1)) in quadrant_bounds(h, w).into_iter().enumerate() {
            let share = grad_out.data()[plane * 4 + q] / S::from_f64(((y1 - y0) * (x1 - x0)) as f64);
            for y in y0..y1 {
                for v in &mut g[base + y * w + x0..base + y * w + x1] {
                    *v = share;
                }
            }
        }
    }
    Ok(grad_in)
}
