//! Bias-free 2-D convolution: cross-correlation, valid padding, stride 1.
//!
//! Each sample is lowered with im2col so the three products (output,
//! weight gradient, input gradient) are single matrix multiplies. The input
//! gradient is the full-padded correlation with the 180°-rotated kernels,
//! realised here as `Wᵀ · grad_out` followed by col2im.

use crate::error::{shape_err, Result};
use crate::tensor::{matmul, Mat, Scalar, Tensor};

fn check_kernel<S: Scalar>(weights: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let [f, c, kh, kw] = weights.shape();
    if kh != kw {
        return Err(shape_err!("kernel {kh}x{kw} is not square"));
    }
    if kh % 2 == 0 {
        return Err(shape_err!("kernel size {kh} is not odd"));
    }
    Ok((f, c, kh))
}

/// Output spatial size for a valid convolution, or a shape error.
pub fn conv_output_hw(h: usize, w: usize, k: usize) -> Result<(usize, usize)> {
    if h < k || w < k {
        return Err(shape_err!("input {h}x{w} is smaller than kernel {k}x{k}"));
    }
    Ok((h - k + 1, w - k + 1))
}

fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, col: &mut [S]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let dst = &mut col[row * p..(row + 1) * p];
                for y in 0..oh {
                    let src = &plane[(y + dy) * w + dx..(y + dy) * w + dx + ow];
                    dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add<S: Scalar>(col: &[S], c: usize, h: usize, w: usize, k: usize, x: &mut [S]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let p = oh * ow;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let src = &col[row * p..(row + 1) * p];
                for y in 0..oh {
                    let dst = &mut plane[(y + dy) * w + dx..(y + dy) * w + dx + ow];
                    for (d, &s) in dst.iter_mut().zip(&src[y * ow..(y + 1) * ow]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>) -> Result<Tensor<S>> {
    let (f, wc, k) = check_kernel(weights)?;
    let [n, c, h, w] = input.shape();
    if c != wc {
        return Err(shape_err!("input has {c} channels, kernels expect {wc}"));
    }
    let (oh, ow) = conv_output_hw(h, w, k)?;
    let (ckk, p) = (c * k * k, oh * ow);
    let mut out = Tensor::zeros([n, f, oh, ow]);
    let mut col = vec![S::zero(); ckk * p];
    for i in 0..n {
        im2col(input.sample(i), c, h, w, k, &mut col);
        matmul(
            Mat::new(weights.data(), f, ckk),
            Mat::new(&col, ckk, p),
            out.sample_mut(i),
            false,
        );
    }
    Ok(out)
}

/// Gradient with respect to the kernels, summed over the batch in sample order.
pub fn conv2d_backward_weights<S: Scalar>(
    input: &Tensor<S>,
    grad_out: &Tensor<S>,
    kernel: usize,
) -> Result<Tensor<S>> {
    let [n, c, h, w] = input.shape();
    let (oh, ow) = conv_output_hw(h, w, kernel)?;
    let [gn, f, gh, gw] = grad_out.shape();
    if gn != n || gh != oh || gw != ow {
        return Err(shape_err!(
            "output gradient {:?} does not match forward output [{n}, _, {oh}, {ow}]",
            grad_out.shape()
        ));
    }
    let (ckk, p) = (c * kernel * kernel, oh * ow);
    let mut grad_w = Tensor::zeros([f, c, kernel, kernel]);
    let mut col = vec![S::zero(); ckk * p];
    for i in 0..n {
        im2col(input.sample(i), c, h, w, kernel, &mut col);
        matmul(
            Mat::new(grad_out.sample(i), f, p),
            Mat::new(&col, ckk, p).t(),
            grad_w.data_mut(),
            true,
        );
    }
    Ok(grad_w)
}

/// Gradient with respect to the input (the transposed convolution of
/// `grad_out` with the same kernels) for an input of spatial size `h×w`.
pub fn conv2d_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    weights: &Tensor<S>,
    h: usize,
    w: usize,
) -> Result<Tensor<S>> {
    let (f, c, k) = check_kernel(weights)?;
    let (oh, ow) = conv_output_hw(h, w, k)?;
    let [n, gf, gh, gw] = grad_out.shape();
    if gf != f || gh != oh || gw != ow {
        return Err(shape_err!(
            "output gradient {:?} does not match [_, {f}, {oh}, {ow}]",
            grad_out.shape()
        ));
    }
    let (ckk, p) = (c * k * k, oh * ow);
    let mut grad_in = Tensor::zeros([n, c, h, w]);
    let mut col = vec![S::zero(); ckk * p];
    for i in 0..n {
        matmul(
            Mat::new(weights.data(), f, ckk).t(),
            Mat::new(grad_out.sample(i), f, p),
            &mut col,
            false,
        );
        col2im_add(&col, c, h, w, k, grad_in.sample_mut(i));
    }
    Ok(grad_in)
}
