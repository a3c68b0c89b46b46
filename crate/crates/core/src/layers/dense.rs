use crate::error::{shape_err, Result};
use crate::tensor::{matmul, Mat, Scalar, Tensor};

/// Gradients of a fully-connected layer.
#[derive(Clone, Debug)]
pub struct DenseGrads<S> {
    pub input: Tensor<S>,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

fn dims<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>, bias: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let n = input.shape()[0];
    let d = if n == 0 { 0 } else { input.len() / n };
    let [_, _, wd, u] = weights.shape();
    if weights.shape()[0] * weights.shape()[1] != 1 {
        return Err(shape_err!("dense weights must be [1, 1, d, u], got {:?}", weights.shape()));
    }
    if d != wd {
        return Err(shape_err!("input has {d} features, weights expect {wd}"));
    }
    if bias.len() != u {
        return Err(shape_err!("bias has {} entries, layer has {u} units", bias.len()));
    }
    Ok((n, d, u))
}

/// `out = flatten(input) · W + b`, output shaped `(n, u, 1, 1)`.
pub fn dense_forward<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, d, u) = dims(input, weights, bias)?;
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    matmul(Mat::new(input.data(), n, d), Mat::new(weights.data(), d, u), &mut out, true);
    Tensor::from_vec([n, u, 1, 1], out)
}

pub fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<DenseGrads<S>> {
    let (n, d, u) = dims(input, weights, bias)?;
    if grad_out.len() != n * u {
        return Err(shape_err!("gradient {:?} does not match [{n}, {u}]", grad_out.shape()));
    }
    let g = Mat::new(grad_out.data(), n, u);
    let mut grad_in = Tensor::zeros(input.shape());
    matmul(g, Mat::new(weights.data(), d, u).t(), grad_in.data_mut(), false);
    let mut grad_w = Tensor::zeros(weights.shape());
    matmul(Mat::new(input.data(), n, d).t(), g, grad_w.data_mut(), false);
    let mut grad_b = Tensor::zeros(bias.shape());
    for row in grad_out.data().chunks_exact(u) {
        for (b, &v) in grad_b.data_mut().iter_mut().zip(row) {
            *b = *b + v;
        }
    }
    Ok(DenseGrads { input: grad_in, weights: grad_w, bias: grad_b })
}
