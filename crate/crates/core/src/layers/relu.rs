use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// `max(x, 0)` and the mask of strictly positive inputs.
pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<bool>) {
    let mask: Vec<bool> = input.data().iter().map(|&v| v > S::zero()).collect();
    let out = input.map(|v| if v > S::zero() { v } else { S::zero() });
    (out, mask)
}

pub fn relu_backward<S: Scalar>(grad_out: &Tensor<S>, mask: &[bool]) -> Result<Tensor<S>> {
    if grad_out.len() != mask.len() {
        return Err(shape_err!("relu mask has {} entries, gradient {}", mask.len(), grad_out.len()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { g } else { S::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Fill;

    #[test]
    fn forward_and_mask() {
        let x = Tensor::<f64>::from_f64_slice([1, 1, 1, 4], &[-1.0, 0.0, 2.0, -3.0]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 0.0]);
        let g = relu_backward(&Tensor::<f64>::from_f64_slice([1, 1, 1, 4], &[1.0; 4]).unwrap(), &mask).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn idempotent() {
        let x = Tensor::<f64>::new([2, 3, 4, 4], Fill::Gaussian { mean: 0.0, sigma: 1.0, rng: &mut Rng::new(4) }).unwrap();
        let (once, _) = relu_forward(&x);
        let (twice, _) = relu_forward(&once);
        assert_eq!(once, twice);
    }
}
