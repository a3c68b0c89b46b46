use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

pub fn check_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout rate {p} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout: kept entries are scaled by `1/(1-p)`, so evaluation is
/// the identity. Returns the per-entry multiplier (0 or `1/(1-p)`), or `None`
/// when `p == 0` and nothing was drawn.
pub fn dropout_train<S: Scalar>(input: &Tensor<S>, p: f64, rng: &mut Rng) -> Result<(Tensor<S>, Option<Vec<S>>)> {
    check_rate(p)?;
    if p == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = S::from_f64(1.0 / (1.0 - p));
    let mask: Vec<S> = (0..input.len())
        .map(|_| if rng.bernoulli(1.0 - p) { keep } else { S::zero() })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_vec(input.shape(), out)?, Some(mask)))
}

pub fn dropout_backward<S: Scalar>(grad_out: &Tensor<S>, mask: Option<&[S]>) -> Result<Tensor<S>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) if m.len() == grad_out.len() => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::from_vec(grad_out.shape(), data)
        }
        Some(m) => Err(shape_err!("dropout mask has {} entries, gradient {}", m.len(), grad_out.len())),
    }
}
