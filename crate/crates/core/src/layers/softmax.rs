use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct SoftmaxOutput<S> {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    /// Gradient of `loss` with respect to the logits, `(p - onehot) / n`.
    pub grad: Tensor<S>,
    pub probs: Tensor<S>,
}

/// Row-wise softmax with the row maximum subtracted first. Accumulates in f64.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let n = logits.shape()[0];
    let k = if n == 0 { 0 } else { logits.len() / n };
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k.max(1)) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| S::from_f64(e / z)));
    }
    Tensor::from_vec(logits.shape(), probs)
}

/// Softmax cross-entropy for logits shaped `(n, K, ..)` and integer labels.
pub fn softmax_xent<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<SoftmaxOutput<S>> {
    let n = logits.shape()[0];
    if labels.len() != n || n == 0 {
        return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    let k = logits.len() / n;
    if k < 2 {
        return Err(Error::Domain(format!("softmax needs at least 2 classes, got {k}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Domain(format!("label {bad} outside [0, {k})")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks_exact(k).zip(labels) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let shifted: Vec<f64> = row.iter().map(|v| v.as_f64() - m).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        loss -= shifted[label] - log_z;
        for (j, s) in shifted.iter().enumerate() {
            let p = (s - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(S::from_f64((p - target) / n as f64));
        }
    }
    Ok(SoftmaxOutput {
        loss: loss / n as f64,
        grad: Tensor::from_vec(logits.shape(), grad)?,
        probs: softmax(logits)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Fill;

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_f64_slice([rows.len(), rows[0].len(), 1, 1], &flat).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let out = softmax_xent(&logits(&[&[0.3; 8]]), &[5]).unwrap();
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let out = softmax_xent(&logits(&[&[1000.0, 0.0]]), &[0]).unwrap();
        assert!(out.loss.is_finite() && out.loss < 1e-12);
    }

    #[test]
    fn two_class_closed_form() {
        let out = softmax_xent(&logits(&[&[1.0, 2.0]]), &[1]).unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - want).abs() < 1e-12);
        assert!((out.loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn errors() {
        assert!(matches!(softmax_xent(&logits(&[&[1.0, 2.0]]), &[2]), Err(Error::Domain(_))));
        assert!(matches!(softmax_xent(&logits(&[&[f64::NAN, 2.0]]), &[0]), Err(Error::Numeric(_))));
        assert!(matches!(softmax_xent(&logits(&[&[1.0]]), &[0]), Err(Error::Domain(_))));
    }

    #[test]
    fn rows_sum_to_one() {
        let x = Tensor::<f32>::new([16, 7, 1, 1], Fill::Gaussian { mean: 0.0, sigma: 10.0, rng: &mut Rng::new(3) }).unwrap();
        let p = softmax(&x).unwrap();
        for row in p.data().chunks_exact(7) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
