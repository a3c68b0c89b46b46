use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{LayerParams, ModelParams};
use crate::tensor::{Scalar, Tensor};

/// Classical momentum SGD with L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-5, batch_size: 64 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: SgdConfig,
    /// One velocity per parameter tensor, zero-initialized.
    pub velocity: Vec<LayerParams<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ModelParams<S>, config: SgdConfig) -> Self {
        OptimizerState { config, velocity: params.layers.iter().map(LayerParams::zeros_like).collect() }
    }
}

/// `v ← μ·v − lr·(g + λ·p); p ← p + v` over one tensor.
pub(crate) fn update_tensor<S: Scalar>(p: &mut [S], v: &mut [S], g: &[S], lr: f64, momentum: f64, decay: f64) {
    let (lr, mu, lambda) = (S::from_f64(lr), S::from_f64(momentum), S::from_f64(decay));
    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = mu * *v - lr * (g + lambda * *p);
        *p = *p + *v;
    }
}

/// Applies one update to every parameter. Weight decay skips bias vectors.
/// Nothing is modified if any gradient is non-finite.
pub fn sgd_step<S: Scalar>(params: &mut ModelParams<S>, grads: &[LayerParams<S>], state: &mut OptimizerState<S>) -> Result<()> {
    if grads.len() != params.layers.len() || state.velocity.len() != params.layers.len() {
        return Err(shape_err!("gradient list does not match the parameter list"));
    }
    let same = |a: Option<&Tensor<S>>, b: Option<&Tensor<S>>| a.map(Tensor::shape) == b.map(Tensor::shape);
    for (i, (p, g)) in params.layers.iter().zip(grads).enumerate() {
        if !same(p.weight.as_ref(), g.weight.as_ref()) || !same(p.bias.as_ref(), g.bias.as_ref()) {
            return Err(shape_err!("layer {i}: gradient shapes do not match parameters"));
        }
        if g.tensors().any(|t| !t.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} ({})", params.spec.layers[i].name())));
        }
    }
    let c = state.config.clone();
    for ((p, g), v) in params.layers.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        if let (Some(p), Some(g), Some(v)) = (p.weight.as_mut(), g.weight.as_ref(), v.weight.as_mut()) {
            update_tensor(p.data_mut(), v.data_mut(), g.data(), c.learning_rate, c.momentum, c.weight_decay);
        }
        if let (Some(p), Some(g), Some(v)) = (p.bias.as_mut(), g.bias.as_ref(), v.bias.as_mut()) {
            update_tensor(p.data_mut(), v.data_mut(), g.data(), c.learning_rate, c.momentum, 0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::Rng;
    use crate::train::init::{init_params, InitConfig};
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut p, mut v) = (vec![0.3f64, -2.0], vec![0.0; 2]);
        update_tensor(&mut p, &mut v, &[0.0, 0.0], 0.01, 0.9, 0.0);
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn hand_evaluated_momentum() {
        let (mut p, mut v) = (vec![1.0f64], vec![0.0]);
        update_tensor(&mut p, &mut v, &[1.0], 0.01, 0.9, 0.0);
        assert!((v[0] + 0.01).abs() < 1e-15 && (p[0] - 0.99).abs() < 1e-15);
        update_tensor(&mut p, &mut v, &[0.0], 0.01, 0.9, 0.0);
        update_tensor(&mut p, &mut v, &[0.0], 0.01, 0.9, 0.0);
        assert!((p[0] - 0.9729).abs() < 1e-12, "{}", p[0]);
    }

    fn tiny() -> ModelParams<f64> {
        let spec = ModelSpec::with_widths([1, 24, 24], [2, 2, 2], 3, 4, 3, 0.5);
        init_params(&spec, &InitConfig::default(), &mut Rng::new(1)).unwrap().0
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut params = tiny();
        let before = params.clone();
        let mut grads: Vec<_> = params.layers.iter().map(LayerParams::zeros_like).collect();
        grads[3].weight.as_mut().unwrap().data_mut()[0] = f64::NAN;
        let mut state = OptimizerState::new(&params, SgdConfig::default());
        let err = sgd_step(&mut params, &grads, &mut state).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("layer 3")), "{err}");
        assert_eq!(params, before);
    }

    #[test]
    fn bias_is_not_decayed() {
        let mut params = tiny();
        for lp in &mut params.layers {
            if let Some(b) = lp.bias.as_mut() {
                b.data_mut().iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let grads: Vec<_> = params.layers.iter().map(LayerParams::zeros_like).collect();
        let cfg = SgdConfig { weight_decay: 0.5, ..SgdConfig::default() };
        let mut state = OptimizerState::new(&params, cfg);
        let w_before = params.layers[0].weight.clone().unwrap();
        sgd_step(&mut params, &grads, &mut state).unwrap();
        assert!(params.layers[9].bias.as_ref().unwrap().data().iter().all(|&v| v == 1.0));
        let w_after = params.layers[0].weight.as_ref().unwrap();
        for (a, b) in w_before.data().iter().zip(w_after.data()) {
            assert!((b - a * (1.0 - 0.01 * 0.5)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn plain_descent_without_momentum(p0 in -10.0f64..10.0, g in -10.0f64..10.0, lr in 1e-4f64..1.0) {
            let (mut p, mut v) = (vec![p0], vec![0.0]);
            update_tensor(&mut p, &mut v, &[g], lr, 0.0, 0.0);
            prop_assert_eq!(p[0], p0 - lr * g);
        }
    }
}
