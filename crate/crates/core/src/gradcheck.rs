//! Central finite-difference verification of every backward pass, in f64.
//!
//! Each layer `y = f(x)` is reduced to the scalar `L = Σ r ⊙ f(x)` with a
//! fixed random `r`, so the analytic gradient is the layer's backward pass
//! applied to `r`. Every coordinate is perturbed by `±step`.

use serde::Serialize;

use crate::error::Result;
use crate::layers::{self, PoolSwitches};
use crate::model::{ModelParams, ModelSpec, Mode};
use crate::rng::Rng;
use crate::tensor::{Fill, Tensor};
use crate::train::init::{init_params, InitConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// When both gradients are below this magnitude the absolute error is
    /// compared against it instead.
    pub abs_floor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { step: 1e-5, rel_tol: 1e-5, abs_floor: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Index of the worst coordinate.
    pub worst: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` around `point`.
pub fn check(
    name: &str,
    seed: u64,
    point: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    assert_eq!(point.len(), analytic.len(), "{name}: gradient length");
    let mut x = point.to_vec();
    let mut rep = CheckReport {
        name: name.to_string(),
        seed,
        checked: point.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: 0,
        passed: true,
    };
    let mut worst_score = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + cfg.step;
        let up = f(&x)?;
        x[i] = orig - cfg.step;
        let down = f(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic[i];
        let abs = (a - numeric).abs();
        let denom = a.abs().max(numeric.abs());
        let (ok, score) = if denom < cfg.abs_floor {
            (abs < cfg.abs_floor, abs / cfg.abs_floor * cfg.rel_tol)
        } else {
            let rel = abs / denom;
            rep.max_rel_error = rep.max_rel_error.max(rel);
            (rel < cfg.rel_tol, rel)
        };
        rep.max_abs_error = rep.max_abs_error.max(abs);
        if score > worst_score || !ok && rep.passed {
            worst_score = score;
            rep.worst = i;
        }
        rep.passed &= ok;
    }
    Ok(rep)
}

fn gaussian(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    Tensor::new(shape, Fill::Gaussian { mean: 0.0, sigma: 1.0, rng }).expect("small shape")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with(shape: [usize; 4], v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).expect("same length")
}

/// Moves entries away from the ReLU kink so `±step` never crosses it.
fn off_kink(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 } else { 0.05 };
        }
    }
}

/// Input with all values distinct by a wide margin, so max-pool windows
/// never tie under perturbation.
fn spread(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    with(shape, &idx.iter().map(|&i| i as f64 * 0.01 - n as f64 * 0.005).collect::<Vec<_>>())
}

/// Backward passes under test. The default uses the real layer kernels;
/// tests substitute a faulty one to confirm the checker catches it.
pub struct Backwards {
    pub conv_input: fn(&Tensor<f64>, &Tensor<f64>, usize, usize) -> Result<Tensor<f64>>,
}

impl Default for Backwards {
    fn default() -> Self {
        Backwards { conv_input: layers::conv2d_backward_input }
    }
}

/// Runs every per-layer check plus a whole-network check for one seed.
pub fn check_all(seed: u64, cfg: &CheckConfig) -> Result<Vec<CheckReport>> {
    check_all_with(seed, cfg, &Backwards::default())
}

pub fn check_all_with(seed: u64, cfg: &CheckConfig, bw: &Backwards) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();

    // Convolution: input and weights.
    let xs = [2, 2, 7, 6];
    let ws = [3, 2, 3, 3];
    let x = gaussian(xs, &mut rng);
    let w = gaussian(ws, &mut rng);
    let r = gaussian([2, 3, 5, 4], &mut rng);
    let gx = (bw.conv_input)(&r, &w, 7, 6)?;
    out.push(check("conv input", seed, x.data(), gx.data(), |p| Ok(dot(&layers::conv2d_forward(&with(xs, p), &w)?, &r)), cfg)?);
    let gw = layers::conv2d_backward_weights(&x, &r, 3)?;
    out.push(check("conv weights", seed, w.data(), gw.data(), |p| Ok(dot(&layers::conv2d_forward(&x, &with(ws, p))?, &r)), cfg)?);

    // ReLU.
    let rs = [2, 3, 4, 4];
    let mut x = gaussian(rs, &mut rng);
    off_kink(&mut x);
    let r = gaussian(rs, &mut rng);
    let (_, mask) = layers::relu_forward(&x);
    let g = layers::relu_backward(&r, &mask)?;
    out.push(check("relu", seed, x.data(), g.data(), |p| Ok(dot(&layers::relu_forward(&with(rs, p)).0, &r)), cfg)?);

    // Max pooling (odd extent drops the last row/column).
    let ps = [2, 2, 5, 6];
    let x = spread(ps, &mut rng);
    let (y, sw): (Tensor<f64>, PoolSwitches) = layers::maxpool2_forward(&x)?;
    let r = gaussian(y.shape(), &mut rng);
    let g = layers::maxpool2_backward(&r, &sw)?;
    out.push(check("maxpool", seed, x.data(), g.data(), |p| Ok(dot(&layers::maxpool2_forward(&with(ps, p))?.0, &r)), cfg)?);

    // Quadrant pooling on an odd extent (unequal quadrants).
    let qs = [2, 3, 5, 7];
    let x = gaussian(qs, &mut rng);
    let r = gaussian([2, 3, 2, 2], &mut rng);
    let g = layers::quadrantpool_backward(&r, qs)?;
    out.push(check("quadrantpool", seed, x.data(), g.data(), |p| Ok(dot(&layers::quadrantpool_forward(&with(qs, p))?, &r)), cfg)?);

    // Fully connected: input, weights, bias.
    let (is, dws, bs) = ([3, 2, 2, 1], [1, 1, 4, 5], [1, 1, 1, 5]);
    let x = gaussian(is, &mut rng);
    let w = gaussian(dws, &mut rng);
    let b = gaussian(bs, &mut rng);
    let r = gaussian([3, 5, 1, 1], &mut rng);
    let g = layers::dense_backward(&x, &w, &b, &r)?;
    out.push(check("fullyconnected input", seed, x.data(), g.input.data(), |p| Ok(dot(&layers::dense_forward(&with(is, p), &w, &b)?, &r)), cfg)?);
    out.push(check("fullyconnected weights", seed, w.data(), g.weights.data(), |p| Ok(dot(&layers::dense_forward(&x, &with(dws, p), &b)?, &r)), cfg)?);
    out.push(check("fullyconnected bias", seed, b.data(), g.bias.data(), |p| Ok(dot(&layers::dense_forward(&x, &w, &with(bs, p))?, &r)), cfg)?);

    // Dropout with the mask held fixed (same generator state every call).
    let ds = [2, 6, 1, 1];
    let x = gaussian(ds, &mut rng);
    let r = gaussian(ds, &mut rng);
    let mask_rng = rng.child(1);
    let (_, mask) = layers::dropout_train(&x, 0.5, &mut mask_rng.clone())?;
    let g = layers::dropout_backward(&r, mask.as_deref())?;
    out.push(check("dropout", seed, x.data(), g.data(), |p| Ok(dot(&layers::dropout_train(&with(ds, p), 0.5, &mut mask_rng.clone())?.0, &r)), cfg)?);

    // Softmax with cross-entropy, mean over the batch.
    let ls = [3, 4, 1, 1];
    let logits = gaussian(ls, &mut rng).scale(3.0);
    let labels = [0usize, 3, 1];
    let g = layers::softmax_xent(&logits, &labels)?.grad;
    out.push(check("softmax cross-entropy", seed, logits.data(), g.data(), |p| Ok(layers::softmax_xent(&with(ls, p), &labels)?.loss), cfg)?);

    out.extend(check_network(seed, cfg)?);
    Ok(out)
}

/// Loss gradient of a small instance of the full layer stack with respect to
/// every parameter tensor, dropout mask held fixed.
pub fn check_network(seed: u64, cfg: &CheckConfig) -> Result<Vec<CheckReport>> {
    let mut rng = Rng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let spec = ModelSpec::with_widths([1, 22, 22], [2, 3, 2], 3, 5, 3, 0.5);
    let (params, _) = init_params::<f64>(&spec, &InitConfig::default(), &mut rng)?;
    let x = gaussian([2, 1, 22, 22], &mut rng);
    let labels = [2usize, 0];
    let mode_rng = rng.child(7);
    let loss = |m: &ModelParams<f64>| -> Result<f64> {
        let (logits, _) = m.forward(x.clone(), Mode::Train(&mut mode_rng.clone()))?;
        Ok(layers::softmax_xent(&logits, &labels)?.loss)
    };
    let (logits, cache) = params.forward(x.clone(), Mode::Train(&mut mode_rng.clone()))?;
    let grads = params.backward(cache, layers::softmax_xent(&logits, &labels)?.grad)?;

    let mut out = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        for (which, is_bias) in [("weight", false), ("bias", true)] {
            let pick = |lp: &crate::model::LayerParams<f64>| if is_bias { lp.bias.clone() } else { lp.weight.clone() };
            let (Some(p0), Some(g)) = (pick(&params.layers[i]), pick(&grads[i])) else { continue };
            let name = format!("network layer {i} ({}) {which}", layer.name());
            let shape = p0.shape();
            let mut trial = params.clone();
            let rep = check(&name, seed, p0.data(), g.data(), |p| {
                let t = Some(with(shape, p));
                if is_bias { trial.layers[i].bias = t } else { trial.layers[i].weight = t }
                loss(&trial)
            }, cfg)?;
            out.push(rep);
        }
    }
    Ok(out)
}
