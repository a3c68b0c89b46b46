use serde::{Deserialize, Serialize};

use crate::data::Prepared;
use crate::error::Result;
use crate::model::{LayerParams, LayerSpec, ModelParams, ModelSpec};
use crate::rng::Rng;
use crate::tensor::{Fill, Scalar, Tensor};

/// How the per-layer `k` is turned into a standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScale {
    /// `σ = k / fan_in`. Signal variance collapses by orders of magnitude per
    /// layer on the default stack, and SGD stays at chance.
    FanIn,
    /// `σ = k / sqrt(fan_in)`.
    SqrtFanIn,
}

impl SigmaScale {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fan_in" => Some(SigmaScale::FanIn),
            "sqrt_fan_in" => Some(SigmaScale::SqrtFanIn),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SigmaScale::FanIn => "fan_in",
            SigmaScale::SqrtFanIn => "sqrt_fan_in",
        }
    }

    pub fn sigma(&self, k: f64, fan_in: usize) -> f64 {
        match self {
            SigmaScale::FanIn => k / fan_in as f64,
            SigmaScale::SqrtFanIn => k / (fan_in as f64).sqrt(),
        }
    }
}

/// Weights of each layer are drawn from `N(0, σ²)`, with one
/// `k ~ U[k_range]` per layer and `σ` derived from `k` and the fan-in.
///
/// With `calibrate = Some(t)`, [`calibrate`] then rescales each layer's
/// weights so its output has standard deviation `t` on a batch of training
/// images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub k_range: [f64; 2],
    pub scale: SigmaScale,
    pub calibrate: Option<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { k_range: [0.2, 1.2], scale: SigmaScale::SqrtFanIn, calibrate: Some(1.0) }
    }
}

/// Images used by [`calibrate`]: the first ones of the training set.
pub const CALIBRATION_SAMPLES: usize = 64;

impl InitConfig {
    /// `σ = k / fan_in`, k in [0.2, 1.2], no calibration.
    pub fn fan_in() -> Self {
        InitConfig { scale: SigmaScale::FanIn, calibrate: None, ..Self::default() }
    }

    /// The random draw alone, without calibration.
    pub fn uncalibrated() -> Self {
        InitConfig { calibrate: None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.k_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(crate::Error::Domain(format!("k range [{lo}, {hi}] must be positive and ordered")));
        }
        if let Some(t) = self.calibrate {
            if !(t > 0.0 && t.is_finite()) {
                return Err(crate::Error::Domain(format!("calibration target {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// Rescales the weights of every parameterized layer, in order, so that its
/// output has standard deviation `cfg.calibrate` over the first
/// [`CALIBRATION_SAMPLES`] images of `set`. Returns the factors applied
/// (empty when calibration is off).
///
/// The network is positively homogeneous in each layer's weights while the
/// biases are zero, so later layers see the already-rescaled signal.
/// Layers with a constant output are left alone.
pub fn calibrate<S: Scalar>(params: &mut ModelParams<S>, set: &Prepared<S>, cfg: &InitConfig) -> Result<Vec<f64>> {
    let Some(target) = cfg.calibrate else { return Ok(Vec::new()) };
    cfg.validate()?;
    if set.len() == 0 {
        return Err(crate::Error::Domain("calibration needs at least one image".into()));
    }
    let positions: Vec<usize> = (0..set.len().min(CALIBRATION_SAMPLES)).collect();
    let x = set.batch(&positions)?;
    let mut factors = Vec::new();
    for i in 0..params.layers.len() {
        if params.layers[i].weight.is_none() {
            continue;
        }
        let out = params.forward_until(x.clone(), i)?;
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let sd = (out.data().iter().map(|&v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n).sqrt();
        let f = if sd > 0.0 && sd.is_finite() { target / sd } else { 1.0 };
        let w = params.layers[i].weight.as_mut().expect("checked above");
        for v in w.data_mut() {
            *v = S::from_f64(v.as_f64() * f);
        }
        factors.push(f);
    }
    Ok(factors)
}

/// The draw made for one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct InitDraw {
    pub layer: usize,
    pub k: f64,
    pub fan_in: usize,
    pub sigma: f64,
}

/// Fan-in of a parameterized layer: `C·k·k` for convolutions, the input
/// dimension for fully-connected layers.
pub fn fan_in(weight_shape: [usize; 4], layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv { .. } => weight_shape[1] * weight_shape[2] * weight_shape[3],
        _ => weight_shape[2],
    }
}

pub fn init_params<S: Scalar>(spec: &ModelSpec, cfg: &InitConfig, rng: &mut Rng) -> Result<(ModelParams<S>, Vec<InitDraw>)> {
    spec.output_shapes()?;
    cfg.validate()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut draws = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let (w_shape, b_shape) = spec.param_shapes(i)?;
        let weight = match w_shape {
            Some(shape) => {
                let k = rng.uniform(cfg.k_range[0], cfg.k_range[1]);
                let fan = fan_in(shape, layer);
                let sigma = cfg.scale.sigma(k, fan);
                draws.push(InitDraw { layer: i, k, fan_in: fan, sigma });
                Some(Tensor::new(shape, Fill::Gaussian { mean: 0.0, sigma, rng })?)
            }
            None => None,
        };
        let bias = b_shape.map(Tensor::zeros);
        layers.push(LayerParams { weight, bias });
    }
    Ok((ModelParams::new(spec.clone(), layers)?, draws))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_in_sigma_ranges() {
        let spec = ModelSpec::standard(6);
        let (params, draws) = init_params::<f32>(&spec, &InitConfig::fan_in(), &mut Rng::new(3)).unwrap();
        assert_eq!(draws.len(), 5);
        assert_eq!(draws[0].fan_in, 25);
        assert!(draws[0].sigma >= 0.2 / 25.0 && draws[0].sigma <= 1.2 / 25.0);
        assert_eq!(draws[3].fan_in, 1024);
        assert!(draws[3].sigma >= 0.2 / 1024.0 && draws[3].sigma <= 1.2 / 1024.0);
        assert_eq!(draws[1].fan_in, 64 * 25);
        assert_eq!(draws[2].fan_in, 128 * 25);
        assert_eq!(draws[4].fan_in, 300);

        let w = params.layers[0].weight.as_ref().unwrap();
        assert_eq!(w.len(), 1600);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let sd = (w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - draws[0].sigma).abs() < 0.15 * draws[0].sigma, "{sd} vs {}", draws[0].sigma);

        for (i, lp) in params.layers.iter().enumerate() {
            if let Some(b) = &lp.bias {
                assert!(b.data().iter().all(|&v| v == 0.0), "layer {i}");
            }
        }
        assert!(params.layers[0].bias.is_none());
    }

    #[test]
    fn sqrt_scale() {
        let (_, draws) = init_params::<f32>(&ModelSpec::standard(6), &InitConfig::default(), &mut Rng::new(3)).unwrap();
        for d in draws {
            assert!((d.sigma * (d.fan_in as f64).sqrt() - d.k).abs() < 1e-12);
            assert!((0.2..=1.2).contains(&d.k));
        }
        let bad = InitConfig { k_range: [0.0, 1.0], ..InitConfig::default() };
        assert!(init_params::<f32>(&ModelSpec::standard(6), &bad, &mut Rng::new(0)).is_err());
        let bad = InitConfig { calibrate: Some(-1.0), ..InitConfig::default() };
        assert!(init_params::<f32>(&ModelSpec::standard(6), &bad, &mut Rng::new(0)).is_err());
    }

    fn small_set(n: usize) -> Prepared<f64> {
        let mut rng = Rng::new(11);
        let images: Vec<Tensor<f64>> = (0..n)
            .map(|_| Tensor::new([1, 1, 36, 36], Fill::Gaussian { mean: 0.3, sigma: 1.0, rng: &mut rng }).unwrap())
            .collect();
        Prepared { images, labels: vec![0; n], sample_ids: (0..n).collect() }
    }

    fn output_sd(p: &ModelParams<f64>, x: &Tensor<f64>, layer: usize) -> f64 {
        let o = p.forward_until(x.clone(), layer).unwrap();
        let n = o.len() as f64;
        let m = o.sum() / n;
        (o.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn calibration_sets_every_layer_to_the_target() {
        let spec = ModelSpec::with_widths([1, 36, 36], [3, 4, 5], 5, 7, 4, 0.5);
        let set = small_set(80);
        let cfg = InitConfig { calibrate: Some(0.7), ..InitConfig::default() };
        let (raw, _) = init_params::<f64>(&spec, &cfg, &mut Rng::new(5)).unwrap();
        let mut p = raw.clone();
        let factors = calibrate(&mut p, &set, &cfg).unwrap();
        assert_eq!(factors.len(), 5);
        let x = set.batch(&(0..CALIBRATION_SAMPLES).collect::<Vec<_>>()).unwrap();
        for (j, i) in [0, 3, 6, 9, 12].into_iter().enumerate() {
            assert!((output_sd(&p, &x, i) - 0.7).abs() < 1e-9, "layer {i}");
            // Each weight tensor is a pure rescale of the draw.
            let (a, b) = (raw.layers[i].weight.as_ref().unwrap(), p.layers[i].weight.as_ref().unwrap());
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u * factors[j] - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
        // Images past the calibration batch play no part.
        let mut more = set.clone();
        more.images.truncate(CALIBRATION_SAMPLES);
        let mut q = raw.clone();
        assert_eq!(calibrate(&mut q, &more, &cfg).unwrap(), factors);
    }

    #[test]
    fn calibration_off_leaves_the_draw() {
        let spec = ModelSpec::with_widths([1, 36, 36], [3, 4, 5], 5, 7, 4, 0.5);
        let (raw, _) = init_params::<f64>(&spec, &InitConfig::uncalibrated(), &mut Rng::new(5)).unwrap();
        let mut p = raw.clone();
        assert!(calibrate(&mut p, &small_set(4), &InitConfig::uncalibrated()).unwrap().is_empty());
        assert!(p.bit_eq(&raw));
        let empty = Prepared { images: vec![], labels: vec![], sample_ids: vec![] };
        assert!(calibrate(&mut p, &empty, &InitConfig::default()).is_err());
    }
}
