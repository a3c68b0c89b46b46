use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Per-image standardization: `(x - mean) / max(std, 1e-8)` over all pixels,
/// with the population standard deviation. A constant image maps to zeros.
pub fn standardize<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    if image.data().windows(2).all(|w| w[0] == w[1]) {
        return image.map(|_| S::zero());
    }
    let n = image.len().max(1) as f64;
    let mean = image.sum() / n;
    let var = image.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / var.sqrt().max(1e-8);
    image.map(|v| S::from_f64((v.as_f64() - mean) * scale))
}

/// Ranges of the random transform applied to each training image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Max absolute translation in pixels, per axis.
    pub translate_px: f64,
    /// Max absolute rotation in degrees.
    pub rotate_deg: f64,
    pub scale_range: [f64; 2],
    pub flip_prob: f64,
    pub intensity_gain: [f64; 2],
    pub intensity_bias: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate_px: 5.0,
            rotate_deg: 10.0,
            scale_range: [0.9, 1.1],
            flip_prob: 0.5,
            intensity_gain: [0.8, 1.2],
            intensity_bias: [-0.1, 0.1],
        }
    }
}

impl AugmentConfig {
    /// The null transform.
    pub fn identity() -> Self {
        AugmentConfig {
            translate_px: 0.0,
            rotate_deg: 0.0,
            scale_range: [1.0, 1.0],
            flip_prob: 0.0,
            intensity_gain: [1.0, 1.0],
            intensity_bias: [0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if self.translate_px < 0.0 || self.rotate_deg < 0.0 {
            return Err("translation and rotation limits must be nonnegative".into());
        }
        if !ordered(self.scale_range) || self.scale_range[0] <= 0.0 {
            return Err("scale range must be ordered and positive".into());
        }
        if !ordered(self.intensity_gain) || !ordered(self.intensity_bias) {
            return Err("intensity ranges must be ordered".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err("flip probability must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct AffineDraw {
    pub flip: bool,
    pub theta: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub gain: f64,
    pub bias: f64,
}

impl AffineDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut Rng) -> Self {
        let flip = rng.bernoulli(cfg.flip_prob);
        let theta = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg).to_radians();
        let scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
        let tx = rng.uniform(-cfg.translate_px, cfg.translate_px);
        let ty = rng.uniform(-cfg.translate_px, cfg.translate_px);
        let gain = rng.uniform(cfg.intensity_gain[0], cfg.intensity_gain[1]);
        let bias = rng.uniform(cfg.intensity_bias[0], cfg.intensity_bias[1]);
        AffineDraw { flip, theta, scale, tx, ty, gain, bias }
    }

    /// Resamples every `(n, c)` plane. The forward map is flip ∘ rotate ∘
    /// scale about the pixel-grid center followed by translation; each output
    /// pixel reads the inverse-mapped source point bilinearly, with source
    /// coordinates clamped to the image.
    pub fn apply<S: Scalar>(&self, image: &Tensor<S>) -> Tensor<S> {
        let [_, _, h, w] = image.shape();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.theta.sin_cos();
        let mut out = Tensor::zeros(image.shape());
        for (src, dst) in image.data().chunks_exact(h * w).zip(out.data_mut().chunks_exact_mut(h * w)) {
            for y in 0..h {
                for x in 0..w {
                    // Undo translation, then flip, rotation and scale in reverse order.
                    let mut u = x as f64 - self.tx - cx;
                    let v = y as f64 - self.ty - cy;
                    if self.flip {
                        u = -u;
                    }
                    let (ru, rv) = (cos * u + sin * v, -sin * u + cos * v);
                    let sx = ru / self.scale + cx;
                    let sy = rv / self.scale + cy;
                    let val = bilinear(src, h, w, sx, sy);
                    dst[y * w + x] = S::from_f64(self.gain * val + self.bias);
                }
            }
        }
        out
    }
}

fn bilinear<S: Scalar>(plane: &[S], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Draws one random transform from `cfg` and applies it.
pub fn augment<S: Scalar>(image: &Tensor<S>, cfg: &AugmentConfig, rng: &mut Rng) -> Tensor<S> {
    AffineDraw::sample(cfg, rng).apply(image)
}
