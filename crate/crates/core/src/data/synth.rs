//! Procedural 96×96 faces whose generative factors act as ground-truth
//! action units.
//!
//! Five factors drive the rendering: `brow_raise` and `mouth_corner` in
//! `[-1, 1]`, `mouth_open` and `nose_wrinkle` in `[0, 1]`, `eye_open` in
//! `[0.3, 1]`. Each class has a signature: its signature factors are drawn
//! with magnitude `U[0.6, 1.0]` (sad's brow raise is milder, `U[0.3, 0.6]`),
//! every other factor `U[0, 0.2]`; `eye_open` is a nuisance factor drawn from
//! its full range. Action units are thresholds on the factors:
//!
//! | id | condition            | name                     |
//! |----|----------------------|--------------------------|
//! | 1  | `brow_raise > 0.5`   | brow raiser              |
//! | 2  | `brow_raise < -0.5`  | brow lowerer             |
//! | 3  | `mouth_corner > 0.5` | lip corner puller        |
//! | 4  | `mouth_corner < -0.5`| lip corner depressor     |
//! | 5  | `mouth_open > 0.5`   | mouth open               |
//! | 6  | `nose_wrinkle > 0.5` | nose wrinkler            |
//!
//! Every subject has a fixed face-center offset (±3 px) and size (±5%), so a
//! subject-independent split holds out genuinely unseen faces. Pixels get
//! Gaussian noise with σ = 0.02 and are quantized to 8 bits, so an image
//! written to PGM and read back is unchanged.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::{write_manifest, write_pgm};
use crate::data::{Dataset, Sample, IMAGE_SIDE};
use crate::error::{usage_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SYNTH_CLASSES: [&str; 6] = ["neutral", "happy", "sad", "surprise", "anger", "disgust"];

pub const FAU_BROW_RAISE: u32 = 1;
pub const FAU_BROW_LOWER: u32 = 2;
pub const FAU_LIP_CORNER_UP: u32 = 3;
pub const FAU_LIP_CORNER_DOWN: u32 = 4;
pub const FAU_MOUTH_OPEN: u32 = 5;
pub const FAU_NOSE_WRINKLE: u32 = 6;

/// Display name of a synthetic action unit (`A<id>: ...`), or `AU<id>`
/// for ids outside the synthetic set.
pub fn fau_name(id: u32) -> String {
    let name = match id {
        FAU_BROW_RAISE => "brow raiser",
        FAU_BROW_LOWER => "brow lowerer",
        FAU_LIP_CORNER_UP => "lip corner puller",
        FAU_LIP_CORNER_DOWN => "lip corner depressor",
        FAU_MOUTH_OPEN => "mouth open",
        FAU_NOSE_WRINKLE => "nose wrinkler",
        _ => return format!("AU{id}"),
    };
    format!("A{id}: {name}")
}

/// Facial region a synthetic action unit lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceRegion {
    Brows,
    Nose,
    Mouth,
}

pub fn fau_region(id: u32) -> Option<FaceRegion> {
    match id {
        FAU_BROW_RAISE | FAU_BROW_LOWER => Some(FaceRegion::Brows),
        FAU_NOSE_WRINKLE => Some(FaceRegion::Nose),
        FAU_LIP_CORNER_UP | FAU_LIP_CORNER_DOWN | FAU_MOUTH_OPEN => Some(FaceRegion::Mouth),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub brow_raise: f64,
    pub mouth_corner: f64,
    pub mouth_open: f64,
    pub nose_wrinkle: f64,
    pub eye_open: f64,
}

impl Factors {
    pub fn fau_set(&self) -> BTreeSet<u32> {
        let mut set = BTreeSet::new();
        let mut add = |cond: bool, id| {
            if cond {
                set.insert(id);
            }
        };
        add(self.brow_raise > 0.5, FAU_BROW_RAISE);
        add(self.brow_raise < -0.5, FAU_BROW_LOWER);
        add(self.mouth_corner > 0.5, FAU_LIP_CORNER_UP);
        add(self.mouth_corner < -0.5, FAU_LIP_CORNER_DOWN);
        add(self.mouth_open > 0.5, FAU_MOUTH_OPEN);
        add(self.nose_wrinkle > 0.5, FAU_NOSE_WRINKLE);
        set
    }

    /// Recovers the class name from the factors: signature factors are at
    /// least 0.6 in magnitude (0.3 for sad's brow), everything else at most 0.2.
    pub fn class_name(&self) -> &'static str {
        if self.mouth_corner >= 0.6 {
            "happy"
        } else if self.mouth_corner <= -0.6 {
            "sad"
        } else if self.mouth_open >= 0.6 {
            "surprise"
        } else if self.brow_raise <= -0.6 {
            "anger"
        } else if self.nose_wrinkle >= 0.6 {
            "disgust"
        } else {
            "neutral"
        }
    }

    fn draw(class: &str, rng: &mut Rng) -> Result<Factors> {
        let mut f = Factors {
            brow_raise: rng.uniform(0.0, 0.2),
            mouth_corner: rng.uniform(0.0, 0.2),
            mouth_open: rng.uniform(0.0, 0.2),
            nose_wrinkle: rng.uniform(0.0, 0.2),
            eye_open: rng.uniform(0.3, 1.0),
        };
        let mut strong = || rng.uniform(0.6, 1.0);
        match class {
            "neutral" => {}
            "happy" => f.mouth_corner = strong(),
            "sad" => {
                f.mouth_corner = -strong();
                f.brow_raise = rng.uniform(0.3, 0.6);
            }
            "surprise" => {
                f.mouth_open = strong();
                f.brow_raise = rng.uniform(0.6, 1.0);
            }
            "anger" => f.brow_raise = -strong(),
            "disgust" => f.nose_wrinkle = strong(),
            other => return Err(usage_err!("unknown synthetic class {other:?}")),
        }
        Ok(f)
    }
}

/// Per-subject face placement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectJitter {
    pub dx: f64,
    pub dy: f64,
    pub size: f64,
}

impl SubjectJitter {
    fn draw(rng: &mut Rng) -> Self {
        SubjectJitter { dx: rng.uniform(-3.0, 3.0), dy: rng.uniform(-3.0, 3.0), size: rng.uniform(0.95, 1.05) }
    }
}

struct Canvas {
    px: Vec<f64>,
}

impl Canvas {
    fn new(v: f64) -> Self {
        Canvas { px: vec![v; IMAGE_SIDE * IMAGE_SIDE] }
    }

    /// Blends `value` over the pixels where the signed distance `sdf` is
    /// negative, with a one-pixel anti-aliased edge, inside the given box.
    fn paint(&mut self, value: f64, bbox: [f64; 4], sdf: impl Fn(f64, f64) -> f64) {
        let clampi = |v: f64| v.clamp(0.0, (IMAGE_SIDE - 1) as f64) as usize;
        let (x0, x1) = (clampi(bbox[0].floor() - 1.0), clampi(bbox[2].ceil() + 1.0));
        let (y0, y1) = (clampi(bbox[1].floor() - 1.0), clampi(bbox[3].ceil() + 1.0));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let alpha = (0.5 - sdf(x as f64, y as f64)).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let p = &mut self.px[y * IMAGE_SIDE + x];
                    *p = *p * (1.0 - alpha) + value * alpha;
                }
            }
        }
    }

    fn ellipse(&mut self, value: f64, cx: f64, cy: f64, a: f64, b: f64) {
        let m = a.min(b);
        self.paint(value, [cx - a, cy - b, cx + a, cy + b], |x, y| {
            (((x - cx) / a).powi(2) + ((y - cy) / b).powi(2)).sqrt().mul_add(m, -m)
        });
    }

    fn polyline(&mut self, value: f64, pts: &[(f64, f64)], thickness: f64) {
        let r = thickness / 2.0;
        let (mut bx0, mut by0, mut bx1, mut by1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in pts {
            bx0 = bx0.min(x - r);
            by0 = by0.min(y - r);
            bx1 = bx1.max(x + r);
            by1 = by1.max(y + r);
        }
        self.paint(value, [bx0, by0, bx1, by1], |x, y| {
            pts.windows(2).map(|s| segment_distance((x, y), s[0], s[1])).fold(f64::MAX, f64::min) - r
        });
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders one face. `noise_rng` supplies the pixel noise.
pub fn render_face(f: &Factors, jitter: &SubjectJitter, noise_rng: &mut Rng) -> Tensor<f32> {
    let s = jitter.size;
    let cx = (IMAGE_SIDE as f64 - 1.0) / 2.0 + jitter.dx;
    let cy = (IMAGE_SIDE as f64 - 1.0) / 2.0 + jitter.dy;
    let mut c = Canvas::new(0.1);

    c.ellipse(0.8, cx, cy + 2.0 * s, 32.0 * s, 40.0 * s);

    // Eyes.
    let eye_h = (4.5 * f.eye_open * s).max(0.6);
    for side in [-1.0, 1.0] {
        c.ellipse(0.15, cx + side * 13.0 * s, cy - 8.0 * s, 6.0 * s, eye_h);
    }

    // Brows: raised brows move up with the inner ends leading; lowered brows
    // drop into a V.
    let base = cy - 21.0 * s;
    let inner_y = base - 7.0 * f.brow_raise * s;
    let outer_y = base - 3.0 * f.brow_raise * s;
    for side in [-1.0, 1.0] {
        let inner = (cx + side * 6.0 * s, inner_y);
        let outer = (cx + side * 20.0 * s, outer_y);
        c.polyline(0.2, &[inner, outer], 2.5 * s);
    }

    // Nose wrinkles: up to three short lines, darker with intensity.
    let lines = (3.0 * f.nose_wrinkle).ceil().clamp(0.0, 3.0) as usize;
    for l in 0..lines {
        let y = cy - 1.0 * s + 3.0 * l as f64 * s;
        c.polyline(0.8 - 0.5 * f.nose_wrinkle, &[(cx - 5.0 * s, y), (cx + 5.0 * s, y)], 1.5 * s);
    }

    // Mouth: open cavity first, then the lip arc on top.
    let (mx, my) = (cx, cy + 20.0 * s);
    if f.mouth_open > 0.0 {
        let b = 9.0 * f.mouth_open * s;
        if b > 0.3 {
            c.ellipse(0.1, mx, my + b / 2.0, (6.0 + 4.0 * f.mouth_open) * s, b);
        }
    }
    let arc: Vec<(f64, f64)> = (0..=16)
        .map(|i| {
            let u = i as f64 / 8.0 - 1.0;
            (mx + 13.0 * s * u, my - 7.0 * f.mouth_corner * s * u * u)
        })
        .collect();
    c.polyline(0.2, &arc, 2.0 * s);

    let data = c
        .px
        .into_iter()
        .map(|v| {
            let noisy = (v + noise_rng.gaussian(0.0, 0.02)).clamp(0.0, 1.0);
            ((noisy * 255.0).round() / 255.0) as f32
        })
        .collect();
    Tensor::from_vec([1, 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("fixed size")
}

/// Generates `n_subjects × samples_per_subject` faces. Within a subject the
/// class cycles through `class_list`; subject `s` draws everything from
/// `rng.child(s)`, so subjects are independent of each other's sizes.
pub fn synth_generate(
    n_subjects: usize,
    samples_per_subject: usize,
    class_list: &[String],
    rng: &Rng,
) -> Result<Dataset> {
    if class_list.is_empty() {
        return Err(usage_err!("empty class list"));
    }
    if let Some(bad) = class_list.iter().find(|c| !SYNTH_CLASSES.contains(&c.as_str())) {
        return Err(usage_err!("unknown synthetic class {bad:?}; expected a subset of {SYNTH_CLASSES:?}"));
    }
    let mut samples = Vec::with_capacity(n_subjects * samples_per_subject);
    for subject in 0..n_subjects {
        let mut srng = rng.child(subject as u64);
        let jitter = SubjectJitter::draw(&mut srng);
        for k in 0..samples_per_subject {
            let label = k % class_list.len();
            let factors = Factors::draw(&class_list[label], &mut srng)?;
            let image = render_face(&factors, &jitter, &mut srng);
            samples.push(Sample {
                image,
                label,
                fau_set: factors.fau_set(),
                subject_id: format!("S{subject:03}"),
                sample_id: samples.len(),
                factors: Some(factors),
            });
        }
    }
    Ok(Dataset { samples, classes: class_list.to_vec(), folds: None })
}

/// Writes `img/<sample_id>.pgm`, `manifest.csv` and `factors.csv` into `dir`.
pub fn write_synth(dataset: &Dataset, dir: &Path) -> Result<()> {
    let img_dir = dir.join("img");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut paths = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let rel = format!("img/{:05}.pgm", s.sample_id);
        write_pgm(&dir.join(&rel), &s.image)?;
        paths.push(rel);
    }
    write_manifest(&dir.join("manifest.csv"), dataset, &paths)?;

    let fpath = dir.join("factors.csv");
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", fpath.display()));
    let mut w = csv::Writer::from_path(&fpath).map_err(err)?;
    w.write_record(["sample_id", "brow_raise", "mouth_corner", "mouth_open", "nose_wrinkle", "eye_open"])
        .map_err(err)?;
    for s in &dataset.samples {
        let f = s.factors.ok_or_else(|| usage_err!("sample {} has no factors", s.sample_id))?;
        w.write_record([
            s.sample_id.to_string(),
            format!("{:.6}", f.brow_raise),
            format!("{:.6}", f.mouth_corner),
            format!("{:.6}", f.mouth_open),
            format!("{:.6}", f.nose_wrinkle),
            format!("{:.6}", f.eye_open),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&fpath, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_classes() -> Vec<String> {
        SYNTH_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn happy_always_has_lip_corner_puller() {
        let ds = synth_generate(10, 12, &all_classes(), &Rng::new(1)).unwrap();
        for s in ds.samples.iter().filter(|s| ds.classes[s.label] == "happy") {
            assert!(s.fau_set.contains(&FAU_LIP_CORNER_UP));
        }
    }

    #[test]
    fn label_is_a_function_of_factors() {
        let ds = synth_generate(12, 12, &all_classes(), &Rng::new(2)).unwrap();
        for s in &ds.samples {
            let f = s.factors.unwrap();
            assert_eq!(f.class_name(), ds.classes[s.label]);
            assert_eq!(f.fau_set(), s.fau_set);
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(3, 4, &all_classes(), &Rng::new(9)).unwrap();
        let b = synth_generate(3, 4, &all_classes(), &Rng::new(9)).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!(x.image.bit_eq(&y.image));
        }
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(synth_generate(10, 1, &["contempt".to_string()], &Rng::new(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn subject_shares_jitter() {
        // Same subject jitter + same factors + same noise stream → same image;
        // the per-subject draw comes first from the subject's own stream.
        let rng = Rng::new(4);
        let mut s0 = rng.child(0);
        let j0 = SubjectJitter::draw(&mut s0);
        let mut again = rng.child(0);
        assert_eq!(SubjectJitter::draw(&mut again), j0);
        let mut s1 = rng.child(1);
        assert_ne!(SubjectJitter::draw(&mut s1), j0);
    }

    #[test]
    fn factors_move_the_right_region() {
        let j = SubjectJitter { dx: 0.0, dy: 0.0, size: 1.0 };
        let base = Factors { brow_raise: 0.0, mouth_corner: 0.0, mouth_open: 0.0, nose_wrinkle: 0.0, eye_open: 0.6 };
        let render = |f: &Factors| render_face(f, &j, &mut Rng::new(0));
        let centroid_row = |a: &Tensor<f32>, b: &Tensor<f32>| {
            let (mut acc, mut tot) = (0.0, 0.0);
            for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                let d = ((x - y) as f64).powi(2);
                acc += d * (i / IMAGE_SIDE) as f64;
                tot += d;
            }
            acc / tot
        };
        let neutral = render(&base);
        let smile = render(&Factors { mouth_corner: 0.9, ..base });
        let raised = render(&Factors { brow_raise: 0.9, ..base });
        let open = render(&Factors { mouth_open: 0.9, ..base });
        assert!(centroid_row(&smile, &neutral) > 48.0);
        assert!(centroid_row(&open, &neutral) > 48.0);
        assert!(centroid_row(&raised, &neutral) < 32.0);
    }
}
