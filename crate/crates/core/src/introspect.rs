//! Top-N activation mining, deconvnet and guided-backprop reconstructions,
//! and image grids.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Prepared;
use crate::error::{usage_err, Error, Result};
use crate::layers;
use crate::model::{ForwardCache, LayerCache, LayerSpec, ModelParams, ModelSpec};
use crate::tensor::{Scalar, Tensor};

/// A single conv-layer neuron: `layer` is the 1-based conv ordinal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronRef {
    pub layer: usize,
    pub filter: usize,
    pub y: usize,
    pub x: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNEntry {
    pub sample_id: usize,
    pub value: f64,
    pub position: (usize, usize),
    /// 0-based.
    pub rank: usize,
}

/// Per-sample, per-filter spatial maximum of one conv layer's post-ReLU
/// output, with the position of the (first) maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct MaximaTable {
    pub layer: usize,
    pub filters: usize,
    pub sample_ids: Vec<usize>,
    /// `values[s * filters + f]`.
    pub values: Vec<f64>,
    pub positions: Vec<(usize, usize)>,
}

impl MaximaTable {
    pub fn value(&self, sample: usize, filter: usize) -> f64 {
        self.values[sample * self.filters + filter]
    }

    pub fn position(&self, sample: usize, filter: usize) -> (usize, usize) {
        self.positions[sample * self.filters + filter]
    }

    /// One filter's maxima over all samples, in table order.
    pub fn column(&self, filter: usize) -> Vec<f64> {
        (0..self.sample_ids.len()).map(|s| self.value(s, filter)).collect()
    }
}

fn relu_of_conv(spec: &ModelSpec, layer: usize) -> Result<usize> {
    spec.conv_relu_index(layer).ok_or_else(|| {
        usage_err!("conv layer {layer} does not exist or has no ReLU after it (model has {} conv layers)", spec.conv_count())
    })
}

/// Evaluation-mode pass over `set` recording every filter's spatial max.
pub fn conv_maxima<S: Scalar>(params: &ModelParams<S>, set: &Prepared<S>, layer: usize) -> Result<MaximaTable> {
    let last = relu_of_conv(&params.spec, layer)?;
    let filters = params.spec.output_shapes()?[last][0];
    let mut table =
        MaximaTable { layer, filters, sample_ids: set.sample_ids.clone(), values: Vec::new(), positions: Vec::new() };
    let positions: Vec<usize> = (0..set.len()).collect();
    for chunk in positions.chunks(32) {
        let act = params.forward_until(set.batch(chunk)?, last)?;
        let m = act.max_per_channel_spatial()?;
        table.values.extend(m.values.iter().map(|v| v.as_f64()));
        table.positions.extend(m.positions);
    }
    Ok(table)
}

/// The `n` samples with the largest maxima for `filter`, descending, ties to
/// the lower sample id. Fewer than `n` samples returns all of them.
pub fn top_n(table: &MaximaTable, filter: usize, n: usize) -> Result<Vec<TopNEntry>> {
    if filter >= table.filters {
        return Err(usage_err!("filter {filter} out of range (layer has {})", table.filters));
    }
    if n == 0 {
        return Err(usage_err!("N must be at least 1"));
    }
    let mut order: Vec<usize> = (0..table.sample_ids.len()).collect();
    order.sort_by(|&a, &b| {
        table.value(b, filter).total_cmp(&table.value(a, filter)).then(table.sample_ids[a].cmp(&table.sample_ids[b]))
    });
    Ok(order
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(rank, s)| TopNEntry {
            sample_id: table.sample_ids[s],
            value: table.value(s, filter),
            position: table.position(s, filter),
            rank,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Deconvnet: the backward signal is rectified at every ReLU.
    Plain,
    /// Guided backpropagation: rectified and also masked by the forward
    /// activation pattern.
    Guided,
}

impl ReconMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(ReconMode::Plain),
            "guided" => Some(ReconMode::Guided),
            _ => None,
        }
    }
}

/// Backward signal around one ReLU during a reconstruction.
#[derive(Clone, Debug)]
pub struct ReluSite<S> {
    pub layer: usize,
    pub input: Tensor<S>,
    pub output: Tensor<S>,
    pub forward_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction<S> {
    /// `(1, c, h, w)` in input space.
    pub map: Tensor<S>,
    /// Top layer first.
    pub sites: Vec<ReluSite<S>>,
}

/// Forward pass of one sample up to a conv layer's ReLU, with every switch
/// and mask kept for reconstructions.
pub struct Traced<'m, S> {
    params: &'m ModelParams<S>,
    layer: usize,
    top: usize,
    activation: Tensor<S>,
    cache: ForwardCache<S>,
}

impl<'m, S: Scalar> Traced<'m, S> {
    /// `image` is one standardized `(1, c, h, w)` sample.
    pub fn new(params: &'m ModelParams<S>, image: &Tensor<S>, layer: usize) -> Result<Self> {
        if image.shape()[0] != 1 {
            return Err(usage_err!("reconstruction takes one sample, got {}", image.shape()[0]));
        }
        let top = relu_of_conv(&params.spec, layer)?;
        let (mut outputs, cache) = params.forward_traced(image.clone(), top)?;
        let activation = outputs.pop().expect("top >= 1");
        Ok(Traced { params, layer, top, activation, cache })
    }

    /// Post-ReLU activation of this layer, `(1, filters, h, w)`.
    pub fn activation(&self) -> &Tensor<S> {
        &self.activation
    }

    fn check(&self, n: &NeuronRef) -> Result<()> {
        let [_, f, h, w] = self.activation.shape();
        if n.layer != self.layer || n.filter >= f || n.y >= h || n.x >= w {
            return Err(usage_err!("neuron {n:?} outside conv{} output ({f}, {h}, {w})", self.layer));
        }
        Ok(())
    }

    /// Reconstruction seeded with the neuron's recorded activation.
    pub fn reconstruct(&self, neuron: &NeuronRef, mode: ReconMode) -> Result<Reconstruction<S>> {
        self.check(neuron)?;
        let v = self.activation.at(0, neuron.filter, neuron.y, neuron.x);
        self.reconstruct_seeded(neuron, v, mode)
    }

    /// Projects a layer map that is zero except for `seed` at `neuron` down
    /// to input space through transposed convolutions, unpooling with the
    /// recorded switches, and the mode's ReLU rule.
    pub fn reconstruct_seeded(&self, neuron: &NeuronRef, seed: S, mode: ReconMode) -> Result<Reconstruction<S>> {
        self.check(neuron)?;
        let mut g = Tensor::zeros(self.activation.shape());
        g.set(0, neuron.filter, neuron.y, neuron.x, seed);
        let mut sites = Vec::new();
        for i in (0..=self.top).rev() {
            g = match &self.cache.layers[i] {
                LayerCache::Relu { mask } => {
                    let out = match mode {
                        ReconMode::Plain => g.map(|v| v.max(S::zero())),
                        ReconMode::Guided => {
                            let data = g.data().iter().zip(mask).map(|(&v, &m)| if m { v.max(S::zero()) } else { S::zero() });
                            Tensor::from_vec(g.shape(), data.collect())?
                        }
                    };
                    sites.push(ReluSite { layer: i, input: g, output: out.clone(), forward_mask: mask.clone() });
                    out
                }
                LayerCache::MaxPool(sw) => layers::maxpool2_backward(&g, sw)?,
                LayerCache::Conv { input } => {
                    let [_, _, h, w] = input.shape();
                    let wt = self.params.layers[i].weight.as_ref().expect("conv has weights");
                    layers::conv2d_backward_input(&g, wt, h, w)?
                }
                other => {
                    return Err(usage_err!(
                        "layer {i} ({}) cannot be inverted for reconstruction",
                        match other {
                            LayerCache::QuadrantPool { .. } => "quadrantpool",
                            LayerCache::Dense { .. } => "fullyconnected",
                            LayerCache::Dropout { .. } => "dropout",
                            _ => "softmax",
                        }
                    ))
                }
            };
        }
        Ok(Reconstruction { map: g, sites })
    }
}

/// Input window `[y0, y1) × [x0, x1)` that can influence output `(y, x)` of
/// layer `index` (stack index), from the kernel and stride of every layer
/// below it.
pub fn receptive_window(spec: &ModelSpec, index: usize, y: usize, x: usize) -> Result<(usize, usize, usize, usize)> {
    if index >= spec.layers.len() {
        return Err(usage_err!("layer {index} out of range"));
    }
    let (mut y0, mut y1, mut x0, mut x1) = (y, y + 1, x, x + 1);
    for layer in spec.layers[..=index].iter().rev() {
        match layer {
            LayerSpec::Conv { kernel, .. } => {
                y1 += kernel - 1;
                x1 += kernel - 1;
            }
            LayerSpec::MaxPool => {
                (y0, y1, x0, x1) = (2 * y0, 2 * y1, 2 * x0, 2 * x1);
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } => {}
            other => return Err(usage_err!("{} has no spatial receptive field", other.name())),
        }
    }
    Ok((y0, y1, x0, x1))
}

/// Checks, at every ReLU of a guided reconstruction, that the output is
/// nonzero only where the forward mask is on and the incoming signal is
/// positive (the plain rule's support). Returns the first violating site.
pub fn guided_support_violation<S: Scalar>(rec: &Reconstruction<S>) -> Option<usize> {
    rec.sites.iter().find_map(|s| {
        let bad = s
            .output
            .data()
            .iter()
            .zip(s.input.data())
            .zip(&s.forward_mask)
            .any(|((&o, &i), &m)| o != S::zero() && !(m && i > S::zero()));
        bad.then_some(s.layer)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlay {
    Reconstruction,
    Input,
    /// Equal-weight mix of the normalized reconstruction and input.
    Blend,
}

impl Overlay {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reconstruction" => Some(Overlay::Reconstruction),
            "input" => Some(Overlay::Input),
            "blend" => Some(Overlay::Blend),
            _ => None,
        }
    }
}

pub struct GridCell<'a> {
    pub reconstruction: &'a [f64],
    pub input: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub filter: usize,
    pub rank: usize,
    pub sample_id: usize,
    pub value: f64,
    pub position: (usize, usize),
}

pub const GRID_GAP: usize = 2;
const GRID_BACKGROUND: u8 = 255;

/// Maps a cell to `[0, 1]` by its own min and max; constant cells map to
/// the midpoint.
pub fn normalize_cell(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128.0 / 255.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Lays out `rows` of `side × side` cells with a `GRID_GAP` pixel border and
/// gaps; returns the 8-bit image as `(width, height, pixels)`.
pub fn compose_grid(rows: &[Vec<GridCell<'_>>], side: usize, overlay: Overlay) -> Result<(usize, usize, Vec<u8>)> {
    let n_rows = rows.len();
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if n_rows == 0 || n_cols == 0 {
        return Err(usage_err!("grid has no cells"));
    }
    let width = n_cols * side + (n_cols + 1) * GRID_GAP;
    let height = n_rows * side + (n_rows + 1) * GRID_GAP;
    let mut px = vec![GRID_BACKGROUND; width * height];
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if cell.reconstruction.len() != side * side || cell.input.len() != side * side {
                return Err(crate::error::shape_err!("grid cell ({r}, {c}) is not {side}x{side}"));
            }
            let vals = match overlay {
                Overlay::Reconstruction => normalize_cell(cell.reconstruction),
                Overlay::Input => normalize_cell(cell.input),
                Overlay::Blend => normalize_cell(cell.reconstruction)
                    .iter()
                    .zip(normalize_cell(cell.input))
                    .map(|(a, b)| 0.5 * a + 0.5 * b)
                    .collect(),
            };
            let (oy, ox) = (GRID_GAP + r * (side + GRID_GAP), GRID_GAP + c * (side + GRID_GAP));
            for y in 0..side {
                for x in 0..side {
                    px[(oy + y) * width + ox + x] = (vals[y * side + x] * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok((width, height, px))
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| crate::error::shape_err!("pixel buffer does not match {width}x{height}"))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Writes the grid PNG and a JSON sidecar (`<path>.json`) with `entries`.
pub fn render_grid(
    rows: &[Vec<GridCell<'_>>],
    side: usize,
    overlay: Overlay,
    entries: &[GridEntry],
    path: &Path,
) -> Result<()> {
    let (w, h, px) = compose_grid(rows, side, overlay)?;
    write_gray_png(path, w, h, px)?;
    let sidecar = path.with_extension("json");
    let json = serde_json::to_string_pretty(entries).expect("plain data");
    std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

/// Energy-weighted centroid `(row, col)` of a map (squared values).
pub fn energy_centroid(map: &[f64], side: usize) -> Option<(f64, f64)> {
    let (mut e, mut ey, mut ex) = (0.0, 0.0, 0.0);
    for (i, v) in map.iter().enumerate() {
        let w = v * v;
        e += w;
        ey += w * (i / side) as f64;
        ex += w * (i % side) as f64;
    }
    (e > 0.0).then(|| (ey / e, ex / e))
}
