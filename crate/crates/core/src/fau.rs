//! Which action units a filter responds to.
//!
//! For filter `i` and action unit `j`, the per-sample maxima of the filter
//! are split by whether `j` is present, histogrammed on a shared range, and
//! compared with `D_KL(Q_ij ‖ R_ij)`. The unit with the largest divergence
//! is the filter's top unit.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Prepared;
use crate::error::{usage_err, Error, Result};
use crate::introspect::{conv_maxima, write_gray_png};
use crate::model::ModelParams;
use crate::tensor::Scalar;

/// Spatial maxima of one filter, aligned with `sample_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub filter: usize,
    pub sample_ids: Vec<usize>,
    pub values: Vec<f64>,
}

/// One record per filter of conv layer `layer`, evaluation mode.
pub fn collect_activations<S: Scalar>(
    params: &ModelParams<S>,
    set: &Prepared<S>,
    layer: usize,
) -> Result<Vec<ActivationRecord>> {
    let table = conv_maxima(params, set, layer)?;
    Ok((0..table.filters)
        .map(|f| ActivationRecord { filter: f, sample_ids: table.sample_ids.clone(), values: table.column(f) })
        .collect())
}

/// Positions whose set contains `j`, and the rest.
pub fn partition_by_fau(fau_sets: &[BTreeSet<u32>], j: u32) -> (Vec<usize>, Vec<usize>) {
    (0..fau_sets.len()).partition(|&i| fau_sets[i].contains(&j))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Smoothed probability masses; all positive, summing to 1.
    pub masses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistConfig {
    pub bins: usize,
    pub min_support: usize,
    /// Added to every bin count before normalizing.
    pub pseudo_count: f64,
}

impl Default for HistConfig {
    fn default() -> Self {
        HistConfig { bins: 32, min_support: 5, pseudo_count: 1.0 }
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((v - lo) / (hi - lo) * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// Smoothed histograms of `values` over positions `s` and `sc`, sharing the
/// range `[0, max]` of the pooled values (`[0, 1]` when all are zero).
/// Returns `None` when either side has fewer than `min_support` samples.
pub fn histogram_pair(values: &[f64], s: &[usize], sc: &[usize], cfg: &HistConfig) -> Result<Option<(Histogram, Histogram)>> {
    if cfg.bins < 2 {
        return Err(usage_err!("histograms need at least 2 bins, got {}", cfg.bins));
    }
    if s.len() < cfg.min_support || sc.len() < cfg.min_support {
        return Ok(None);
    }
    let mut hi = s.iter().chain(sc).map(|&i| values[i]).fold(0.0, f64::max);
    if hi <= 0.0 {
        hi = 1.0;
    }
    let hist = |idx: &[usize]| {
        let mut counts = vec![cfg.pseudo_count; cfg.bins];
        for &i in idx {
            counts[bin_of(values[i], 0.0, hi, cfg.bins)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Histogram { lo: 0.0, hi, masses: counts.iter().map(|c| c / total).collect() }
    };
    Ok(Some((hist(s), hist(sc))))
}

/// `Σ q ln(q / r)` in nats.
pub fn kl_divergence(q: &Histogram, r: &Histogram) -> Result<f64> {
    if q.masses.len() != r.masses.len() || q.lo != r.lo || q.hi != r.hi {
        return Err(usage_err!(
            "histograms differ: {} bins on [{}, {}] vs {} bins on [{}, {}]",
            q.masses.len(),
            q.lo,
            q.hi,
            r.masses.len(),
            r.lo,
            r.hi
        ));
    }
    if q.masses.iter().chain(&r.masses).any(|&m| m <= 0.0) {
        return Err(Error::Domain("divergence needs strictly positive masses".into()));
    }
    Ok(q.masses.iter().zip(&r.masses).map(|(&a, &b)| if a == b { 0.0 } else { a * (a / b).ln() }).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub filter: usize,
    pub fau: u32,
    /// `None` when the pair lacked support.
    pub kl: Option<f64>,
    pub support_s: usize,
    pub support_sc: usize,
    pub is_top: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FauReport {
    pub rows: Vec<KlRow>,
}

impl FauReport {
    /// The top unit of `filter`, if any pair was supported.
    pub fn top(&self, filter: usize) -> Option<&KlRow> {
        self.rows.iter().find(|r| r.filter == filter && r.is_top)
    }

    pub fn filters(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.rows.iter().map(|r| r.filter).collect();
        set.into_iter().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("filter,fau,kl,support_S,support_Sc,is_top\n");
        for r in &self.rows {
            let kl = r.kl.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{},{}", r.filter, r.fau, kl, r.support_s, r.support_sc, r.is_top as u8);
        }
        s
    }

    /// Bar-chart data for one filter: `fau_id,fau_name,kl`.
    pub fn bars_csv(&self, filter: usize, name: impl Fn(u32) -> String) -> String {
        let mut s = String::from("fau_id,fau_name,kl\n");
        for r in self.rows.iter().filter(|r| r.filter == filter) {
            let kl = r.kl.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},\"{}\",{}", r.fau, name(r.fau), kl);
        }
        s
    }
}

/// Runs the split/histogram/divergence steps for every record and every
/// unit in `faus`. Ties for the top unit go to the lower id.
pub fn fau_report(
    records: &[ActivationRecord],
    fau_sets: &[BTreeSet<u32>],
    faus: &[u32],
    cfg: &HistConfig,
) -> Result<FauReport> {
    let mut rows = Vec::new();
    let parts: Vec<(u32, Vec<usize>, Vec<usize>)> = faus
        .iter()
        .map(|&j| {
            let (s, sc) = partition_by_fau(fau_sets, j);
            (j, s, sc)
        })
        .collect();
    for rec in records {
        if rec.values.len() != fau_sets.len() {
            return Err(usage_err!("record of filter {} has {} values for {} samples", rec.filter, rec.values.len(), fau_sets.len()));
        }
        let start = rows.len();
        for (j, s, sc) in &parts {
            let kl = match histogram_pair(&rec.values, s, sc, cfg)? {
                Some((q, r)) => Some(kl_divergence(&q, &r)?),
                None => None,
            };
            rows.push(KlRow { filter: rec.filter, fau: *j, kl, support_s: s.len(), support_sc: sc.len(), is_top: false });
        }
        let mut best: Option<usize> = None;
        for i in start..rows.len() {
            if let Some(v) = rows[i].kl {
                if best.is_none_or(|b| v > rows[b].kl.expect("set")) {
                    best = Some(i);
                }
            }
        }
        if let Some(b) = best {
            rows[b].is_top = true;
        }
    }
    if rows.iter().all(|r| r.kl.is_none()) {
        return Err(usage_err!("no (filter, action unit) pair has at least {} samples on both sides", cfg.min_support));
    }
    Ok(FauReport { rows })
}

/// Filters ordered by the variance across classes of their per-class mean
/// record value, largest first (ties to the lower filter index).
pub fn filter_selectivity_rank(records: &[ActivationRecord], labels: &[usize], n_classes: usize) -> Vec<(usize, f64)> {
    let mut scores: Vec<(usize, f64)> = records
        .iter()
        .map(|rec| {
            let mut sum = vec![0.0; n_classes];
            let mut cnt = vec![0usize; n_classes];
            for (&v, &l) in rec.values.iter().zip(labels) {
                sum[l] += v;
                cnt[l] += 1;
            }
            let means: Vec<f64> = (0..n_classes).filter(|&c| cnt[c] > 0).map(|c| sum[c] / cnt[c] as f64).collect();
            let m = means.iter().sum::<f64>() / means.len().max(1) as f64;
            let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len().max(1) as f64;
            (rec.filter, var)
        })
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
}

// 3×5 glyphs, one row per u8 (low 3 bits, MSB on the left).
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'F' => [7, 4, 6, 4, 4],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'U' => [5, 5, 5, 5, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => [0; 5],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, v: u8) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                self.px[y * self.w + x] = v;
            }
        }
    }

    /// Text at scale 2, top-left corner at `(x, y)`.
    fn text(&mut self, x: usize, y: usize, s: &str, v: u8) {
        for (k, c) in s.chars().enumerate() {
            let g = glyph(c);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        let (px, py) = (x + k * 8 + col * 2, y + row * 2);
                        self.rect(px, py, px + 2, py + 2, v);
                    }
                }
            }
        }
    }
}

/// Bar chart of one filter's divergences: one bar per unit labeled with its
/// id, the top unit drawn darkest, the y axis labeled `KL` with its maximum.
pub fn bar_chart_png(report: &FauReport, filter: usize, path: &Path) -> Result<()> {
    let rows: Vec<&KlRow> = report.rows.iter().filter(|r| r.filter == filter).collect();
    if rows.is_empty() {
        return Err(usage_err!("filter {filter} is not in the report"));
    }
    let (left, bottom, top, bar, gap) = (48, 24, 16, 20, 10);
    let plot_h = 160;
    let w = left + rows.len() * (bar + gap) + gap;
    let h = top + plot_h + bottom;
    let mut c = Canvas { w, h, px: vec![255; w * h] };
    let max = rows.iter().filter_map(|r| r.kl).fold(0.0, f64::max);
    let axis_y = top + plot_h;
    c.rect(left - 2, top, left, axis_y + 1, 0);
    c.rect(left - 2, axis_y, w, axis_y + 2, 0);
    c.text(4, top + plot_h / 2 - 5, "KL", 0);
    c.text(4, top, &format!("{max:.2}"), 0);
    c.text(4, axis_y - 10, "0", 0);
    for (k, r) in rows.iter().enumerate() {
        let x0 = left + gap + k * (bar + gap);
        if let Some(v) = r.kl {
            let bh = if max > 0.0 { ((v / max) * plot_h as f64).round() as usize } else { 0 };
            c.rect(x0, axis_y - bh, x0 + bar, axis_y, if r.is_top { 0 } else { 170 });
        }
        c.text(x0 + 2, axis_y + 6, &format!("{}", r.fau), 0);
    }
    write_gray_png(path, c.w, c.h, c.px)
}

/// Writes `report.csv`, `bars_filter<i>.csv` and `bars_filter<i>.png` for
/// every filter into `dir`.
pub fn write_report(report: &FauReport, dir: &Path, name: impl Fn(u32) -> String) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("report.csv");
    std::fs::write(&p, report.to_csv()).map_err(|e| Error::io(&p, e))?;
    for f in report.filters() {
        let p = dir.join(format!("bars_filter{f}.csv"));
        std::fs::write(&p, report.bars_csv(f, &name)).map_err(|e| Error::io(&p, e))?;
        bar_chart_png(report, f, &dir.join(format!("bars_filter{f}.png")))?;
    }
    Ok(())
}
