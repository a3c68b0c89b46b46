//! Manifest CSV ingestion.
//!
//! Header (required, in this order): `path,subject_id,label,fau_list`, with
//! optional trailing `fold,role` columns for protocols whose splits are
//! fixed by the dataset authors. `fau_list` is a semicolon-separated list of
//! integers and may be empty. Image paths resolve against the image root.

use std::collections::BTreeSet;
use std::path::Path;

use crate::data::{FoldTag, Role, Sample, IMAGE_SIDE};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_COLUMNS: [&str; 4] = ["path", "subject_id", "label", "fau_list"];

fn row_err(row: usize, reason: impl Into<String>) -> Error {
    Error::Ingestion { row, reason: reason.into() }
}

pub(crate) fn parse_fau_list(field: &str) -> std::result::Result<BTreeSet<u32>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(BTreeSet::new());
    }
    field
        .split(';')
        .map(|tok| tok.trim().parse::<u32>().map_err(|_| format!("malformed fau_list entry {tok:?}")))
        .collect()
}

pub(crate) fn format_fau_list(set: &BTreeSet<u32>) -> String {
    set.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn read_gray(path: &Path) -> std::result::Result<Tensor<f32>, String> {
    let img = image::open(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => return Err(format!("{} is not 8-bit grayscale ({:?})", path.display(), other.color())),
    };
    let (w, h) = gray.dimensions();
    if (w as usize, h as usize) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(format!("{} is {w}x{h}, expected {IMAGE_SIDE}x{IMAGE_SIDE}", path.display()));
    }
    let data = gray.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Tensor::from_vec([1, 1, IMAGE_SIDE, IMAGE_SIDE], data).map_err(|e| e.to_string())
}

/// Loads every manifest row, in file order, as a sample with
/// `sample_id = row index`. Labels must name one of `classes`.
pub fn load_manifest(csv_path: &Path, image_root: &Path, classes: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(csv_path, io),
            other => Error::Format(format!("{}: {other:?}", csv_path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", csv_path.display())))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_folds = match names.as_slice() {
        [a, b, c, d] if [*a, *b, *c, *d] == MANIFEST_COLUMNS => false,
        [a, b, c, d, "fold", "role"] if [*a, *b, *c, *d] == MANIFEST_COLUMNS => true,
        _ => {
            return Err(Error::Format(format!(
                "{}: header must be path,subject_id,label,fau_list[,fold,role], got {}",
                csv_path.display(),
                names.join(",")
            )))
        }
    };

    let mut samples = Vec::new();
    let mut folds = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| row_err(row, e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let label_name = field(2);
        let label = classes
            .iter()
            .position(|c| c == label_name)
            .ok_or_else(|| row_err(row, format!("unknown label {label_name:?}")))?;
        let fau_set = parse_fau_list(field(3)).map_err(|e| row_err(row, e))?;
        let subject_id = field(1).to_string();
        if subject_id.is_empty() {
            return Err(row_err(row, "empty subject_id"));
        }
        let image = read_gray(&image_root.join(field(0))).map_err(|e| row_err(row, e))?;
        if with_folds {
            let fold = field(4)
                .parse::<usize>()
                .map_err(|_| row_err(row, format!("bad fold {:?}", field(4))))?;
            let role = Role::parse(field(5)).ok_or_else(|| row_err(row, format!("bad role {:?}", field(5))))?;
            folds.push(FoldTag { fold, role: Some(role) });
        }
        samples.push(Sample { image, label, fau_set, subject_id, sample_id: row, factors: None });
    }
    Ok(Dataset { samples, classes: classes.to_vec(), folds: with_folds.then_some(folds) })
}

/// Writes an 8-bit binary PGM (P5).
pub(crate) fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let [_, _, h, w] = image.shape();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a manifest for `dataset` whose images live at `paths` (relative to
/// the image root), including fold/role columns when roles are assigned.
pub fn write_manifest(csv_path: &Path, dataset: &Dataset, paths: &[String]) -> Result<()> {
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(csv_path).map_err(io)?;
    let roles = dataset.folds.as_ref().filter(|f| f.iter().all(|t| t.role.is_some()));
    let mut header: Vec<&str> = MANIFEST_COLUMNS.to_vec();
    if roles.is_some() {
        header.extend(["fold", "role"]);
    }
    w.write_record(&header).map_err(io)?;
    for (i, (s, p)) in dataset.samples.iter().zip(paths).enumerate() {
        let mut rec = vec![p.clone(), s.subject_id.clone(), dataset.classes[s.label].clone(), format_fau_list(&s.fau_set)];
        if let Some(tags) = roles {
            rec.push(tags[i].fold.to_string());
            rec.push(tags[i].role.expect("checked").as_str().to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))
}
