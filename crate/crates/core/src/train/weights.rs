//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     b"ZBCNN1\0"
//! version   u32 = 1
//! precision u8  (4 = f32, 8 = f64)
//! count     u32 records
//! record*   kind u8, shape [u32; 4], payload
//! checksum  u64 FNV-1a over every payload byte, in file order
//! ```
//!
//! Record 0 is the input geometry `(1, c, h, w)`. Layer kinds and shapes:
//!
//! | kind | layer          | shape                       | payload        |
//! |------|----------------|-----------------------------|----------------|
//! | 1    | conv           | `(filters, c, k, k)`        | weights        |
//! | 2    | relu           | zeros                       | none           |
//! | 3    | maxpool        | zeros                       | none           |
//! | 4    | quadrantpool   | zeros                       | none           |
//! | 5    | fullyconnected | `(1, has_bias, d, u)`       | weights, bias  |
//! | 6    | dropout        | `(rate in ppm, 0, 0, 0)`    | none           |
//! | 7    | softmax        | zeros                       | none           |

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LayerParams, LayerSpec, ModelParams, ModelSpec, RunMeta};
use crate::tensor::{Precision, Scalar, Tensor};

const MAGIC: &[u8; 7] = b"ZBCNN1\0";
const VERSION: u32 = 1;

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn push_record(out: &mut Vec<u8>, kind: u8, shape: [usize; 4]) -> Result<()> {
    out.push(kind);
    for d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Size(format!("dimension {d} does not fit a weight file")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

/// Serializes `params` to bytes.
pub fn encode_model<S: Scalar>(params: &ModelParams<S>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::PRECISION as u8);
    out.extend_from_slice(&((params.spec.layers.len() + 1) as u32).to_le_bytes());
    let [c, h, w] = params.spec.input;
    push_record(&mut out, 0, [1, c, h, w])?;

    let mut hash = FNV_OFFSET;
    let mut payload = Vec::new();
    for (layer, p) in params.spec.layers.iter().zip(&params.layers) {
        match layer {
            LayerSpec::Conv { .. } => {
                let wt = p.weight.as_ref().expect("validated");
                push_record(&mut out, 1, wt.shape())?;
            }
            LayerSpec::Relu => push_record(&mut out, 2, [0; 4])?,
            LayerSpec::MaxPool => push_record(&mut out, 3, [0; 4])?,
            LayerSpec::QuadrantPool => push_record(&mut out, 4, [0; 4])?,
            LayerSpec::FullyConnected { bias, .. } => {
                let [_, _, d, u] = p.weight.as_ref().expect("validated").shape();
                push_record(&mut out, 5, [1, *bias as usize, d, u])?;
            }
            LayerSpec::Dropout { rate } => push_record(&mut out, 6, [(rate * 1e6).round() as usize, 0, 0, 0])?,
            LayerSpec::Softmax => push_record(&mut out, 7, [0; 4])?,
        }
        payload.clear();
        for t in p.tensors() {
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        hash = fnv1a(&payload, hash);
        out.extend_from_slice(&payload);
    }
    out.extend_from_slice(&hash.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("weight file truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn shape(&mut self) -> Result<[usize; 4]> {
        Ok([self.u32()? as usize, self.u32()? as usize, self.u32()? as usize, self.u32()? as usize])
    }
}

/// Parses a weight file. The precision stored in the file must match `S`.
pub fn decode_model<S: Scalar>(bytes: &[u8]) -> Result<ModelParams<S>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let code = r.u8()?;
    let precision = Precision::from_code(code).ok_or_else(|| Error::Format(format!("unknown precision code {code}")))?;
    if precision != S::PRECISION {
        return Err(Error::Format(format!(
            "weight file holds {}-byte floats but {}-byte floats were requested",
            precision as u8,
            S::PRECISION as u8
        )));
    }
    let count = r.u32()? as usize;
    if count == 0 || r.u8()? != 0 {
        return Err(Error::Format("first record must be the input geometry".into()));
    }
    let [one, c, h, w] = r.shape()?;
    if one != 1 {
        return Err(Error::Format(format!("bad input record batch field {one}")));
    }

    let mut layers = Vec::with_capacity(count - 1);
    let mut params = Vec::with_capacity(count - 1);
    let mut hash = FNV_OFFSET;
    let mut read_tensor = |r: &mut Reader<'_>, shape: [usize; 4]| -> Result<Tensor<S>> {
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format(format!("record shape {shape:?} overflows")))?;
        let width = S::PRECISION as usize;
        let raw = r.take(n.checked_mul(width).ok_or_else(|| Error::Format("payload size overflows".into()))?)?;
        hash = fnv1a(raw, hash);
        Tensor::from_vec(shape, raw.chunks_exact(width).map(S::read_le).collect())
            .map_err(|e| Error::Format(e.to_string()))
    };
    for i in 1..count {
        let kind = r.u8()?;
        let shape = r.shape()?;
        let (layer, p) = match kind {
            1 => {
                let [f, _, k, k2] = shape;
                if k != k2 {
                    return Err(Error::Format(format!("record {i}: non-square kernel {shape:?}")));
                }
                let wt = read_tensor(&mut r, shape)?;
                (LayerSpec::Conv { filters: f, kernel: k }, LayerParams { weight: Some(wt), bias: None })
            }
            2 => (LayerSpec::Relu, LayerParams::empty()),
            3 => (LayerSpec::MaxPool, LayerParams::empty()),
            4 => (LayerSpec::QuadrantPool, LayerParams::empty()),
            5 => {
                let [_, has_bias, d, u] = shape;
                if has_bias > 1 {
                    return Err(Error::Format(format!("record {i}: bias flag {has_bias}")));
                }
                let wt = read_tensor(&mut r, [1, 1, d, u])?;
                let bias = if has_bias == 1 { Some(read_tensor(&mut r, [1, 1, 1, u])?) } else { None };
                (LayerSpec::FullyConnected { units: u, bias: has_bias == 1 }, LayerParams { weight: Some(wt), bias })
            }
            6 => (LayerSpec::Dropout { rate: shape[0] as f64 / 1e6 }, LayerParams::empty()),
            7 => (LayerSpec::Softmax, LayerParams::empty()),
            other => return Err(Error::Format(format!("record {i}: unknown layer kind {other}"))),
        };
        layers.push(layer);
        params.push(p);
    }
    let stored = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    if stored != hash {
        return Err(Error::Format(format!("checksum mismatch: file says {stored:016x}, payload hashes to {hash:016x}")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
    }
    let spec = ModelSpec { input: [c, h, w], layers };
    ModelParams::new(spec, params)
        .map(|mut m| {
            m.meta = RunMeta::default();
            m
        })
        .map_err(|e| Error::Format(format!("inconsistent layer records: {e}")))
}

pub fn save_model<S: Scalar>(params: &ModelParams<S>, path: &Path) -> Result<()> {
    let bytes = encode_model(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Loads a weight file and checks its architecture against `expected`.
pub fn load_model_as<S: Scalar>(path: &Path, expected: &ModelSpec) -> Result<ModelParams<S>> {
    let m = load_model::<S>(path)?;
    if &m.spec != expected {
        return Err(Error::Format(format!("{}: architecture differs from the configured model", path.display())));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::train::init::{init_params, InitConfig};

    fn small() -> ModelParams<f32> {
        let spec = ModelSpec::with_widths([1, 24, 24], [3, 4, 5], 3, 6, 4, 0.5);
        init_params(&spec, &InitConfig::default(), &mut Rng::new(9)).unwrap().0
    }

    #[test]
    fn fnv_reference() {
        assert_eq!(fnv1a(b"", FNV_OFFSET), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a", FNV_OFFSET), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn roundtrip_bit_exact() {
        let m = small();
        let back: ModelParams<f32> = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert!(back.bit_eq(&m));
        assert_eq!(back.spec, m.spec);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_model(&small()).unwrap();
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 30;
        flipped[mid] ^= 0x40;
        assert!(matches!(decode_model::<f32>(&flipped), Err(Error::Format(m)) if m.contains("checksum")));
        assert!(matches!(decode_model::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_model::<f32>(&magic), Err(Error::Format(_))));
        assert!(matches!(decode_model::<f64>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn full_size_file_size() {
        let spec = ModelSpec::standard(8);
        let p = spec.parameter_count().unwrap();
        let m: ModelParams<f32> = init_params(&spec, &InitConfig::default(), &mut Rng::new(0)).unwrap().0;
        let bytes = encode_model(&m).unwrap();
        assert_eq!(bytes.len(), 16 + 17 * (spec.layers.len() + 1) + 4 * p + 8);
    }
}
