//! Model files.
//!
//! Layout: the 8 bytes `EOTMDL01`; a little-endian `u32` header length; a
//! UTF-8 header of `key=value` lines; the parameters as little-endian
//! floats, tensor after tensor in row-major order; a little-endian `u32`
//! CRC-32 of the parameter bytes.
//!
//! Header keys:
//!
//! ```text
//! version=1
//! dtype=f64                       # or f32
//! class_count=10
//! input_shape=40,40,1
//! layers=conv5x8,relu,maxpool2,dense10,logsoftmax
//! param_shapes=5x5x1x8;8;...      # informational; must match the layers
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::model::{parameter_shapes, Layer, Model};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MODEL_MAGIC: &[u8; 8] = b"EOTMDL01";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Encodes a model into the file layout above.
pub fn write_model<S: Real>(model: &Model<S>) -> Vec<u8> {
    let layers = model
        .layers
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>();
    let shapes = model
        .params
        .iter()
        .map(|p| dims(p.shape()))
        .collect::<Vec<_>>();
    let [h, w, c] = model.input_shape;
    let header = format!(
        "version={MODEL_FORMAT_VERSION}\ndtype={}\nclass_count={}\ninput_shape={h},{w},{c}\nlayers={}\nparam_shapes={}\n",
        S::DTYPE,
        model.class_count,
        layers.join(","),
        shapes.join(";"),
    );
    let mut payload = Vec::with_capacity(model.parameter_count() * S::BYTES);
    for p in &model.params {
        for &v in p.data() {
            v.write_le(&mut payload);
        }
    }
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFile(msg.into())
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<Vec<T>> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| bad(format!("bad {what} `{s}`")))
        })
        .collect()
}

fn decode<T: Real, S: Real>(payload: &[u8]) -> Vec<S> {
    payload
        .chunks_exact(T::BYTES)
        .map(|b| S::from_f64_lossy(T::read_le(b).to_f64_lossy()))
        .collect()
}

/// Decodes a model file. Files stored with another float width are
/// converted on load.
pub fn read_model<S: Real>(bytes: &[u8]) -> Result<Model<S>> {
    if bytes.len() < 12 || &bytes[..8] != MODEL_MAGIC {
        return Err(bad("missing EOTMDL01 magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header =
        std::str::from_utf8(&bytes[12..header_end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut keys = BTreeMap::new();
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
        keys.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        keys.get(k)
            .copied()
            .ok_or_else(|| bad(format!("header lacks `{k}`")))
    };

    let version: u32 = get("version")?.parse().map_err(|_| bad("bad version"))?;
    if version > MODEL_FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let dtype = get("dtype")?;
    let width = match dtype {
        "f64" => 8,
        "f32" => 4,
        other => return Err(bad(format!("unknown dtype `{other}`"))),
    };
    let class_count: usize = get("class_count")?
        .parse()
        .map_err(|_| bad("bad class_count"))?;
    let shape: Vec<usize> = parse_list(get("input_shape")?, ',', "input_shape")?;
    let input_shape: [usize; 3] = shape
        .try_into()
        .map_err(|_| bad("input_shape must have three entries"))?;
    let layers: Vec<Layer> = parse_list(get("layers")?, ',', "layers")?;
    let shapes = parameter_shapes(&layers, input_shape, class_count)?;

    let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let payload_end = header_end + count * width;
    if bytes.len() != payload_end + 4 {
        return Err(bad(format!(
            "expected {} payload bytes plus checksum, found {}",
            count * width,
            bytes.len().saturating_sub(header_end)
        )));
    }
    let payload = &bytes[header_end..payload_end];
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let values: Vec<S> = if width == 8 {
        decode::<f64, S>(payload)
    } else {
        decode::<f32, S>(payload)
    };
    let mut rest = values.as_slice();
    let mut params = Vec::with_capacity(shapes.len());
    for s in shapes {
        let n: usize = s.iter().product();
        params.push(Tensor::new(s, rest[..n].to_vec())?);
        rest = &rest[n..];
    }
    Model::from_parts(layers, input_shape, class_count, params)
}

pub fn save_model<S: Real>(model: &Model<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<S: Real>(path: impl AsRef<Path>) -> Result<Model<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
