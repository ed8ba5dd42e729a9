//! Image files: 8-bit PNG for viewing and the lossless `EOTIMG01` format.
//!
//! `EOTIMG01` layout: the 8-byte magic, little-endian `u32` height, width
//! and channel count, the pixels as little-endian `f64` in row-major HWC
//! order, and a little-endian `u32` CRC-32 of the pixel bytes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const IMAGE_MAGIC: &[u8; 8] = b"EOTIMG01";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn hwc<S: Real>(image: &Tensor<S>) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(Error::Shape(format!("images are [H, W, C], got {s:?}"))),
    }
}

pub fn encode_raw<S: Real>(image: &Tensor<S>) -> Result<Vec<u8>> {
    let (h, w, c) = hwc(image)?;
    let mut payload = Vec::with_capacity(image.len() * 8);
    for &v in image.data() {
        v.to_f64_lossy().write_le(&mut payload);
    }
    let mut out = Vec::with_capacity(24 + payload.len());
    out.extend_from_slice(IMAGE_MAGIC);
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode_raw<S: Real>(bytes: &[u8], path: &Path) -> Result<Tensor<S>> {
    if bytes.len() < 24 || &bytes[..8] != IMAGE_MAGIC {
        return Err(format_err(path, "missing EOTIMG01 magic"));
    }
    let dim = |k: usize| {
        u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().expect("4 bytes")) as usize
    };
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| format_err(path, "dimensions overflow"))?;
    if bytes.len() != 20 + n * 8 + 4 {
        return Err(format_err(
            path,
            format!("expected {} bytes for {h}x{w}x{c}", 24 + n * 8),
        ));
    }
    let payload = &bytes[20..20 + n * 8];
    let stored = u32::from_le_bytes(bytes[20 + n * 8..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let data = payload
        .chunks_exact(8)
        .map(|b| S::from_f64_lossy(f64::read_le(b)))
        .collect();
    Ok(Tensor::new([h, w, c], data)?)
}

pub fn write_raw<S: Real>(image: &Tensor<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_raw(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_raw<S: Real>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

/// Writes a 1- or 3-channel image as 8-bit PNG (values clamped to [0,1]
/// and rounded).
pub fn write_png<S: Real>(image: &Tensor<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = hwc(image)?;
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        got => return Err(Error::ChannelCount { expected: 3, got }),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let png_err = |e: png::EncodingError| format_err(path, e.to_string());
    enc.write_header()
        .map_err(png_err)?
        .write_image_data(&bytes)
        .map_err(png_err)
}

/// Reads an 8-bit grayscale or RGB PNG (alpha is dropped) into [0,1].
pub fn read_png<S: Real>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| format_err(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (src, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => {
            return Err(format_err(
                path,
                format!("unsupported colour type {other:?}"),
            ))
        }
    };
    let data = buf[..info.buffer_size()]
        .chunks_exact(src)
        .flat_map(|px| {
            px[..keep]
                .iter()
                .map(|&b| S::from_f64_lossy(b as f64 / 255.0))
        })
        .collect();
    Ok(Tensor::new([h, w, keep], data)?)
}

/// Reads `.png` files as PNG and anything else as `EOTIMG01`.
pub fn read_image<S: Real>(path: impl AsRef<Path>) -> Result<Tensor<S>> {
    let path = path.as_ref();
    if is_png(path) {
        read_png(path)
    } else {
        read_raw(path)
    }
}

/// Writes `.png` files as PNG and anything else as `EOTIMG01`.
pub fn write_image<S: Real>(image: &Tensor<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_png(path) {
        write_png(image, path)
    } else {
        write_raw(image, path)
    }
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}
