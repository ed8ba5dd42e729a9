use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::Rng;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;

/// Images (each `[H, W, C]` in [0,1]) with integer labels in `[0, class_count)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<S> {
    images: Vec<Tensor<S>>,
    labels: Vec<usize>,
    class_count: usize,
}

impl<S: Real> LabeledDataset<S> {
    pub fn new(images: Vec<Tensor<S>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Idx(format!(
                "count mismatch: {} images, {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidClass {
                class: bad,
                count: class_count,
            });
        }
        if let Some(first) = images.first() {
            if first.shape().len() != 3 {
                return Err(Error::Shape(format!(
                    "images must be [H, W, C], got {:?}",
                    first.shape()
                )));
            }
            if images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::Shape("images differ in shape".into()));
            }
        }
        let (zero, one) = (S::zero(), S::one());
        if images
            .iter()
            .any(|im| im.data().iter().any(|&v| !(v >= zero && v <= one)))
        {
            return Err(Error::Shape("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<S>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `[H, W, C]` of every image, or `None` when empty.
    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.images.first().map(|im| {
            let s = im.shape();
            [s[0], s[1], s[2]]
        })
    }

    pub fn get(&self, i: usize) -> (&Tensor<S>, usize) {
        (&self.images[i], self.labels[i])
    }

    /// First `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Splits off the last `fraction` of examples as a second dataset.
    pub fn split(&self, fraction: f64) -> (Self, Self) {
        let cut = self.len() - (self.len() as f64 * fraction).round() as usize;
        let part = |r: std::ops::Range<usize>| Self {
            images: self.images[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            class_count: self.class_count,
        };
        (part(0..cut), part(cut..self.len()))
    }
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("bad gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx(format!("truncated {what} header")))
}

/// Parses an IDX image file (magic `0x00000803`, dims N×rows×cols).
/// Returns `(count, rows, cols, pixel bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Idx(format!(
            "bad magic {magic:#010x} for an image file (expected {IMAGE_MAGIC:#010x})"
        )));
    }
    let n = be_u32(bytes, 4, "image")? as usize;
    let rows = be_u32(bytes, 8, "image")? as usize;
    let cols = be_u32(bytes, 12, "image")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Idx(format!(
            "truncated image data: {} of {need} bytes",
            body.len()
        )));
    }
    Ok((n, rows, cols, &body[..need]))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Idx(format!(
            "bad magic {magic:#010x} for a label file (expected {LABEL_MAGIC:#010x})"
        )));
    }
    let n = be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Idx(format!(
            "truncated label data: {} of {n} bytes",
            body.len()
        )));
    }
    Ok(&body[..n])
}

/// Reads an IDX image/label pair (optionally gzip-compressed) into a
/// `N × rows × cols × 1` dataset with pixels divided by 255. The class
/// count is one more than the largest label.
pub fn ingest_idx<S: Real>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset<S>> {
    let image_bytes = read_maybe_gz(images_path.as_ref())?;
    let label_bytes = read_maybe_gz(labels_path.as_ref())?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != n {
        return Err(Error::Idx(format!(
            "count mismatch: {n} images, {} labels",
            labels.len()
        )));
    }
    let scale = S::from_f64_lossy(255.0);
    let images = pixels
        .chunks_exact(rows * cols)
        .map(|px| {
            Tensor::new(
                [rows, cols, 1],
                px.iter()
                    .map(|&b| S::from_f64_lossy(b as f64) / scale)
                    .collect(),
            )
            .expect("chunk length matches shape")
        })
        .collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(images, labels, classes)
}

pub const SHAPE_CLASSES: [&str; 3] = ["red disc", "green square", "blue triangle"];
pub const SHAPE_SIZE: usize = 32;

/// One procedural color-shape image of `class` on a random background.
pub fn color_shape_image<S: Real>(class: usize, rng: &mut StreamRng) -> Tensor<S> {
    let n = SHAPE_SIZE as f64;
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..1.0));
    let mut fg = [0.0; 3];
    for (c, v) in fg.iter_mut().enumerate() {
        *v = if c == class % 3 {
            rng.random_range(0.7..1.0)
        } else {
            rng.random_range(0.0..0.3)
        };
    }
    let radius = rng.random_range(0.22..0.38) * n;
    let cx = n / 2.0 + rng.random_range(-0.12..0.12) * n;
    let cy = n / 2.0 + rng.random_range(-0.12..0.12) * n;
    let angle: f64 = rng.random_range(-0.3..0.3);
    let (sin, cos) = angle.sin_cos();
    let inside = |x: f64, y: f64| -> bool {
        let (dx, dy) = (x - cx, y - cy);
        let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
        match class {
            0 => u * u + v * v <= radius * radius,
            1 => u.abs() <= radius * 0.85 && v.abs() <= radius * 0.85,
            _ => {
                // Upward triangle inscribed in the circle of `radius`.
                let top = -radius;
                let base = radius * 0.5;
                let t = (v - top) / (base - top);
                (0.0..=1.0).contains(&t) && u.abs() <= t * radius * 0.87
            }
        }
    };
    let mut data = Vec::with_capacity(SHAPE_SIZE * SHAPE_SIZE * 3);
    for r in 0..SHAPE_SIZE {
        for c in 0..SHAPE_SIZE {
            // 2×2 supersampling softens the edges.
            let mut cover = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                if inside(c as f64 + ox, r as f64 + oy) {
                    cover += 0.25;
                }
            }
            for ch in 0..3 {
                let v = cover * fg[ch] + (1.0 - cover) * bg[ch];
                data.push(S::from_f64_lossy(v.clamp(0.0, 1.0)));
            }
        }
    }
    Tensor::new([SHAPE_SIZE, SHAPE_SIZE, 3], data).expect("shape matches")
}

/// `n` procedural 32×32×3 images with balanced labels: 0 red disc,
/// 1 green square, 2 blue triangle.
pub fn color_shapes<S: Real>(n: usize, rng: &mut StreamRng) -> LabeledDataset<S> {
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let images = labels.iter().map(|&l| color_shape_image(l, rng)).collect();
    LabeledDataset::new(images, labels, 3).expect("generator output is valid")
}
