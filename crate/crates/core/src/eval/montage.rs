use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::imageio::write_png;
use crate::scalar::Real;

/// One sampled view with its predicted class and that class's probability.
#[derive(Clone, Debug)]
pub struct MontageTile<S> {
    pub image: Tensor<S>,
    pub predicted: usize,
    pub confidence: f64,
    /// Draws the caption in red, e.g. when the prediction is the target.
    pub highlight: bool,
}

/// 3×5 bitmap glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        _ => [0; 5],
    }
}

/// Grid of tiles, each scaled up by `zoom` with a caption strip
/// `"<class> <percent>%"` underneath. Grayscale tiles are drawn as RGB.
pub fn write_montage<S: Real>(
    tiles: &[MontageTile<S>],
    columns: usize,
    zoom: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let first = tiles.first().ok_or(Error::Empty("montage"))?;
    let (th, tw) = (first.image.shape()[0], first.image.shape()[1]);
    if tiles.iter().any(|t| t.image.shape()[..2] != [th, tw]) {
        return Err(Error::Shape("montage tiles differ in size".into()));
    }
    let columns = columns.clamp(1, tiles.len());
    let rows = tiles.len().div_ceil(columns);
    let (zoom, pad) = (zoom.max(1), 2);
    let caption = 5 * 2 + 2 * pad;
    let (cell_h, cell_w) = (th * zoom + caption + pad, (tw * zoom).max(4 * 8 * 2) + pad);
    let (h, w) = (rows * cell_h + pad, columns * cell_w + pad);
    let mut canvas = vec![1.0f64; h * w * 3];
    let mut put = |r: usize, c: usize, rgb: [f64; 3]| {
        if r < h && c < w {
            canvas[(r * w + c) * 3..][..3].copy_from_slice(&rgb);
        }
    };
    for (i, tile) in tiles.iter().enumerate() {
        let (oy, ox) = ((i / columns) * cell_h + pad, (i % columns) * cell_w + pad);
        let ch = tile.image.shape()[2];
        for r in 0..th * zoom {
            for c in 0..tw * zoom {
                let px: [f64; 3] = std::array::from_fn(|k| {
                    let k = if ch == 3 { k } else { 0 };
                    tile.image.data()[tile.image.hwc_index(r / zoom, c / zoom, k)].to_f64_lossy()
                });
                put(oy + r, ox + c, px);
            }
        }
        let text = format!("{} {:.0}%", tile.predicted, tile.confidence * 100.0);
        let ink = if tile.highlight {
            [0.85, 0.0, 0.0]
        } else {
            [0.0; 3]
        };
        let ty = oy + th * zoom + pad;
        for (k, ch) in text.chars().enumerate() {
            for (gr, bits) in glyph(ch).iter().enumerate() {
                for gc in 0..3 {
                    if bits >> (2 - gc) & 1 == 1 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                put(ty + gr * 2 + dy, ox + k * 8 + gc * 2 + dx, ink);
                            }
                        }
                    }
                }
            }
        }
    }
    write_png(&Tensor::new([h, w, 3], canvas)?, path)
}
