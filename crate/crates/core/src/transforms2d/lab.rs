//! sRGB (D65, 2° observer) → CIELAB.

use std::sync::Arc;

use crate::diffmath::{GraphBuilder, NodeId, Tensor, UnaryFn};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear sRGB → XYZ, rows X, Y, Z.
const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white: XYZ of linear (1, 1, 1), so white maps to L = 100
/// with zero chroma.
fn white() -> [f64; 3] {
    SRGB_TO_XYZ.map(|row| row[0] + row[1] + row[2])
}

/// Appends the LAB conversion of a `[H, W, 3]` node.
pub fn lab_node<S: Real>(g: &mut GraphBuilder<S>, rgb: NodeId) -> Result<NodeId> {
    let shape = g.shape(rgb).to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: shape.last().copied().unwrap_or(0),
        });
    }
    let n = shape[0] * shape[1];
    let w = white();
    let rows = g.reshape(rgb, [n, 3])?;
    let linear = g.unary(rows, UnaryFn::SrgbToLinear);
    // [n,3] · Mᵀ, columns then divided by the white point.
    let mt = Tensor::from_fn([3, 3], |i| {
        let (p, j) = (i / 3, i % 3);
        S::from_f64_lossy(SRGB_TO_XYZ[j][p] / w[j])
    });
    let mt = g.constant(Arc::new(mt));
    let xyz = g.matmul(linear, mt)?;
    let f = g.unary(xyz, UnaryFn::LabF);
    // (fX, fY, fZ) → (116 fY, 500 (fX − fY), 200 (fY − fZ))
    let mix = Tensor::from_f64(
        [3, 3],
        &[0.0, 500.0, 0.0, 116.0, -500.0, 200.0, 0.0, 0.0, -200.0],
    )?;
    let mix = g.constant(Arc::new(mix));
    let lab = g.matmul(f, mix)?;
    let shift = Tensor::from_fn([n, 3], |i| {
        if i % 3 == 0 {
            S::from_f64_lossy(-16.0)
        } else {
            S::zero()
        }
    });
    let shift = g.constant(Arc::new(shift));
    let lab = g.add(lab, shift)?;
    Ok(g.reshape(lab, shape)?)
}

/// LAB image of an sRGB image with values in `[0, 1]`.
pub fn rgb_to_lab<S: Real>(image: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = GraphBuilder::new();
    let x = g.input("rgb", image.shape().to_vec());
    let lab = lab_node(&mut g, x)?;
    g.output("lab", lab);
    Ok(g.build().evaluate_output(&[("rgb", image)], "lab")?)
}

fn lab_f(t: f64) -> f64 {
    UnaryFn::LabF.apply(t)
}

/// Scalar conversion of one pixel, sharing the constants of [`lab_node`].
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| UnaryFn::SrgbToLinear.apply(c));
    let w = white();
    let xyz: [f64; 3] =
        std::array::from_fn(|j| (0..3).map(|p| SRGB_TO_XYZ[j][p] * lin[p]).sum::<f64>() / w[j]);
    let f = xyz.map(lab_f);
    [
        116.0 * f[1] - 16.0,
        500.0 * (f[0] - f[1]),
        200.0 * (f[1] - f[2]),
    ]
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r: usize, c: usize| {
        let (r0, r1) = ((r + 1) % 3, (r + 2) % 3);
        let (c0, c1) = ((c + 1) % 3, (c + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    std::array::from_fn(|i| std::array::from_fn(|j| cof(j, i) / det))
}

/// Inverse of [`rgb_to_lab_pixel`] for in-gamut colours.
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    const DELTA: f64 = 6.0 / 29.0;
    let finv = |f: f64| {
        if f > DELTA {
            f * f * f
        } else {
            3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
        }
    };
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white();
    let xyz = [finv(fx) * w[0], finv(fy) * w[1], finv(fz) * w[2]];
    let inv = invert3(SRGB_TO_XYZ);
    let lin: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| inv[i][j] * xyz[j]).sum());
    lin.map(|l| {
        if l <= 0.04045 / 12.92 {
            l * 12.92
        } else {
            1.055 * l.powf(1.0 / 2.4) - 0.055
        }
    })
}
