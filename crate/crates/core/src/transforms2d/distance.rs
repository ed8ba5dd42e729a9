use crate::diffmath::{GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transform::Transform;

use super::lab::{lab_node, rgb_to_lab};

/// Appends the perceptual distance between two images of equal shape:
/// the LAB ℓ₂ norm for 3-channel images, the plain intensity ℓ₂ norm for
/// single-channel ones.
pub fn distance_node<S: Real>(g: &mut GraphBuilder<S>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let shape = g.shape(a).to_vec();
    if shape != g.shape(b) {
        return Err(Error::Shape(format!(
            "distance between {shape:?} and {:?}",
            g.shape(b)
        )));
    }
    let diff = match shape.last() {
        Some(3) => {
            let la = lab_node(g, a)?;
            let lb = lab_node(g, b)?;
            g.sub(la, lb)?
        }
        Some(1) => g.sub(a, b)?,
        other => {
            return Err(Error::ChannelCount {
                expected: 3,
                got: other.copied().unwrap_or(0),
            })
        }
    };
    Ok(g.l2_norm(diff))
}

fn l2<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "distance between {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// ‖LAB(a) − LAB(b)‖₂ over all pixels and channels.
pub fn lab_distance<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "distance between {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    l2(&rgb_to_lab(a)?, &rgb_to_lab(b)?)
}

fn pixel_count<S: Real>(a: &Tensor<S>) -> f64 {
    let s = a.shape();
    if s.len() == 3 {
        (s[0] * s[1]) as f64
    } else {
        a.len() as f64
    }
}

/// [`lab_distance`] divided by the number of pixels.
pub fn lab_distance_per_pixel<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    Ok(lab_distance(a, b)? / pixel_count(a))
}

/// LAB distance for colour images, intensity ℓ₂ for grayscale ones.
pub fn perceptual_distance<S: Real>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    match a.shape().last() {
        Some(1) => l2(a, b),
        _ => lab_distance(a, b),
    }
}

/// Mean over `transforms` of the perceptual distance between `t(x_adv)` and
/// `t(x)`. Each transform carries its own noise seed, so noise is identical
/// on both sides.
pub fn expected_lab_distance<S: Real, T: Transform<S>>(
    x_adv: &Tensor<S>,
    x: &Tensor<S>,
    transforms: &[T],
) -> Result<f64> {
    if transforms.is_empty() {
        return Err(Error::Empty("transform list"));
    }
    let mut total = 0.0;
    for t in transforms {
        total += perceptual_distance(&t.apply(x_adv)?, &t.apply(x)?)?;
    }
    Ok(total / transforms.len() as f64)
}
