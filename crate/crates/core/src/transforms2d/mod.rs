//! The 2D transformation distribution: scale, rotation about the image
//! centre, translation onto a canvas, additive brightness and Gaussian noise,
//! followed by a clamp to `[0, 1]`.
//!
//! Composition order is geometric (scale → rotate → translate, as one
//! bilinear inverse warp) then brightness then noise then clamp. Canvas
//! pixels that fall outside the warped image read a mid-gray background.

mod distance;
mod lab;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::diffmath::{GraphBuilder, NodeId, SampleGrid, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::transform::{gaussian_noise, Interval, Transform, TransformSampler};

pub use distance::{
    distance_node, expected_lab_distance, lab_distance, lab_distance_per_pixel, perceptual_distance,
};
pub use lab::{lab_node, lab_to_rgb_pixel, rgb_to_lab, rgb_to_lab_pixel};

/// Fill value for canvas pixels not covered by the warped image.
pub const DEFAULT_BACKGROUND: f64 = 0.5;

/// Where the transformed image may be placed on the canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Translation {
    /// Any offset that keeps the scaled, rotated image's bounding box inside
    /// the canvas (centred when it cannot fit).
    AnyInBounds,
    /// Explicit pixel offset ranges from the centred position.
    Pixels { x: Interval, y: Interval },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dist2DConfig {
    pub scale: Interval,
    pub rotation_deg: Interval,
    /// Additive lighten/darken.
    pub brightness: Interval,
    pub noise_stdev: Interval,
    pub translation: Translation,
    /// Output canvas `(height, width)`.
    pub canvas: (usize, usize),
    pub background: f64,
}

impl Dist2DConfig {
    /// The transformation ranges used for the robust 2D examples, on the given
    /// canvas.
    pub fn standard(canvas: (usize, usize)) -> Self {
        Self {
            scale: Interval::new(0.9, 1.4),
            rotation_deg: Interval::new(-22.5, 22.5),
            brightness: Interval::new(-0.05, 0.05),
            noise_stdev: Interval::new(0.0, 0.1),
            translation: Translation::AnyInBounds,
            canvas,
            background: DEFAULT_BACKGROUND,
        }
    }

    /// A distribution containing only the centred, unscaled, noiseless view.
    pub fn identity(canvas: (usize, usize)) -> Self {
        Self {
            scale: Interval::point(1.0),
            rotation_deg: Interval::point(0.0),
            brightness: Interval::point(0.0),
            noise_stdev: Interval::point(0.0),
            translation: Translation::Pixels {
                x: Interval::point(0.0),
                y: Interval::point(0.0),
            },
            canvas,
            background: DEFAULT_BACKGROUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate("scale")?;
        self.rotation_deg.validate("rotation_deg")?;
        self.brightness.validate("lighten_darken")?;
        self.noise_stdev.validate("gaussian_noise_stdev")?;
        if let Translation::Pixels { x, y } = &self.translation {
            x.validate("translation.x")?;
            y.validate("translation.y")?;
        }
        if self.scale.min <= 0.0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.noise_stdev.min < 0.0 {
            return Err(Error::Config(
                "gaussian_noise_stdev must be non-negative".into(),
            ));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::Config("canvas must be non-empty".into()));
        }
        Ok(())
    }
}

/// One concrete 2D transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformParams2D {
    pub scale: f64,
    /// Counter-clockwise as displayed, in radians.
    pub rotation: f64,
    pub brightness: f64,
    pub noise_seed: u64,
    pub noise_stdev: f64,
    /// Offset `(dx, dy)` in canvas pixels from the centred placement; `dy`
    /// grows downwards.
    pub translation: (f64, f64),
}

impl TransformParams2D {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            brightness: 0.0,
            noise_seed: 0,
            noise_stdev: 0.0,
            translation: (0.0, 0.0),
        }
    }
}

/// Half extents `(half_height, half_width)` of the bounding box of an
/// `h × w` image after scaling and rotation.
fn rotated_half_extents(h: usize, w: usize, scale: f64, rotation: f64) -> (f64, f64) {
    let (s, c) = rotation.sin_cos();
    let (hh, hw) = (h as f64 / 2.0, w as f64 / 2.0);
    (
        scale * (hw * s.abs() + hh * c.abs()),
        scale * (hw * c.abs() + hh * s.abs()),
    )
}

/// Draws one transformation. Draw order: scale, rotation, brightness, noise
/// stdev, noise seed, translation x, translation y.
pub fn sample_params_2d(
    cfg: &Dist2DConfig,
    image: (usize, usize),
    rng: &mut StreamRng,
) -> TransformParams2D {
    let scale = cfg.scale.sample(rng);
    let rotation = cfg.rotation_deg.sample(rng) * PI / 180.0;
    let brightness = cfg.brightness.sample(rng);
    let noise_stdev = cfg.noise_stdev.sample(rng);
    let noise_seed: u64 = rng.random();
    let translation = match cfg.translation {
        Translation::Pixels { x, y } => (x.sample(rng), y.sample(rng)),
        Translation::AnyInBounds => {
            let (hh, hw) = rotated_half_extents(image.0, image.1, scale, rotation);
            let slack_x = (cfg.canvas.1 as f64 / 2.0 - hw).max(0.0);
            let slack_y = (cfg.canvas.0 as f64 / 2.0 - hh).max(0.0);
            (
                Interval::new(-slack_x, slack_x).sample(rng),
                Interval::new(-slack_y, slack_y).sample(rng),
            )
        }
    };
    TransformParams2D {
        scale,
        rotation,
        brightness,
        noise_seed,
        noise_stdev,
        translation,
    }
}

/// Inverse-mapped sampling positions: canvas pixel → source pixel.
fn warp_grid<S: Real>(
    p: &TransformParams2D,
    image: (usize, usize),
    canvas: (usize, usize),
    fill: f64,
) -> SampleGrid<S> {
    let (sin, cos) = p.rotation.sin_cos();
    let (ccy, ccx) = ((canvas.0 as f64 - 1.0) / 2.0, (canvas.1 as f64 - 1.0) / 2.0);
    let (icy, icx) = ((image.0 as f64 - 1.0) / 2.0, (image.1 as f64 - 1.0) / 2.0);
    let (tx, ty) = p.translation;
    let mut coords = Vec::with_capacity(canvas.0 * canvas.1);
    for r in 0..canvas.0 {
        for c in 0..canvas.1 {
            let qx = c as f64 - ccx - tx;
            let qy = r as f64 - ccy - ty;
            let sx = (cos * qx - sin * qy) / p.scale + icx;
            let sy = (sin * qx + cos * qy) / p.scale + icy;
            coords.push((S::from_f64_lossy(sy), S::from_f64_lossy(sx)));
        }
    }
    SampleGrid {
        height: canvas.0,
        width: canvas.1,
        coords,
        fill: S::from_f64_lossy(fill),
    }
}

/// A sampled transformation bound to its canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform2D {
    pub params: TransformParams2D,
    pub canvas: (usize, usize),
    pub background: f64,
}

impl Transform2D {
    pub fn new(params: TransformParams2D, canvas: (usize, usize)) -> Self {
        Self {
            params,
            canvas,
            background: DEFAULT_BACKGROUND,
        }
    }
}

impl<S: Real> Transform<S> for Transform2D {
    fn output_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        vec![self.canvas.0, self.canvas.1, input_shape[2]]
    }

    fn append(&self, g: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId> {
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape(format!(
                "2D transform expects [H, W, C], got {shape:?}"
            )));
        }
        let image = (shape[0], shape[1]);
        let p = &self.params;
        let fits = |n: usize, m: usize| p.scale * n as f64 <= m as f64 + 1e-9;
        if !fits(image.0, self.canvas.0) || !fits(image.1, self.canvas.1) {
            return Err(Error::CanvasTooSmall {
                canvas: self.canvas,
                image,
                scale: p.scale,
            });
        }
        let grid = warp_grid::<S>(p, image, self.canvas, self.background);
        let mut x = g.bilinear_sample(input, Arc::new(grid))?;
        if p.brightness != 0.0 {
            x = g.offset(x, S::from_f64_lossy(p.brightness));
        }
        if p.noise_stdev > 0.0 {
            let out_shape = [self.canvas.0, self.canvas.1, shape[2]];
            let noise = g.constant(gaussian_noise::<S>(p.noise_seed, &out_shape, p.noise_stdev));
            x = g.add(x, noise)?;
        }
        Ok(g.clamp(x, S::zero(), S::one()))
    }
}

/// `t(image)` on a canvas of size `canvas`.
pub fn apply_transform_2d<S: Real>(
    image: &Tensor<S>,
    params: &TransformParams2D,
    canvas: (usize, usize),
) -> Result<Tensor<S>> {
    Transform2D::new(params.clone(), canvas).apply(image)
}

/// Samples [`Transform2D`]s for images of a fixed size.
#[derive(Clone, Debug)]
pub struct Dist2D {
    pub config: Dist2DConfig,
    pub image: (usize, usize),
}

impl Dist2D {
    pub fn new(config: Dist2DConfig, image: (usize, usize)) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, image })
    }
}

impl<S: Real> TransformSampler<S> for Dist2D {
    type Sample = Transform2D;

    fn sample(&self, rng: &mut StreamRng) -> Transform2D {
        Transform2D {
            params: sample_params_2d(&self.config, self.image, rng),
            canvas: self.config.canvas,
            background: self.config.background,
        }
    }
}
