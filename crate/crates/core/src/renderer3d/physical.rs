use rand::Rng;

use crate::diffmath::{GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;
use crate::transform::{gaussian_noise, Interval, Transform};

/// Photometric and printing effects applied to a rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    pub additive_light: f64,
    pub multiplicative_light: f64,
    pub per_channel_add: [f64; 3],
    pub per_channel_mul: [f64; 3],
    pub noise_stdev: f64,
    pub noise_seed: u64,
}

impl PhysicalParams {
    pub fn identity() -> Self {
        Self {
            additive_light: 0.0,
            multiplicative_light: 1.0,
            per_channel_add: [0.0; 3],
            per_channel_mul: [1.0; 3],
            noise_stdev: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalConfig {
    pub additive_light: Interval,
    pub multiplicative_light: Interval,
    pub per_channel_add: Interval,
    pub per_channel_mul: Interval,
    pub noise_stdev: Interval,
}

impl PhysicalConfig {
    /// Ranges approximating lighting, camera noise and printing error.
    pub fn standard() -> Self {
        Self {
            additive_light: Interval::new(-0.15, 0.15),
            multiplicative_light: Interval::new(0.5, 2.0),
            per_channel_add: Interval::new(-0.15, 0.15),
            per_channel_mul: Interval::new(0.7, 1.3),
            noise_stdev: Interval::new(0.0, 0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.additive_light.validate("lighten_darken_additive")?;
        self.multiplicative_light
            .validate("lighten_darken_multiplicative")?;
        self.per_channel_add.validate("per_channel_additive")?;
        self.per_channel_mul
            .validate("per_channel_multiplicative")?;
        self.noise_stdev.validate("gaussian_noise_stdev")?;
        if self.noise_stdev.min < 0.0 {
            return Err(Error::Config(
                "gaussian_noise_stdev must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Draw order: additive, multiplicative, per-channel add (r, g, b),
/// per-channel mul (r, g, b), noise stdev, noise seed.
pub fn sample_physical(cfg: &PhysicalConfig, rng: &mut StreamRng) -> PhysicalParams {
    let additive_light = cfg.additive_light.sample(rng);
    let multiplicative_light = cfg.multiplicative_light.sample(rng);
    let per_channel_add = std::array::from_fn(|_| cfg.per_channel_add.sample(rng));
    let per_channel_mul = std::array::from_fn(|_| cfg.per_channel_mul.sample(rng));
    let noise_stdev = cfg.noise_stdev.sample(rng);
    PhysicalParams {
        additive_light,
        multiplicative_light,
        per_channel_add,
        per_channel_mul,
        noise_stdev,
        noise_seed: rng.random(),
    }
}

impl<S: Real> Transform<S> for PhysicalParams {
    fn output_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        input_shape.to_vec()
    }

    /// `clamp(x · mul · mul_c + add + add_c + noise, 0, 1)`.
    fn append(&self, g: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId> {
        let shape = g.shape(input).to_vec();
        let channels = *shape.last().unwrap_or(&0);
        if channels != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                got: channels,
            });
        }
        let len: usize = shape.iter().product();
        let gain = Tensor::from_fn(shape.clone(), |i| {
            S::from_f64_lossy(self.multiplicative_light * self.per_channel_mul[i % 3])
        });
        let mut shift = gaussian_noise::<S>(self.noise_seed, &shape, self.noise_stdev);
        for (i, v) in shift.data_mut().iter_mut().enumerate() {
            *v += S::from_f64_lossy(self.additive_light + self.per_channel_add[i % 3]);
        }
        debug_assert_eq!(shift.len(), len);
        let gain = g.constant(gain);
        let shift = g.constant(shift);
        let lit = g.mul(input, gain)?;
        let out = g.add(lit, shift)?;
        Ok(g.clamp(out, S::zero(), S::one()))
    }
}

pub fn apply_physical_effects<S: Real>(image: &Tensor<S>, p: &PhysicalParams) -> Result<Tensor<S>> {
    p.apply(image)
}
