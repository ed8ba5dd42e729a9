//! The transformation abstraction shared by the 2D and 3D pipelines.

use crate::diffmath::{GraphBuilder, NodeId, Tensor};
use crate::error::Result;
use crate::rng::StreamRng;
use crate::scalar::Real;

/// One fixed, sampled transformation `t`, expressed as graph nodes so the
/// attack can differentiate through it.
pub trait Transform<S: Real> {
    /// Shape of `t(x)` for an input of shape `input_shape`.
    fn output_shape(&self, input_shape: &[usize]) -> Vec<usize>;

    /// Appends `t(input)` to `graph`.
    fn append(&self, graph: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId>;

    /// Evaluates `t(x)` directly.
    fn apply(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = GraphBuilder::new();
        let input = g.input("x", x.shape().to_vec());
        let out = self.append(&mut g, input)?;
        g.output("t", out);
        Ok(g.build().evaluate_output(&[("x", x)], "t")?)
    }
}

/// A distribution `T` over transformations.
pub trait TransformSampler<S: Real> {
    type Sample: Transform<S> + Clone;

    fn sample(&self, rng: &mut StreamRng) -> Self::Sample;
}

impl<S: Real, T: Transform<S>> Transform<S> for std::sync::Arc<T> {
    fn output_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        (**self).output_shape(input_shape)
    }

    fn append(&self, graph: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId> {
        (**self).append(graph, input)
    }
}

/// Closed interval `[min, max]` sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(crate::Error::Config(format!(
                "{name}: bounds must be finite"
            )));
        }
        if self.min > self.max {
            return Err(crate::Error::Config(format!(
                "{name}: minimum {} exceeds maximum {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    /// One uniform draw. Always consumes exactly one value from `rng`, so a
    /// degenerate interval does not shift later draws.
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        let u: f64 = rand::Rng::random(rng);
        if self.min == self.max {
            self.min
        } else {
            (self.min + (self.max - self.min) * u).min(self.max)
        }
    }
}

/// Seeded i.i.d. Gaussian noise tensor.
pub fn gaussian_noise<S: Real>(seed: u64, shape: &[usize], stdev: f64) -> Tensor<S> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = StreamRng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        S::from_f64_lossy(stdev * z)
    })
}
