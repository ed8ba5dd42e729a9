//! Expectation-over-transformation attacks: stochastic gradient ascent on
//! `E_t[log P(target | t(x'))] − λ·E_t[d(t(x'), t(x))]` with `x'` clamped to
//! [0,1], where `d` is the LAB ℓ₂ distance (intensity ℓ₂ for grayscale).

mod schedule;
mod search;

use std::sync::Arc;

pub use schedule::pose_batch_schedule;
pub use search::{
    lambda_search, lambda_search_with, select_lambda, LambdaSearch, ADVERSARIAL_THRESHOLD,
    DEFAULT_LAMBDAS,
};

use crate::classifier::Model;
use crate::diffmath::{Graph, GraphBuilder, GraphError, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::eval::{adversariality_over, holdout_stream, sample_transforms};
use crate::renderer3d::{Dist3D, Mesh, PhysicalConfig, Pose3DConfig};
use crate::rng;
use crate::scalar::Real;
use crate::transform::{Transform, TransformSampler};
use crate::transforms2d::{distance_node, expected_lab_distance, Dist2D, Dist2DConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    /// Weight of the distance penalty.
    pub lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Transformations per expectation estimate.
    pub batch_size: usize,
    /// Largest fraction of a batch carried into the next one (3D only).
    pub reuse_fraction: f64,
    /// Fresh transformations required in every batch (3D only).
    pub min_new_per_batch: usize,
    pub seed: u64,
    /// Perturbation budget, reported against the ℓ₂ norm of `x' − x` but
    /// never enforced.
    pub epsilon_report: Option<f64>,
    /// Held-out transformations used to score the result.
    pub holdout_samples: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::default_2d()
    }
}

impl AttackConfig {
    pub fn default_2d() -> Self {
        Self {
            lambda: 0.01,
            steps: 500,
            learning_rate: 1e-2,
            batch_size: 40,
            reuse_fraction: 0.8,
            min_new_per_batch: 8,
            seed: 0,
            epsilon_report: None,
            holdout_samples: 1000,
        }
    }

    pub fn default_3d() -> Self {
        Self {
            learning_rate: 1e-1,
            holdout_samples: 100,
            ..Self::default_2d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.min_new_per_batch == 0 || self.batch_size < self.min_new_per_batch {
            return bad("min_new_per_batch must lie in [1, batch_size]");
        }
        if !(0.0..=1.0).contains(&self.reuse_fraction) {
            return bad("reuse_fraction must lie in [0, 1]");
        }
        if self.holdout_samples == 0 {
            return bad("holdout_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttackResult<S> {
    /// `x'`, an image or texture in [0,1].
    pub adversarial: Tensor<S>,
    /// Batch objective before each step.
    pub objective_trace: Vec<f64>,
    pub lambda: f64,
    /// Mean distance between `t(x')` and `t(x)` over the held-out sample.
    pub expected_distance: f64,
    /// Fraction of held-out transformations classified as the target.
    pub adversariality: f64,
    pub holdout_samples: usize,
    /// ℓ₂ norm of `x' − x`.
    pub perturbation_l2: f64,
    /// Whether `perturbation_l2 < epsilon_report`, when a budget was given.
    pub within_epsilon: Option<bool>,
}

fn check_inputs<S: Real>(x: &Tensor<S>, model: &Model<S>, target: usize) -> Result<()> {
    model.check_class(target)?;
    if x.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "expected [H, W, C], got {:?}",
            x.shape()
        )));
    }
    if x.data().iter().any(|&v| !(v >= S::zero() && v <= S::one())) {
        return Err(Error::Shape("input values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Appends `log P(target | view) − λ·d(view, reference)`.
fn append_term<S: Real>(
    g: &mut GraphBuilder<S>,
    view: NodeId,
    reference: Tensor<S>,
    model: &Model<S>,
    pick: NodeId,
    lambda: S,
) -> Result<NodeId> {
    let logp = model.append(g, view)?;
    let sel = g.mul(logp, pick)?;
    let logp_t = g.sum(sel);
    let reference = g.constant(reference);
    let d = distance_node(g, view, reference)?;
    let penalty = g.scale(d, lambda);
    Ok(g.sub(logp_t, penalty)?)
}

fn one_hot_node<S: Real>(g: &mut GraphBuilder<S>, n: usize, k: usize) -> NodeId {
    g.constant(Arc::new(Tensor::from_fn([n], |i| {
        if i == k {
            S::one()
        } else {
            S::zero()
        }
    })))
}

/// Graph with input `x_adv` and scalar output `objective`: the mean over
/// `transforms` of `log P(target | t(x')) − λ·d(t(x'), t(x))`.
pub fn objective_graph<S: Real, T: Transform<S>>(
    x: &Tensor<S>,
    transforms: &[T],
    model: &Model<S>,
    target: usize,
    lambda: f64,
) -> Result<Graph<S>> {
    if transforms.is_empty() {
        return Err(Error::Empty("transform list"));
    }
    let mut g = GraphBuilder::new();
    let input = g.input("x_adv", x.shape().to_vec());
    let pick = one_hot_node(&mut g, model.class_count(), target);
    let lambda = S::from_f64_lossy(lambda);
    let mut total: Option<NodeId> = None;
    for t in transforms {
        let view = t.append(&mut g, input)?;
        let term = append_term(&mut g, view, t.apply(x)?, model, pick, lambda)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let inv = S::one() / S::from_f64_lossy(transforms.len() as f64);
    let mean = g.scale(total.expect("non-empty"), inv);
    g.output("objective", mean);
    Ok(g.build())
}

/// Value and gradient (with respect to `x_adv`) of the EOT objective.
pub fn eot_objective<S: Real, T: Transform<S>>(
    x_adv: &Tensor<S>,
    x: &Tensor<S>,
    transforms: &[T],
    model: &Model<S>,
    target: usize,
    lambda: f64,
) -> Result<(f64, Tensor<S>)> {
    if x_adv.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "x' is {:?} but x is {:?}",
            x_adv.shape(),
            x.shape()
        )));
    }
    check_inputs(x, model, target)?;
    let graph = objective_graph(x, transforms, model, target, lambda)?;
    let (value, mut grads) =
        graph.value_and_gradients(&[("x_adv", x_adv)], &["x_adv"], "objective")?;
    Ok((value.to_f64_lossy(), grads.remove(0)))
}

/// `x' ← clamp(x' + lr·grad, 0, 1)`.
fn ascend<S: Real>(x_adv: &mut Tensor<S>, grad: &Tensor<S>, lr: S) {
    for (v, &g) in x_adv.data_mut().iter_mut().zip(grad.data()) {
        *v = (*v + lr * g).max(S::zero()).min(S::one());
    }
}

fn non_finite(step: usize, e: Error) -> Error {
    match e {
        Error::Graph(GraphError::NonFinite { node }) => Error::NonFiniteObjective {
            step,
            detail: format!("non-finite value at {node}"),
        },
        other => other,
    }
}

fn finish<S: Real, T: Transform<S>>(
    x_adv: Tensor<S>,
    x: &Tensor<S>,
    trace: Vec<f64>,
    model: &Model<S>,
    target: usize,
    cfg: &AttackConfig,
    holdout: &[T],
) -> Result<AttackResult<S>> {
    let compiled = model.compile()?;
    let adversariality = adversariality_over(&compiled, &x_adv, target, holdout)?;
    let expected_distance = expected_lab_distance(&x_adv, x, holdout)?;
    let perturbation_l2 = x_adv
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (*a - *b).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(AttackResult {
        adversarial: x_adv,
        objective_trace: trace,
        lambda: cfg.lambda,
        expected_distance,
        adversariality,
        holdout_samples: holdout.len(),
        perturbation_l2,
        within_epsilon: cfg.epsilon_report.map(|e| perturbation_l2 < e),
    })
}

/// How each step's batch of transformations is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchPolicy {
    /// `batch_size` fresh draws every step.
    Fresh,
    /// Carry part of the previous batch over (see [`pose_batch_schedule`]).
    Reuse,
}

/// EOT over any transformation distribution. Batches come from the stream
/// `(seed, "eot.batch")` and the held-out sample from
/// [`holdout_stream`]`(seed)`.
pub fn eot_attack<S: Real, D: TransformSampler<S>>(
    x: &Tensor<S>,
    target: usize,
    dist: &D,
    model: &Model<S>,
    cfg: &AttackConfig,
    policy: BatchPolicy,
) -> Result<AttackResult<S>> {
    cfg.validate()?;
    check_inputs(x, model, target)?;
    let mut batch_rng = rng::stream(cfg.seed, "eot.batch");
    let lr = S::from_f64_lossy(cfg.learning_rate);
    let mut x_adv = x.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut batch: Vec<D::Sample> = Vec::new();
    for step in 0..cfg.steps {
        batch = match policy {
            BatchPolicy::Fresh => sample_transforms(dist, cfg.batch_size, &mut batch_rng),
            BatchPolicy::Reuse => pose_batch_schedule(
                &batch,
                &mut batch_rng,
                cfg.batch_size,
                cfg.reuse_fraction,
                cfg.min_new_per_batch,
                |r| dist.sample(r),
            ),
        };
        let (value, grad) = eot_objective(&x_adv, x, &batch, model, target, cfg.lambda)
            .map_err(|e| non_finite(step, e))?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective {
                step,
                detail: format!("objective is {value}"),
            });
        }
        trace.push(value);
        ascend(&mut x_adv, &grad, lr);
    }
    let holdout = sample_transforms(dist, cfg.holdout_samples, &mut holdout_stream(cfg.seed));
    finish(x_adv, x, trace, model, target, cfg, &holdout)
}

/// EOT over the 2D distribution, with fresh transformations every step.
pub fn eot_attack_2d<S: Real>(
    x: &Tensor<S>,
    target: usize,
    dist: &Dist2DConfig,
    model: &Model<S>,
    cfg: &AttackConfig,
) -> Result<AttackResult<S>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected [H, W, C], got {s:?}")));
    }
    let sampler = Dist2D::new(dist.clone(), (s[0], s[1]))?;
    eot_attack(x, target, &sampler, model, cfg, BatchPolicy::Fresh)
}

/// EOT over renderings of `mesh` carrying `texture`; renders must match the
/// model's input size. Batches carry poses over per [`pose_batch_schedule`].
pub fn eot_attack_3d<S: Real>(
    texture: &Tensor<S>,
    target: usize,
    mesh: Arc<Mesh>,
    poses: &Pose3DConfig,
    physical: Option<&PhysicalConfig>,
    model: &Model<S>,
    cfg: &AttackConfig,
) -> Result<AttackResult<S>> {
    let sampler = render_distribution(texture, mesh, poses, physical, model)?;
    eot_attack(texture, target, &sampler, model, cfg, BatchPolicy::Reuse)
}

/// The rendering distribution for `texture` at the model's input size.
pub fn render_distribution<S: Real>(
    texture: &Tensor<S>,
    mesh: Arc<Mesh>,
    poses: &Pose3DConfig,
    physical: Option<&PhysicalConfig>,
    model: &Model<S>,
) -> Result<Dist3D> {
    let s = texture.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Shape(format!("textures are [H, W, 3], got {s:?}")));
    }
    let [h, w, c] = model.input_shape();
    if c != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: c,
        });
    }
    Dist3D::new(mesh, poses.clone(), physical.cloned(), (s[0], s[1]), (h, w))
}

/// The standard single-view targeted attack: ascent on
/// `log P(target | v(x')) − λ·d(v(x'), v(x))` for one fixed view `v` (for
/// example the centred placement on the model's canvas). The result is
/// scored on that view alone.
pub fn targeted_attack<S: Real, T: Transform<S>>(
    x: &Tensor<S>,
    target: usize,
    view: &T,
    model: &Model<S>,
    cfg: &AttackConfig,
) -> Result<AttackResult<S>> {
    cfg.validate()?;
    check_inputs(x, model, target)?;
    let graph = {
        let mut g = GraphBuilder::new();
        let input = g.input("x_adv", x.shape().to_vec());
        let pick = one_hot_node(&mut g, model.class_count(), target);
        let v = view.append(&mut g, input)?;
        let term = append_term(
            &mut g,
            v,
            view.apply(x)?,
            model,
            pick,
            S::from_f64_lossy(cfg.lambda),
        )?;
        g.output("objective", term);
        g.build()
    };
    let lr = S::from_f64_lossy(cfg.learning_rate);
    let mut x_adv = x.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (value, grads) = graph
            .value_and_gradients(&[("x_adv", &x_adv)], &["x_adv"], "objective")
            .map_err(|e| non_finite(step, e.into()))?;
        trace.push(value.to_f64_lossy());
        ascend(&mut x_adv, &grads[0], lr);
    }
    finish(
        x_adv,
        x,
        trace,
        model,
        target,
        cfg,
        std::slice::from_ref(view),
    )
}
