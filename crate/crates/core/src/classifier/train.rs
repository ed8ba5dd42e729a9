use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::LabeledDataset;
use super::model::{default_architecture, one_hot, CompiledModel, Layer, Model};
use crate::diffmath::{GraphBuilder, GraphError, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::Real;
use crate::transform::Transform;
use crate::transforms2d::{sample_params_2d, Dist2DConfig, Transform2D, TransformParams2D};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Layer list; `None` selects [`default_architecture`].
    pub layers: Option<Vec<Layer>>,
    /// When set, images are placed on this distribution's canvas and every
    /// training example is passed through a freshly sampled transformation.
    /// Held-out accuracy is measured on the centred, untransformed placement.
    pub augment: Option<Dist2DConfig>,
    /// Probability that a training example is transformed; the rest use the
    /// centred placement.
    pub augment_probability: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 1.0,
            seed: 0,
            layers: None,
            augment: None,
            augment_probability: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::Config(
                "augment_probability must lie in [0, 1]".into(),
            ));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel<S> {
    pub model: Model<S>,
    /// Mean cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the held-out set, or `None` if it was empty.
    pub heldout_accuracy: Option<f64>,
}

/// Maps dataset images to model inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum InputView {
    AsIs,
    /// Centred on a canvas with the given background.
    Canvas {
        canvas: (usize, usize),
        background: f64,
    },
}

impl InputView {
    pub fn for_augment(augment: Option<&Dist2DConfig>) -> Self {
        match augment {
            None => InputView::AsIs,
            Some(d) => InputView::Canvas {
                canvas: d.canvas,
                background: d.background,
            },
        }
    }

    pub fn input_shape(&self, image_shape: [usize; 3]) -> [usize; 3] {
        match self {
            InputView::AsIs => image_shape,
            InputView::Canvas { canvas, .. } => [canvas.0, canvas.1, image_shape[2]],
        }
    }

    pub fn apply<S: Real>(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            InputView::AsIs => Ok(image.clone()),
            InputView::Canvas { canvas, background } => Transform2D {
                params: TransformParams2D::identity(),
                canvas: *canvas,
                background: *background,
            }
            .apply(image),
        }
    }
}

/// Fraction of `dataset` the model classifies correctly after `view`.
pub fn accuracy<S: Real>(
    model: &CompiledModel<S>,
    dataset: &LabeledDataset<S>,
    view: &InputView,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut correct = 0usize;
    for (image, &label) in dataset.images().iter().zip(dataset.labels()) {
        if model.predict(&view.apply(image)?)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Minibatch SGD with momentum on the mean cross-entropy. Deterministic for
/// a fixed seed: initialisation, shuffling and augmentation each draw from
/// their own seeded stream, and gradients are summed in example order.
pub fn train<S: Real>(
    dataset: &LabeledDataset<S>,
    heldout: &LabeledDataset<S>,
    cfg: &TrainConfig,
) -> Result<TrainedModel<S>> {
    cfg.validate()?;
    let image_shape = dataset
        .image_shape()
        .ok_or(Error::Empty("training dataset"))?;
    if !heldout.is_empty() && heldout.image_shape() != Some(image_shape) {
        return Err(Error::Shape(
            "held-out images differ in shape from training images".into(),
        ));
    }
    let classes = dataset.class_count().max(heldout.class_count());
    let view = InputView::for_augment(cfg.augment.as_ref());
    let input_shape = view.input_shape(image_shape);
    let layers = cfg
        .layers
        .clone()
        .unwrap_or_else(|| default_architecture(classes));
    let mut model = Model::new(
        layers,
        input_shape,
        classes,
        &mut rng::stream(cfg.seed, "classifier.init"),
    )?;

    // Loss graph with the parameters as inputs p0, p1, ...
    let names: Vec<String> = (0..model.params.len()).map(|i| format!("p{i}")).collect();
    let graph = {
        let mut g = GraphBuilder::new();
        let x = g.input("x", input_shape);
        let y = g.input("y", [classes]);
        let p: Vec<_> = model
            .params
            .iter()
            .zip(&names)
            .map(|(t, n)| g.input(n, t.shape()))
            .collect();
        let logp = model.append_with(&mut g, x, &p)?;
        let picked = g.mul(logp, y)?;
        let total = g.sum(picked);
        let loss = g.scale(total, -S::one());
        g.output("loss", loss);
        g.build()
    };
    let wrt: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let targets: Vec<Tensor<S>> = (0..classes).map(|k| one_hot(classes, k)).collect();

    let mut shuffle_rng = rng::stream(cfg.seed, "classifier.shuffle");
    let mut augment_rng = rng::stream(cfg.seed, "classifier.augment");
    let mut velocity: Vec<Tensor<S>> = model
        .params
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut lr = S::from_f64_lossy(cfg.learning_rate);
    let mu = S::from_f64_lossy(cfg.momentum);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = Error::Diverged {
                epoch,
                batch: batch_index,
            };
            let mut grads: Vec<Tensor<S>> = velocity
                .iter()
                .map(|v| Tensor::zeros(v.shape().to_vec()))
                .collect();
            for &i in batch {
                let (image, label) = dataset.get(i);
                let x = training_input(
                    image,
                    &view,
                    cfg.augment.as_ref(),
                    cfg.augment_probability,
                    &mut augment_rng,
                )?;
                let mut bindings: Vec<(&str, &Tensor<S>)> = vec![("x", &x), ("y", &targets[label])];
                bindings.extend(
                    wrt.iter()
                        .copied()
                        .zip(model.params.iter().map(|p| p.as_ref())),
                );
                let (loss, g) = match graph.value_and_gradients(&bindings, &wrt, "loss") {
                    Ok(r) => r,
                    Err(GraphError::NonFinite { .. }) => return Err(diverged),
                    Err(e) => return Err(e.into()),
                };
                if !loss.is_finite() {
                    return Err(diverged);
                }
                epoch_loss += loss.to_f64_lossy();
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += v;
                    }
                }
            }
            let inv = S::one() / S::from_f64_lossy(batch.len() as f64);
            for ((p, v), g) in model.params_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = mu * *vv - lr * gv * inv;
                    *pv += *vv;
                }
                if !p.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_index,
                    });
                }
            }
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);
        lr *= S::from_f64_lossy(cfg.lr_decay);
    }

    let heldout_accuracy = if heldout.is_empty() {
        None
    } else {
        Some(accuracy(&model.compile()?, heldout, &view)?)
    };
    Ok(TrainedModel {
        model,
        epoch_losses,
        heldout_accuracy,
    })
}

fn training_input<S: Real>(
    image: &Tensor<S>,
    view: &InputView,
    augment: Option<&Dist2DConfig>,
    probability: f64,
    rng: &mut StreamRng,
) -> Result<Tensor<S>> {
    match augment {
        None => view.apply(image),
        // One draw per example keeps the stream aligned whatever the outcome.
        Some(_) if rng.random::<f64>() >= probability => view.apply(image),
        Some(dist) => {
            let s = image.shape();
            let params = sample_params_2d(dist, (s[0], s[1]), rng);
            Transform2D {
                params,
                canvas: dist.canvas,
                background: dist.background,
            }
            .apply(image)
        }
    }
}
