use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::diffmath::{Graph, GraphBuilder, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// Square `kernel × kernel` valid convolution to `channels` outputs.
    Conv {
        kernel: usize,
        channels: usize,
    },
    Relu,
    MaxPool2,
    /// Fully connected layer over the flattened input.
    Dense {
        units: usize,
    },
    LogSoftmax,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Conv { kernel, channels } => write!(f, "conv{kernel}x{channels}"),
            Layer::Relu => write!(f, "relu"),
            Layer::MaxPool2 => write!(f, "maxpool2"),
            Layer::Dense { units } => write!(f, "dense{units}"),
            Layer::LogSoftmax => write!(f, "logsoftmax"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ModelFile(format!("unknown layer `{s}`"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match s {
            "relu" => Ok(Layer::Relu),
            "maxpool2" => Ok(Layer::MaxPool2),
            "logsoftmax" => Ok(Layer::LogSoftmax),
            _ => {
                if let Some(rest) = s.strip_prefix("conv") {
                    let (k, c) = rest.split_once('x').ok_or_else(bad)?;
                    Ok(Layer::Conv {
                        kernel: num(k)?,
                        channels: num(c)?,
                    })
                } else if let Some(rest) = s.strip_prefix("dense") {
                    Ok(Layer::Dense { units: num(rest)? })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// conv(5×5, 8) → relu → maxpool → conv(5×5, 16) → relu → maxpool →
/// dense(64) → relu → dense(classes) → log-softmax.
pub fn default_architecture(classes: usize) -> Vec<Layer> {
    vec![
        Layer::Conv {
            kernel: 5,
            channels: 8,
        },
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Conv {
            kernel: 5,
            channels: 16,
        },
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Dense { units: 64 },
        Layer::Relu,
        Layer::Dense { units: classes },
        Layer::LogSoftmax,
    ]
}

/// Shapes of the parameters each layer owns, in order, for the given input.
/// Fails when the layer list does not fit the input or does not end in a
/// `class_count`-way log-softmax.
pub fn parameter_shapes(
    layers: &[Layer],
    input_shape: [usize; 3],
    class_count: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut shape = input_shape.to_vec();
    let mut out = Vec::new();
    let arch_err = |m: String| Error::ModelFile(format!("architecture: {m}"));
    for layer in layers {
        match *layer {
            Layer::Conv { kernel, channels } => {
                if shape.len() != 3 || shape[0] < kernel || shape[1] < kernel {
                    return Err(arch_err(format!("{layer} does not fit input {shape:?}")));
                }
                out.push(vec![kernel, kernel, shape[2], channels]);
                out.push(vec![channels]);
                shape = vec![shape[0] - kernel + 1, shape[1] - kernel + 1, channels];
            }
            Layer::MaxPool2 => {
                if shape.len() != 3 || shape[0] < 2 || shape[1] < 2 {
                    return Err(arch_err(format!("maxpool2 does not fit input {shape:?}")));
                }
                shape = vec![shape[0] / 2, shape[1] / 2, shape[2]];
            }
            Layer::Dense { units } => {
                out.push(vec![shape.iter().product(), units]);
                out.push(vec![units]);
                shape = vec![units];
            }
            Layer::Relu | Layer::LogSoftmax => {}
        }
    }
    if layers.last() != Some(&Layer::LogSoftmax) {
        return Err(arch_err("must end with logsoftmax".into()));
    }
    if shape != [class_count] {
        return Err(arch_err(format!(
            "produces {shape:?} but {class_count} classes are declared"
        )));
    }
    Ok(out)
}

/// A convolutional classifier producing log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub(crate) layers: Vec<Layer>,
    pub(crate) params: Vec<Arc<Tensor<S>>>,
    pub(crate) class_count: usize,
    pub(crate) input_shape: [usize; 3],
}

impl<S: Real> Model<S> {
    /// Randomly initialised model (He-uniform weights, zero biases).
    pub fn new(
        layers: Vec<Layer>,
        input_shape: [usize; 3],
        class_count: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let shapes = parameter_shapes(&layers, input_shape, class_count)?;
        let params = shapes
            .into_iter()
            .map(|shape| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(shape)
                } else {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(shape, |_| {
                        S::from_f64_lossy(rng.random_range(-bound..bound))
                    })
                };
                Arc::new(t)
            })
            .collect();
        Ok(Self {
            layers,
            params,
            class_count,
            input_shape,
        })
    }

    /// Model whose every parameter equals `value`.
    pub fn filled(
        layers: Vec<Layer>,
        input_shape: [usize; 3],
        class_count: usize,
        value: S,
    ) -> Result<Self> {
        let params = parameter_shapes(&layers, input_shape, class_count)?
            .into_iter()
            .map(|s| Arc::new(Tensor::filled(s, value)))
            .collect();
        Ok(Self {
            layers,
            params,
            class_count,
            input_shape,
        })
    }

    /// Model with explicit parameters, checked against the architecture.
    pub fn from_parts(
        layers: Vec<Layer>,
        input_shape: [usize; 3],
        class_count: usize,
        params: Vec<Tensor<S>>,
    ) -> Result<Self> {
        let shapes = parameter_shapes(&layers, input_shape, class_count)?;
        if shapes.len() != params.len()
            || shapes
                .iter()
                .zip(&params)
                .any(|(s, p)| s.as_slice() != p.shape())
        {
            return Err(Error::ModelFile(format!(
                "parameter shapes {:?} do not match the architecture's {shapes:?}",
                params
                    .iter()
                    .map(|p| p.shape().to_vec())
                    .collect::<Vec<_>>()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelFile("parameters must be finite".into()));
        }
        Ok(Self {
            layers,
            params: params.into_iter().map(Arc::new).collect(),
            class_count,
            input_shape,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.params.iter().map(|p| p.as_ref())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.params.iter_mut().map(Arc::make_mut)
    }

    pub(crate) fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::InvalidClass {
                class,
                count: self.class_count,
            });
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor<S>) -> Result<()> {
        if image.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?}, got {:?}",
                self.input_shape,
                image.shape()
            )));
        }
        Ok(())
    }

    /// Appends the network to `g` using the given parameter nodes.
    pub(crate) fn append_with(
        &self,
        g: &mut GraphBuilder<S>,
        input: NodeId,
        params: &[NodeId],
    ) -> Result<NodeId> {
        if g.shape(input) != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?}, got {:?}",
                self.input_shape,
                g.shape(input)
            )));
        }
        let mut x = input;
        let mut p = params.iter().copied();
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::Conv { .. } => {
                    let (k, b) = (p.next().expect("kernel"), p.next().expect("bias"));
                    g.conv2d(x, k, b)?
                }
                Layer::Relu => g.relu(x),
                Layer::MaxPool2 => g.maxpool2(x)?,
                Layer::Dense { .. } => {
                    let (w, b) = (p.next().expect("weight"), p.next().expect("bias"));
                    g.dense(x, w, b)?
                }
                Layer::LogSoftmax => g.log_softmax(x)?,
            };
            g.label(x, format!("layer {i} {layer}"));
        }
        Ok(x)
    }

    /// Appends the network with its parameters as constants; returns the
    /// log-probability node.
    pub fn append(&self, g: &mut GraphBuilder<S>, input: NodeId) -> Result<NodeId> {
        let params: Vec<NodeId> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        self.append_with(g, input, &params)
    }

    /// Inference graph: input `x`, output `log_probs`.
    pub fn compile(&self) -> Result<CompiledModel<S>> {
        let mut g = GraphBuilder::new();
        let x = g.input("x", self.input_shape);
        let out = self.append(&mut g, x)?;
        g.output("log_probs", out);
        Ok(CompiledModel {
            graph: g.build(),
            input_shape: self.input_shape,
            class_count: self.class_count,
        })
    }

    /// `log P(y | image)` for every class.
    pub fn log_probs(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_image(image)?;
        self.compile()?.log_probs(image)
    }

    /// Graph with input `x` and scalar output `log_prob` = log P(target | x).
    pub fn target_graph(&self, target: usize) -> Result<Graph<S>> {
        self.check_class(target)?;
        let mut g = GraphBuilder::new();
        let x = g.input("x", self.input_shape);
        let logp = self.append(&mut g, x)?;
        let pick = g.constant(Arc::new(one_hot::<S>(self.class_count, target)));
        let sel = g.mul(logp, pick)?;
        let y = g.sum(sel);
        g.output("log_prob", y);
        Ok(g.build())
    }

    /// ∇ₓ log P(target | image).
    pub fn input_gradient(&self, image: &Tensor<S>, target: usize) -> Result<Tensor<S>> {
        self.check_class(target)?;
        self.check_image(image)?;
        Ok(self
            .target_graph(target)?
            .gradient(&[("x", image)], "x", "log_prob")?)
    }
}

pub(crate) fn one_hot<S: Real>(n: usize, k: usize) -> Tensor<S> {
    Tensor::from_fn([n], |i| if i == k { S::one() } else { S::zero() })
}

/// A model lowered to a reusable inference graph.
#[derive(Clone, Debug)]
pub struct CompiledModel<S> {
    graph: Graph<S>,
    input_shape: [usize; 3],
    class_count: usize,
}

impl<S: Real> CompiledModel<S> {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn log_probs(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        if image.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects {:?}, got {:?}",
                self.input_shape,
                image.shape()
            )));
        }
        Ok(self.graph.evaluate_output(&[("x", image)], "log_probs")?)
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, image: &Tensor<S>) -> Result<usize> {
        Ok(argmax(self.log_probs(image)?.data()))
    }
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax<S: Real>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
