use std::borrow::Cow;
use std::collections::HashMap;

use crate::scalar::Real;

use super::graph::{Graph, NodeId, Op};
use super::kernels::{self, ConvDims};
use super::{GraphError, Tensor};

/// Named input bindings for one evaluation.
pub type Bindings<'a, S> = [(&'a str, &'a Tensor<S>)];

struct Forward<'a, S: Clone> {
    values: Vec<Option<Cow<'a, [S]>>>,
}

impl<'a, S: Clone> Forward<'a, S> {
    fn get(&self, id: NodeId) -> &[S] {
        self.values[id.0]
            .as_deref()
            .expect("parent evaluated before child")
    }
}

fn conv_dims(input: &[usize], kernel: &[usize]) -> ConvDims {
    ConvDims {
        h: input[0],
        w: input[1],
        cin: input[2],
        kh: kernel[0],
        kw: kernel[1],
        cout: kernel[3],
    }
}

impl<S: Real> Graph<S> {
    /// Marks every node that `target` depends on.
    fn ancestors(&self, target: NodeId) -> Vec<bool> {
        let mut needed = vec![false; target.0 + 1];
        needed[target.0] = true;
        for i in (0..=target.0).rev() {
            if needed[i] {
                for p in self.nodes[i].op.parents() {
                    needed[p.0] = true;
                }
            }
        }
        needed
    }

    fn forward<'a>(
        &'a self,
        inputs: &'a Bindings<'a, S>,
        needed: &[bool],
    ) -> Result<Forward<'a, S>, GraphError> {
        let mut fw = Forward {
            values: Vec::with_capacity(needed.len()),
        };
        for (i, node) in self.nodes.iter().enumerate().take(needed.len()) {
            if !needed[i] {
                fw.values.push(None);
                continue;
            }
            let id = NodeId(i);
            let value: Cow<'a, [S]> = match &node.op {
                Op::Input(name) => {
                    let t = inputs
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| *t)
                        .ok_or_else(|| GraphError::MissingInput(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(GraphError::InputShape {
                            name: name.clone(),
                            expected: node.shape.clone(),
                            got: t.shape().to_vec(),
                        });
                    }
                    Cow::Borrowed(t.data())
                }
                Op::Constant(t) => Cow::Borrowed(t.data()),
                Op::Add(a, b) => Cow::Owned(zip(fw.get(*a), fw.get(*b), |x, y| x + y)),
                Op::Sub(a, b) => Cow::Owned(zip(fw.get(*a), fw.get(*b), |x, y| x - y)),
                Op::Mul(a, b) => Cow::Owned(zip(fw.get(*a), fw.get(*b), |x, y| x * y)),
                Op::Scale(a, k) => Cow::Owned(fw.get(*a).iter().map(|&v| v * *k).collect()),
                Op::Offset(a, k) => Cow::Owned(fw.get(*a).iter().map(|&v| v + *k).collect()),
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    Cow::Owned(kernels::matmul(fw.get(*a), fw.get(*b), sa[0], sa[1], sb[1]))
                }
                Op::SparseMatVec(a, m) => {
                    let width = *node.shape.last().unwrap_or(&1);
                    let mut out = vec![S::zero(); m.rows() * width];
                    m.matmul_interleaved(fw.get(*a), width, &mut out);
                    Cow::Owned(out)
                }
                Op::BilinearSample(a, grid) => {
                    let s = &self.nodes[a.0].shape;
                    Cow::Owned(kernels::bilinear_sample(fw.get(*a), s[0], s[1], s[2], grid))
                }
                Op::Unary(a, f) => Cow::Owned(fw.get(*a).iter().map(|&v| f.apply(v)).collect()),
                Op::Clamp(a, lo, hi) => {
                    Cow::Owned(fw.get(*a).iter().map(|&v| v.max(*lo).min(*hi)).collect())
                }
                Op::Power(a, p) => Cow::Owned(fw.get(*a).iter().map(|&v| pow(v, *p)).collect()),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                } => {
                    let d = conv_dims(&self.nodes[input.0].shape, &self.nodes[kernel.0].shape);
                    Cow::Owned(kernels::conv2d(
                        fw.get(*input),
                        fw.get(*kernel),
                        fw.get(*bias),
                        d,
                    ))
                }
                Op::MaxPool2(a) => {
                    let s = &self.nodes[a.0].shape;
                    let x = fw.get(*a);
                    Cow::Owned(
                        kernels::maxpool2_argmax(x, s[0], s[1], s[2])
                            .into_iter()
                            .map(|i| x[i])
                            .collect(),
                    )
                }
                Op::LogSoftmax(a) => Cow::Owned(kernels::log_softmax(fw.get(*a))),
                Op::Sum(a) => Cow::Owned(vec![fw.get(*a).iter().copied().sum()]),
                Op::Mean(a) => {
                    let x = fw.get(*a);
                    let n = S::from_usize(x.len()).unwrap_or_else(S::one);
                    Cow::Owned(vec![x.iter().copied().sum::<S>() / n])
                }
                Op::Reshape(a) => match &fw.values[a.0] {
                    Some(Cow::Borrowed(s)) => Cow::Borrowed(*s),
                    Some(Cow::Owned(v)) => Cow::Owned(v.clone()),
                    None => unreachable!("parent evaluated before child"),
                },
            };
            if !value.iter().all(|v| v.is_finite()) {
                return Err(GraphError::NonFinite {
                    node: self.describe(id),
                });
            }
            fw.values.push(Some(value));
        }
        Ok(fw)
    }

    /// Forward pass returning every declared output.
    pub fn evaluate(
        &self,
        inputs: &Bindings<'_, S>,
    ) -> Result<HashMap<String, Tensor<S>>, GraphError> {
        let last = self.outputs.iter().map(|(_, id)| id.0).max();
        let Some(last) = last else {
            return Ok(HashMap::new());
        };
        let mut needed = vec![false; last + 1];
        for (_, id) in &self.outputs {
            for (i, n) in self.ancestors(*id).into_iter().enumerate() {
                needed[i] |= n;
            }
        }
        let fw = self.forward(inputs, &needed)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| {
                let t = Tensor::new(self.nodes[id.0].shape.clone(), fw.get(*id).to_vec())
                    .expect("inferred shape matches data");
                (name.clone(), t)
            })
            .collect())
    }

    /// Forward pass for a single named output.
    pub fn evaluate_output(
        &self,
        inputs: &Bindings<'_, S>,
        output: &str,
    ) -> Result<Tensor<S>, GraphError> {
        let id = self.output_node(output)?;
        let fw = self.forward(inputs, &self.ancestors(id))?;
        Ok(
            Tensor::new(self.nodes[id.0].shape.clone(), fw.get(id).to_vec())
                .expect("inferred shape matches data"),
        )
    }

    /// Distance of the evaluation point from the nearest switch of a
    /// piecewise operation feeding `output`: relu inputs from 0, clamp inputs
    /// from either bound, sub-unit powers from 0, and the gap between the
    /// largest and second-largest entry of every max-pool window. Finite
    /// differences with a step below this distance see no kinks.
    pub fn kink_distance(&self, inputs: &Bindings<'_, S>, output: &str) -> Result<f64, GraphError> {
        let id = self.output_node(output)?;
        let needed = self.ancestors(id);
        let fw = self.forward(inputs, &needed)?;
        let mut best = f64::INFINITY;
        let mut see = |d: S| best = best.min(d.to_f64_lossy().abs());
        for (i, node) in self.nodes.iter().enumerate().take(needed.len()) {
            if !needed[i] {
                continue;
            }
            match &node.op {
                Op::Unary(a, super::graph::UnaryFn::Relu) => {
                    fw.get(*a).iter().for_each(|&v| see(v))
                }
                Op::Clamp(a, lo, hi) => fw
                    .get(*a)
                    .iter()
                    .for_each(|&v| see((v - *lo).abs().min((v - *hi).abs()))),
                Op::Power(a, p) if *p < S::one() => fw.get(*a).iter().for_each(|&v| see(v)),
                Op::MaxPool2(a) => {
                    let s = &self.nodes[a.0].shape;
                    let (h, w, c) = (s[0], s[1], s[2]);
                    let x = fw.get(*a);
                    for r in 0..h / 2 {
                        for q in 0..w / 2 {
                            for ch in 0..c {
                                let mut win = [S::zero(); 4];
                                for (k, (dr, dq)) in
                                    [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                                {
                                    win[k] = x[((2 * r + dr) * w + 2 * q + dq) * c + ch];
                                }
                                win.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
                                see(win[0] - win[1]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(best)
    }

    /// Which piece of every piecewise operation feeding `output` is active:
    /// relu and sub-unit power signs, clamp regions, and max-pool winners.
    /// Two points with equal patterns lie on the same smooth piece.
    pub fn kink_pattern(
        &self,
        inputs: &Bindings<'_, S>,
        output: &str,
    ) -> Result<Vec<u8>, GraphError> {
        let id = self.output_node(output)?;
        let needed = self.ancestors(id);
        let fw = self.forward(inputs, &needed)?;
        let mut pattern = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().take(needed.len()) {
            if !needed[i] {
                continue;
            }
            match &node.op {
                Op::Unary(a, super::graph::UnaryFn::Relu) => {
                    pattern.extend(fw.get(*a).iter().map(|&v| u8::from(v >= S::zero())))
                }
                Op::Power(a, p) if *p < S::one() => {
                    pattern.extend(fw.get(*a).iter().map(|&v| u8::from(v > S::zero())))
                }
                Op::Clamp(a, lo, hi) => pattern.extend(
                    fw.get(*a)
                        .iter()
                        .map(|&v| u8::from(v >= *lo) + u8::from(v > *hi)),
                ),
                Op::MaxPool2(a) => {
                    let s = &self.nodes[a.0].shape;
                    let (h, w, c) = (s[0], s[1], s[2]);
                    let x = fw.get(*a);
                    for r in 0..h / 2 {
                        for q in 0..w / 2 {
                            for ch in 0..c {
                                let at = |dr: usize, dq: usize| {
                                    x[((2 * r + dr) * w + 2 * q + dq) * c + ch]
                                };
                                let mut best = 0u8;
                                for (k, (dr, dq)) in
                                    [(0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                                {
                                    let (br, bq) = [(0, 0), (0, 1), (1, 0), (1, 1)][best as usize];
                                    if at(dr, dq) > at(br, bq) {
                                        best = k as u8 + 1;
                                    }
                                }
                                pattern.push(best);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(pattern)
    }

    /// d(`scalar_output`)/d(`wrt`).
    pub fn gradient(
        &self,
        inputs: &Bindings<'_, S>,
        wrt: &str,
        scalar_output: &str,
    ) -> Result<Tensor<S>, GraphError> {
        let (_, mut grads) = self.value_and_gradients(inputs, &[wrt], scalar_output)?;
        Ok(grads.remove(0))
    }

    /// Value of `scalar_output` and its gradients with respect to each input
    /// in `wrt`, from one forward and one backward pass.
    pub fn value_and_gradients(
        &self,
        inputs: &Bindings<'_, S>,
        wrt: &[&str],
        scalar_output: &str,
    ) -> Result<(S, Vec<Tensor<S>>), GraphError> {
        let out = self.output_node(scalar_output)?;
        if !self.nodes[out.0].shape.is_empty() {
            return Err(GraphError::NotScalar {
                output: scalar_output.to_string(),
                shape: self.nodes[out.0].shape.clone(),
            });
        }
        let wrt_ids = wrt
            .iter()
            .map(|name| {
                self.input_node(name)
                    .ok_or_else(|| GraphError::UnknownInput(name.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let needed = self.ancestors(out);
        let fw = self.forward(inputs, &needed)?;
        let value = fw.get(out)[0];

        // Nodes on a path from some `wrt` input to the output.
        let mut active = vec![false; out.0 + 1];
        for id in &wrt_ids {
            if id.0 <= out.0 {
                active[id.0] = true;
            }
        }
        for i in 0..=out.0 {
            if needed[i] && !active[i] {
                active[i] = self.nodes[i].op.parents().iter().any(|p| active[p.0]);
            }
        }

        let mut adj: Vec<Option<Vec<S>>> = vec![None; out.0 + 1];
        if active[out.0] {
            adj[out.0] = Some(vec![S::one()]);
        }
        for i in (0..=out.0).rev() {
            if !active[i] {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Input(_) = node.op {
                adj[i] = Some(dy);
                continue;
            }
            self.backward_node(NodeId(i), &dy, &fw, &active, &mut adj);
        }

        let grads = wrt_ids
            .iter()
            .map(|id| {
                let shape = self.nodes[id.0].shape.clone();
                let data = adj
                    .get(id.0)
                    .and_then(|a| a.clone())
                    .unwrap_or_else(|| vec![S::zero(); shape.iter().product()]);
                Tensor::new(shape, data).expect("gradient matches input shape")
            })
            .collect();
        Ok((value, grads))
    }

    fn backward_node(
        &self,
        id: NodeId,
        dy: &[S],
        fw: &Forward<'_, S>,
        active: &[bool],
        adj: &mut [Option<Vec<S>>],
    ) {
        let node = &self.nodes[id.0];
        let mut acc = |p: NodeId, f: &mut dyn FnMut(&mut [S])| {
            if !active[p.0] {
                return;
            }
            let len = self.nodes[p.0].shape.iter().product();
            let slot = adj[p.0].get_or_insert_with(|| vec![S::zero(); len]);
            f(slot);
        };
        match &node.op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| {
                    g.iter_mut().zip(dy).for_each(|(g, &d)| *g -= d)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (fw.get(*a), fw.get(*b));
                acc(*a, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(vb) {
                        *g += d * v;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(va) {
                        *g += d * v;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * *k)
            }),
            Op::Offset(a, _) | Op::Reshape(a) => acc(*a, &mut |g| add_into(g, dy)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (fw.get(*a), fw.get(*b));
                acc(*a, &mut |g| kernels::matmul_grad_a(dy, vb, m, k, n, g));
                acc(*b, &mut |g| kernels::matmul_grad_b(dy, va, m, k, n, g));
            }
            Op::SparseMatVec(a, mat) => {
                let width = *node.shape.last().unwrap_or(&1);
                acc(*a, &mut |g| mat.transpose_matmul_acc(dy, width, g));
            }
            Op::BilinearSample(a, grid) => {
                let s = &self.nodes[a.0].shape;
                acc(*a, &mut |g| {
                    kernels::bilinear_sample_grad(dy, s[0], s[1], s[2], grid, g)
                });
            }
            Op::Unary(a, f) => {
                let (x, y) = (fw.get(*a), fw.get(id));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * f.derivative(x[i], y[i]);
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = fw.get(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] >= *lo && x[i] <= *hi {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Power(a, p) => {
                let x = fw.get(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] * pow_derivative(x[i], *p);
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let d = conv_dims(&self.nodes[input.0].shape, &self.nodes[kernel.0].shape);
                let (x, k) = (fw.get(*input), fw.get(*kernel));
                acc(*input, &mut |g| kernels::conv2d_grad_input(dy, k, d, g));
                acc(*kernel, &mut |g| kernels::conv2d_grad_kernel(dy, x, d, g));
                acc(*bias, &mut |g| kernels::conv2d_grad_bias(dy, d.cout, g));
            }
            Op::MaxPool2(a) => {
                let s = &self.nodes[a.0].shape;
                let idx = kernels::maxpool2_argmax(fw.get(*a), s[0], s[1], s[2]);
                acc(*a, &mut |g| {
                    for (o, &i) in idx.iter().enumerate() {
                        g[i] += dy[o];
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = fw.get(id);
                let total: S = dy.iter().copied().sum();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dy[i] - y[i].exp() * total;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Mean(a) => {
                let len = self.nodes[a.0].shape.iter().product::<usize>();
                let share = dy[0] / S::from_usize(len.max(1)).unwrap_or_else(S::one);
                acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += share));
            }
        }
    }
}

fn zip<S: Real>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into<S: Real>(g: &mut [S], d: &[S]) {
    g.iter_mut().zip(d).for_each(|(g, &d)| *g += d);
}

#[inline]
fn pow<S: Real>(x: S, p: S) -> S {
    if p == S::from_f64_lossy(2.0) {
        x * x
    } else {
        x.powf(p)
    }
}

#[inline]
fn pow_derivative<S: Real>(x: S, p: S) -> S {
    if x == S::zero() && p < S::one() {
        S::zero()
    } else if p == S::from_f64_lossy(2.0) {
        x + x
    } else {
        p * x.powf(p - S::one())
    }
}
