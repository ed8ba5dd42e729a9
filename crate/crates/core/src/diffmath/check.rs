//! Central finite-difference verification of reverse-mode gradients.

use std::sync::Arc;

use rand::Rng;

use crate::rng::StreamRng;
use crate::scalar::Real;

use super::graph::{Graph, GraphBuilder, NodeId, SampleGrid, UnaryFn};
use super::sparse::CsrMatrix;
use super::{GraphError, Tensor};

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between `gradient()` and central differences over
/// every element of `wrt`.
pub fn finite_diff_check<S: Real>(
    graph: &Graph<S>,
    inputs: &[(&str, &Tensor<S>)],
    wrt: &str,
    scalar_output: &str,
    step: S,
) -> Result<f64, GraphError> {
    let len = inputs
        .iter()
        .find(|(n, _)| *n == wrt)
        .map(|(_, t)| t.len())
        .ok_or_else(|| GraphError::UnknownInput(wrt.to_string()))?;
    let coords: Vec<usize> = (0..len).collect();
    finite_diff_check_at(graph, inputs, wrt, scalar_output, step, &coords)
}

/// As [`finite_diff_check`], restricted to the flat element indices `coords`.
pub fn finite_diff_check_at<S: Real>(
    graph: &Graph<S>,
    inputs: &[(&str, &Tensor<S>)],
    wrt: &str,
    scalar_output: &str,
    step: S,
    coords: &[usize],
) -> Result<f64, GraphError> {
    assert!(step > S::zero(), "finite-difference step must be positive");
    let analytic = graph.gradient(inputs, wrt, scalar_output)?;
    let base = inputs
        .iter()
        .find(|(n, _)| *n == wrt)
        .map(|(_, t)| (*t).clone())
        .ok_or_else(|| GraphError::UnknownInput(wrt.to_string()))?;

    let eval_at = |probe: &Tensor<S>| -> Result<f64, GraphError> {
        let bound: Vec<(&str, &Tensor<S>)> = inputs
            .iter()
            .map(|&(n, t)| if n == wrt { (n, probe) } else { (n, t) })
            .collect();
        Ok(graph
            .evaluate_output(&bound, scalar_output)?
            .item()
            .to_f64_lossy())
    };

    let mut probe = base.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let x0 = base.data()[i];
        probe.data_mut()[i] = x0 + step;
        let up = eval_at(&probe)?;
        probe.data_mut()[i] = x0 - step;
        let down = eval_at(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * step.to_f64_lossy());
        worst = worst.max(relative_error(numeric, analytic.data()[i].to_f64_lossy()));
    }
    Ok(worst)
}

/// Whether any `±step` probe of a single element of `wrt` moves onto a
/// different smooth piece than the base point (see [`Graph::kink_pattern`]).
/// Central differences are only meaningful when this is false.
pub fn probes_cross_kink<S: Real>(
    graph: &Graph<S>,
    inputs: &[(&str, &Tensor<S>)],
    wrt: &str,
    scalar_output: &str,
    step: S,
) -> Result<bool, GraphError> {
    let base = inputs
        .iter()
        .find(|(n, _)| *n == wrt)
        .map(|(_, t)| (*t).clone())
        .ok_or_else(|| GraphError::UnknownInput(wrt.to_string()))?;
    let pattern_at = |probe: &Tensor<S>| {
        let bound: Vec<(&str, &Tensor<S>)> = inputs
            .iter()
            .map(|&(n, t)| if n == wrt { (n, probe) } else { (n, t) })
            .collect();
        graph.kink_pattern(&bound, scalar_output)
    };
    let reference = pattern_at(&base)?;
    let mut probe = base.clone();
    for i in 0..base.len() {
        let x0 = base.data()[i];
        for x in [x0 + step, x0 - step] {
            probe.data_mut()[i] = x;
            if pattern_at(&probe)? != reference {
                return Ok(true);
            }
        }
        probe.data_mut()[i] = x0;
    }
    Ok(false)
}

/// One registered primitive with a generator of kink-free test instances.
pub struct PrimitiveCase {
    pub name: &'static str,
    /// Builds a graph `y = sum(W ∘ op(x))` (W random) and a point `x`.
    pub build: fn(&mut StreamRng) -> (Graph<f64>, Tensor<f64>),
}

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero in magnitude.
fn away_from_zero(rng: &mut StreamRng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn weighted_sum(g: &mut GraphBuilder<f64>, rng: &mut StreamRng, y: NodeId) -> NodeId {
    let shape = g.shape(y).to_vec();
    let w = g.constant(uniform(rng, &shape, -1.0, 1.0));
    let prod = g.mul(y, w).expect("same shape");
    g.sum(prod)
}

fn finish(
    mut g: GraphBuilder<f64>,
    x: Tensor<f64>,
    y: NodeId,
    rng: &mut StreamRng,
) -> (Graph<f64>, Tensor<f64>) {
    let out = weighted_sum(&mut g, rng, y);
    g.output("y", out);
    (g.build(), x)
}

fn unary_case(rng: &mut StreamRng, f: UnaryFn, x: Tensor<f64>) -> (Graph<f64>, Tensor<f64>) {
    let mut g = GraphBuilder::new();
    let xi = g.input("x", x.shape().to_vec());
    let y = g.unary(xi, f);
    finish(g, x, y, rng)
}

/// Every graph primitive, each with a generator of test points that stay at
/// least 1e-2 away from kinks.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        PrimitiveCase {
            name: "add",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let x = g.input("x", [6]);
                let c = g.constant(uniform(rng, &[6], -1.0, 1.0));
                let y = g.add(x, c).unwrap();
                let y = g.mul(y, x).unwrap();
                finish(g, uniform(rng, &[6], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "sub",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let x = g.input("x", [6]);
                let c = g.constant(uniform(rng, &[6], -1.0, 1.0));
                let y = g.sub(c, x).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[6], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "mul",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let x = g.input("x", [6]);
                let y = g.mul(x, x).unwrap();
                finish(g, uniform(rng, &[6], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "scale",
            build: |rng| {
                let k = rng.random_range(-2.0..2.0);
                let mut g = GraphBuilder::new();
                let x = g.input("x", [5]);
                let y = g.scale(x, k);
                finish(g, uniform(rng, &[5], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "offset",
            build: |rng| {
                let k = rng.random_range(-2.0..2.0);
                let mut g = GraphBuilder::new();
                let x = g.input("x", [5]);
                let y = g.offset(x, k);
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[5], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "matmul",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let x = g.input("x", [3, 4]);
                let w = g.constant(uniform(rng, &[4, 2], -1.0, 1.0));
                let y = g.matmul(x, w).unwrap();
                let xt = g.constant(uniform(rng, &[2, 3], -1.0, 1.0));
                let y = g.matmul(y, xt).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[3, 4], -1.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "sparse_matvec",
            build: |rng| {
                let rows: Vec<Vec<(usize, f64)>> = (0..6)
                    .map(|_| {
                        (0..3)
                            .map(|_| (rng.random_range(0..8), rng.random_range(0.0..1.0)))
                            .collect()
                    })
                    .collect();
                let m = Arc::new(CsrMatrix::from_rows(8, &rows));
                let mut g = GraphBuilder::new();
                let x = g.input("x", [2, 4, 3]);
                let y = g.sparse_matvec(x, m, [3, 2, 3]).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[2, 4, 3], 0.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "bilinear_sample",
            build: |rng| {
                let coords = (0..20)
                    .map(|_| (rng.random_range(-1.5..5.5), rng.random_range(-1.5..5.5)))
                    .collect();
                let grid = Arc::new(SampleGrid {
                    height: 4,
                    width: 5,
                    coords,
                    fill: 0.5,
                });
                let mut g = GraphBuilder::new();
                let x = g.input("x", [5, 5, 2]);
                let y = g.bilinear_sample(x, grid).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[5, 5, 2], 0.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "relu",
            build: |rng| {
                let x = away_from_zero(rng, &[8], 0.05);
                unary_case(rng, UnaryFn::Relu, x)
            },
        },
        PrimitiveCase {
            name: "exp",
            build: |rng| {
                let x = uniform(rng, &[6], -2.0, 2.0);
                unary_case(rng, UnaryFn::Exp, x)
            },
        },
        PrimitiveCase {
            name: "log",
            build: |rng| {
                let x = uniform(rng, &[6], 0.1, 3.0);
                unary_case(rng, UnaryFn::Log, x)
            },
        },
        PrimitiveCase {
            name: "srgb_to_linear",
            build: |rng| {
                let x = Tensor::from_fn([8], |i| {
                    if i % 2 == 0 {
                        rng.random_range(0.0..0.03)
                    } else {
                        rng.random_range(0.06..1.0)
                    }
                });
                unary_case(rng, UnaryFn::SrgbToLinear, x)
            },
        },
        PrimitiveCase {
            name: "lab_f",
            build: |rng| {
                let x = Tensor::from_fn([8], |i| {
                    if i % 2 == 0 {
                        rng.random_range(0.0..0.006)
                    } else {
                        rng.random_range(0.02..1.0)
                    }
                });
                unary_case(rng, UnaryFn::LabF, x)
            },
        },
        PrimitiveCase {
            name: "clamp",
            build: |rng| {
                let x = Tensor::from_fn([9], |i| match i % 3 {
                    0 => rng.random_range(-0.5..-0.05),
                    1 => rng.random_range(0.05..0.95),
                    _ => rng.random_range(1.05..1.5),
                });
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [9]);
                let y = g.clamp(xi, 0.0, 1.0);
                let y = g.mul(y, xi).unwrap();
                finish(g, x, y, rng)
            },
        },
        PrimitiveCase {
            name: "power",
            build: |rng| {
                let p = if rng.random_bool(0.5) { 3.0 } else { 0.5 };
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [6]);
                let y = g.power(xi, p);
                finish(g, uniform(rng, &[6], 0.1, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "conv2d",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let x = g.input("x", [6, 5, 2]);
                let k = g.constant(uniform(rng, &[3, 3, 2, 3], -1.0, 1.0));
                let b = g.constant(uniform(rng, &[3], -1.0, 1.0));
                let y = g.conv2d(x, k, b).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[6, 5, 2], 0.0, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "maxpool2",
            build: |rng| {
                // Distinct values on a 0.05 lattice keep every window's
                // maximum unique by a margin.
                let mut levels: Vec<f64> = (0..32).map(|i| i as f64 * 0.05).collect();
                for i in (1..levels.len()).rev() {
                    levels.swap(i, rng.random_range(0..=i));
                }
                let x = Tensor::new([4, 4, 2], levels).unwrap();
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [4, 4, 2]);
                let y = g.maxpool2(xi).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, x, y, rng)
            },
        },
        PrimitiveCase {
            name: "log_softmax",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [5]);
                let y = g.log_softmax(xi).unwrap();
                finish(g, uniform(rng, &[5], -2.0, 2.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "sum",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [2, 3]);
                let sq = g.mul(xi, xi).unwrap();
                let y = g.sum(sq);
                let y = g.power(y, 1.5);
                finish(g, uniform(rng, &[2, 3], 0.1, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "mean",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [7]);
                let sq = g.mul(xi, xi).unwrap();
                let y = g.mean(sq);
                let y = g.power(y, 1.5);
                finish(g, uniform(rng, &[7], 0.1, 1.0), y, rng)
            },
        },
        PrimitiveCase {
            name: "reshape",
            build: |rng| {
                let mut g = GraphBuilder::new();
                let xi = g.input("x", [2, 3]);
                let r = g.reshape(xi, [3, 2]).unwrap();
                let w = g.constant(uniform(rng, &[2, 2], -1.0, 1.0));
                let y = g.matmul(r, w).unwrap();
                let y = g.mul(y, y).unwrap();
                finish(g, uniform(rng, &[2, 3], -1.0, 1.0), y, rng)
            },
        },
    ]
}

/// Worst relative error of one primitive over `trials` random instances.
pub fn check_primitive(
    case: &PrimitiveCase,
    rng: &mut StreamRng,
    trials: usize,
    step: f64,
) -> Result<f64, GraphError> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let (graph, x) = (case.build)(rng);
        worst = worst.max(finite_diff_check(&graph, &[("x", &x)], "x", "y", step)?);
    }
    Ok(worst)
}
